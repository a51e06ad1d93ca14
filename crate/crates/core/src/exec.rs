//! Execution policy for the data-parallel inner loops.
//!
//! With the `parallel` feature (on by default) the O(N²) smoothing loops and
//! replicate sweeps fan out over rayon's global pool. Without it, or when
//! [`Execution::Sequential`] is requested, the same closures run in order on
//! the calling thread. Every per-item computation uses a fixed reduction
//! order, so both paths produce bit-identical results.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this policy actually runs on multiple threads in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Fills `out` chunk by chunk: `f(first_index, chunk)`.
    ///
    /// Chunks have length `chunk_len` except possibly the last one.
    pub fn fill_chunks<T, F>(self, out: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk_len = chunk_len.max(1);
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(c, chunk)| f(c * chunk_len, chunk));
            return;
        }
        for (c, chunk) in out.chunks_mut(chunk_len).enumerate() {
            f(c * chunk_len, chunk);
        }
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}
