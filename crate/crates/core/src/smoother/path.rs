//! Path-space estimator: each particle carries the running sum of the
//! functional along its ancestral line.

use serde::{Deserialize, Serialize};

use super::{weighted_columns, AdditiveFunctional, Blend};
use crate::filter::ParticleSet;

/// Per-particle running sums `R_n^(i)`, column-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStatistics {
    pub time: usize,
    pub columns: Vec<Vec<f64>>,
}

impl PathStatistics {
    pub fn init<F: AdditiveFunctional + ?Sized>(ps: &ParticleSet, func: &F, y0: f64) -> Self {
        let m = func.dim();
        let mut columns = vec![vec![0.0; ps.len()]; m];
        let mut s = vec![0.0; m];
        for (i, &x) in ps.positions.iter().enumerate() {
            func.initial(x, y0, &mut s);
            for l in 0..m {
                columns[l][i] = s[l];
            }
        }
        PathStatistics { time: ps.time, columns }
    }

    /// `R_n^(i) = a·R_{n-1}^(anc i) + b·s(X_{n-1}^(anc i), X_n^(i), y)`.
    pub fn update<F: AdditiveFunctional + ?Sized>(
        &self,
        prev: &ParticleSet,
        cur: &ParticleSet,
        func: &F,
        y: f64,
        blend: Blend,
    ) -> PathStatistics {
        let m = func.dim();
        let mut columns = vec![vec![0.0; cur.len()]; m];
        let mut s = vec![0.0; m];
        for (i, (&a, &x)) in cur.ancestors.iter().zip(&cur.positions).enumerate() {
            func.step(prev.positions[a], x, y, &mut s);
            for l in 0..m {
                columns[l][i] = blend.keep * self.columns[l][a] + blend.add * s[l];
            }
        }
        PathStatistics { time: cur.time, columns }
    }

    pub fn estimate(&self, cur: &ParticleSet) -> Vec<f64> {
        weighted_columns(&cur.weights, &self.columns)
    }
}
