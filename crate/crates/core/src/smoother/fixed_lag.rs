//! Fixed-lag approximation of the path-space estimator.
//!
//! The contribution of step `k` follows ancestral lines for `Δ` further steps
//! and is then frozen into a scalar accumulator using the weights at time
//! `k + Δ`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{weighted_columns, AdditiveFunctional, Blend};
use crate::filter::ParticleSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedLagState {
    pub time: usize,
    pub lag: usize,
    /// Sum of contributions already frozen.
    pub frozen: Vec<f64>,
    /// Per-particle contributions still following ancestral lines, oldest
    /// first; each block is `m` columns of length `N`.
    pub pending: VecDeque<Vec<Vec<f64>>>,
}

impl FixedLagState {
    pub fn init<F: AdditiveFunctional + ?Sized>(ps: &ParticleSet, func: &F, y0: f64, lag: usize) -> Self {
        let m = func.dim();
        let mut block = vec![vec![0.0; ps.len()]; m];
        let mut s = vec![0.0; m];
        for (i, &x) in ps.positions.iter().enumerate() {
            func.initial(x, y0, &mut s);
            for l in 0..m {
                block[l][i] = s[l];
            }
        }
        let mut state = FixedLagState {
            time: ps.time,
            lag,
            frozen: vec![0.0; m],
            pending: VecDeque::from([block]),
        };
        state.freeze_expired(ps);
        state
    }

    pub fn update<F: AdditiveFunctional + ?Sized>(
        &self,
        prev: &ParticleSet,
        cur: &ParticleSet,
        func: &F,
        y: f64,
        blend: Blend,
    ) -> FixedLagState {
        let m = func.dim();
        let anc = &cur.ancestors;
        let mut pending: VecDeque<Vec<Vec<f64>>> = self
            .pending
            .iter()
            .map(|block| {
                block
                    .iter()
                    .map(|col| anc.iter().map(|&a| blend.keep * col[a]).collect())
                    .collect()
            })
            .collect();
        let mut block = vec![vec![0.0; cur.len()]; m];
        let mut s = vec![0.0; m];
        for (i, (&a, &x)) in anc.iter().zip(&cur.positions).enumerate() {
            func.step(prev.positions[a], x, y, &mut s);
            for l in 0..m {
                block[l][i] = blend.add * s[l];
            }
        }
        pending.push_back(block);
        let mut next = FixedLagState {
            time: cur.time,
            lag: self.lag,
            frozen: self.frozen.iter().map(|f| blend.keep * f).collect(),
            pending,
        };
        next.freeze_expired(cur);
        next
    }

    /// Freezes blocks older than the lag; the oldest pending block is from
    /// step `time + 1 - pending.len()`.
    fn freeze_expired(&mut self, cur: &ParticleSet) {
        while self.pending.len() > self.lag {
            let block = self.pending.pop_front().expect("non-empty");
            for (f, v) in self.frozen.iter_mut().zip(weighted_columns(&cur.weights, &block)) {
                *f += v;
            }
        }
    }

    pub fn estimate(&self, cur: &ParticleSet) -> Vec<f64> {
        let mut est = self.frozen.clone();
        for block in &self.pending {
            for (e, v) in est.iter_mut().zip(weighted_columns(&cur.weights, block)) {
                *e += v;
            }
        }
        est
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{run_filter, ResamplingPolicy};
    use crate::model::{simulate, LinearGaussianModel};
    use crate::smoother::{LgssmBenchmark, PathStatistics};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn history(n: usize) -> (Vec<f64>, Vec<ParticleSet>) {
        let model = LinearGaussianModel::stationary(0.9, 0.4, 1.0, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let traj = simulate(&model, n, &mut rng).unwrap();
        let hist = run_filter(&model, &traj.observations, 40, &ResamplingPolicy::default(), &mut rng).unwrap();
        (traj.observations, hist)
    }

    #[test]
    fn long_lag_is_path_space() {
        let (ys, hist) = history(30);
        let mut fl = FixedLagState::init(&hist[0], &LgssmBenchmark, ys[0], 30);
        let mut ps = PathStatistics::init(&hist[0], &LgssmBenchmark, ys[0]);
        for k in 1..hist.len() {
            fl = fl.update(&hist[k - 1], &hist[k], &LgssmBenchmark, ys[k], Blend::SUM);
            ps = ps.update(&hist[k - 1], &hist[k], &LgssmBenchmark, ys[k], Blend::SUM);
            let (a, b) = (fl.estimate(&hist[k]), ps.estimate(&hist[k]));
            for l in 0..3 {
                assert!((a[l] - b[l]).abs() <= 1e-12 * b[l].abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_lag_is_filter_time_sum() {
        let (ys, hist) = history(25);
        let mut fl = FixedLagState::init(&hist[0], &LgssmBenchmark, ys[0], 0);
        let mut expect = [0.0; 3];
        let mut s = [0.0; 3];
        for k in 1..hist.len() {
            fl = fl.update(&hist[k - 1], &hist[k], &LgssmBenchmark, ys[k], Blend::SUM);
            assert!(fl.pending.is_empty());
            for i in 0..hist[k].len() {
                let a = hist[k].ancestors[i];
                LgssmBenchmark.step(hist[k - 1].positions[a], hist[k].positions[i], ys[k], &mut s);
                for l in 0..3 {
                    expect[l] += hist[k].weights[i] * s[l];
                }
            }
        }
        let est = fl.estimate(hist.last().unwrap());
        for l in 0..3 {
            assert!((est[l] - expect[l]).abs() <= 1e-12 * expect[l].abs().max(1.0));
        }
    }

    #[test]
    fn pending_blocks_bounded_by_lag() {
        let (ys, hist) = history(12);
        let mut fl = FixedLagState::init(&hist[0], &LgssmBenchmark, ys[0], 3);
        for k in 1..hist.len() {
            fl = fl.update(&hist[k - 1], &hist[k], &LgssmBenchmark, ys[k], Blend::SUM);
            assert!(fl.pending.len() <= 3);
        }
    }
}
