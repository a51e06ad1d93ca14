//! Forward-only smoothing recursion.
//!
//! Each particle `X_n^(i)` carries a statistic vector `T_n^(i)` approximating
//! `E[S_n(X_{0:n}) | y_{0:n-1}, X_n = X_n^(i)]`. One update is
//!
//! ```text
//! T_n^(i) = Σ_j W_{n-1}^(j) f(X_n^(i) | X_{n-1}^(j)) [a·T_{n-1}^(j) + b·s(X_{n-1}^(j), X_n^(i), y_n)]
//!           / Σ_j W_{n-1}^(j) f(X_n^(i) | X_{n-1}^(j))
//! ```
//!
//! and the smoothed estimate is `Σ_i W_n^(i) T_n^(i)`. Cost is Θ(N²·m) per
//! step; the loop over target particles `i` runs under [`Execution`].
//!
//! Models with Gaussian AR(1) transitions use the vectorised kernel rows in
//! [`crate::kernel`]; other models evaluate `log f` through
//! [`StateSpaceModel::log_transition_row`] with per-row max subtraction.

use serde::{Deserialize, Serialize};

use super::{weighted_columns, AdditiveFunctional, Blend};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filter::ParticleSet;
use crate::kernel;
use crate::model::StateSpaceModel;

/// A kernel row whose maximum log term is below this is treated as underflow.
pub const BACKWARD_LOG_FLOOR: f64 = -700.0;

/// Particles handled per parallel task.
const BLOCK: usize = 16;

/// Per-particle statistics `T_n^(i)`, stored column-wise (one column per
/// statistic component).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSmootherState {
    pub time: usize,
    pub columns: Vec<Vec<f64>>,
}

impl ForwardSmootherState {
    /// `T_0^(i) = s_0(X_0^(i), y_0)`.
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
        ForwardSmootherState { time: ps.time, columns }
    }

    /// All-zero statistics (the usual start for estimation loops).
    pub fn zeros(ps: &ParticleSet, dim: usize) -> Self {
        ForwardSmootherState {
            time: ps.time,
            columns: vec![vec![0.0; ps.len()]; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn particles(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// `T^(i)` as a vector.
    pub fn statistic(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Advances to time `cur.time` (see module docs).
    #[allow(clippy::too_many_arguments)]
    pub fn update<M, F>(
        &self,
        prev: &ParticleSet,
        cur: &ParticleSet,
        model: &M,
        func: &F,
        y: f64,
        blend: Blend,
        exec: Execution,
    ) -> Result<ForwardSmootherState>
    where
        M: StateSpaceModel,
        F: AdditiveFunctional + ?Sized,
    {
        fs_update(prev, self, cur, model, func, y, blend, exec)
    }
}

/// Shared, read-only inputs of one update.
struct StepContext<'a, M: ?Sized, F: ?Sized> {
    model: &'a M,
    func: &'a F,
    y: f64,
    blend: Blend,
    step: usize,
    prev_x: &'a [f64],
    prev_x2: Vec<f64>,
    prev_log_w: Vec<f64>,
    prev_t: &'a [Vec<f64>],
    cur_w: &'a [f64],
    gaussian: Option<GaussianRows>,
}

struct GaussianRows {
    means: Vec<f64>,
    scale: Vec<f64>,
    inv_two_var: f64,
}

/// Below this a Gaussian row sum is recomputed in log space.
const ROW_SUM_FLOOR: f64 = 1e-280;

struct Scratch {
    kernel: Vec<f64>,
    logs: Vec<f64>,
    s: Vec<f64>,
    coeffs: Vec<[f64; 3]>,
}

impl<M, F> StepContext<'_, M, F>
where
    M: StateSpaceModel,
    F: AdditiveFunctional + ?Sized,
{
    /// Fills `scratch.kernel` with unnormalised backward weights for target
    /// `x`; returns their sum, or `None` when the row is degenerate. The
    /// Gaussian path also returns the row's first and second moments in
    /// `x_prev`.
    fn kernel_row(&self, x: f64, scratch: &mut Scratch) -> Option<(f64, Option<[f64; 2]>)> {
        if let Some(g) = &self.gaussian {
            let [total, m1, m2] = kernel::gaussian_row_moments(
                x,
                &g.means,
                &g.scale,
                g.inv_two_var,
                self.prev_x,
                &self.prev_x2,
                &mut scratch.kernel,
            );
            if total > ROW_SUM_FLOOR && total.is_finite() {
                return Some((total, Some([m1, m2])));
            }
        }
        self.model.log_transition_row(self.prev_x, x, &mut scratch.logs);
        for (l, lw) in scratch.logs.iter_mut().zip(&self.prev_log_w) {
            *l += lw;
        }
        let max = scratch.logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max >= BACKWARD_LOG_FLOOR) || !max.is_finite() {
            scratch.logs[0] = max;
            return None;
        }
        for (k, l) in scratch.kernel.iter_mut().zip(&scratch.logs) {
            *k = (l - max).exp();
        }
        Some((kernel::sum(&scratch.kernel), None))
    }

    fn particle(&self, i: usize, x: f64, scratch: &mut Scratch, out: &mut [f64]) -> Result<()> {
        let (total, moments) = match self.kernel_row(x, scratch) {
            Some(t) => t,
            // A zero-weight target never contributes to any later estimate.
            None if self.cur_w[i] == 0.0 => {
                out.fill(0.0);
                return Ok(());
            }
            None => {
                return Err(Error::DegenerateBackwardKernel {
                    step: self.step,
                    particle: i,
                    max_log_term: scratch.logs[0],
                })
            }
        };
        let m = out.len();
        let k = &scratch.kernel;
        let Blend { keep, add } = self.blend;
        if self.func.prev_quadratic(x, self.y, &mut scratch.coeffs) {
            let [m1, m2] = moments.unwrap_or_else(|| [kernel::dot(k, self.prev_x), kernel::dot(k, &self.prev_x2)]);
            for l in 0..m {
                let [c0, c1, c2] = scratch.coeffs[l];
                let s_part = c0 * total + c1 * m1 + c2 * m2;
                let t_part = if keep == 0.0 { 0.0 } else { kernel::dot(k, &self.prev_t[l]) };
                out[l] = (keep * t_part + add * s_part) / total;
            }
        } else {
            let mut s_acc = vec![0.0; m];
            for (j, &kj) in k.iter().enumerate() {
                if kj == 0.0 {
                    continue;
                }
                self.func.step(self.prev_x[j], x, self.y, &mut scratch.s);
                for l in 0..m {
                    s_acc[l] += kj * scratch.s[l];
                }
            }
            for l in 0..m {
                let t_part = if keep == 0.0 { 0.0 } else { kernel::dot(k, &self.prev_t[l]) };
                out[l] = (keep * t_part + add * s_acc[l]) / total;
            }
        }
        Ok(())
    }
}

/// One step of the forward smoothing recursion from `(prev, prev_state)` to
/// the particle set `cur`, with the backward kernel evaluated under `model`.
#[allow(clippy::too_many_arguments)]
pub fn fs_update<M, F>(
    prev: &ParticleSet,
    prev_state: &ForwardSmootherState,
    cur: &ParticleSet,
    model: &M,
    func: &F,
    y: f64,
    blend: Blend,
    exec: Execution,
) -> Result<ForwardSmootherState>
where
    M: StateSpaceModel,
    F: AdditiveFunctional + ?Sized,
{
    let n_prev = prev.len();
    let n = cur.len();
    let m = func.dim();
    if prev_state.particles() != n_prev || prev_state.dim() != m {
        return Err(Error::InvalidInput(format!(
            "smoother state is {}x{}, expected {}x{}",
            prev_state.dim(),
            prev_state.particles(),
            m,
            n_prev
        )));
    }

    let gaussian = model.gaussian_transition().filter(|g| g.sd > 0.0).map(|g| {
        let w_max = prev.weights.iter().copied().fold(0.0, f64::max);
        GaussianRows {
            means: prev.positions.iter().map(|x| g.coef * x).collect(),
            scale: prev.weights.iter().map(|w| w / w_max).collect(),
            inv_two_var: 0.5 / (g.sd * g.sd),
        }
    });
    let ctx = StepContext {
        model,
        func,
        y,
        blend,
        step: cur.time,
        prev_x: &prev.positions,
        prev_x2: prev.positions.iter().map(|x| x * x).collect(),
        prev_log_w: prev.weights.iter().map(|w| w.ln()).collect(),
        prev_t: &prev_state.columns,
        cur_w: &cur.weights,
        gaussian,
    };

    let blocks = n.div_ceil(BLOCK);
    let results: Vec<Result<Vec<f64>>> = exec.map_range(blocks, |b| {
        let start = b * BLOCK;
        let end = (start + BLOCK).min(n);
        let mut scratch = Scratch {
            kernel: vec![0.0; n_prev],
            logs: vec![0.0; n_prev],
            s: vec![0.0; m],
            coeffs: vec![[0.0; 3]; m],
        };
        let mut rows = vec![0.0; (end - start) * m];
        for (r, i) in (start..end).enumerate() {
            ctx.particle(i, cur.positions[i], &mut scratch, &mut rows[r * m..(r + 1) * m])?;
        }
        Ok(rows)
    });

    let mut columns = vec![vec![0.0; n]; m];
    for (b, block) in results.into_iter().enumerate() {
        let rows = block?;
        for (r, row) in rows.chunks_exact(m.max(1)).enumerate() {
            for l in 0..m {
                columns[l][b * BLOCK + r] = row[l];
            }
        }
    }
    Ok(ForwardSmootherState {
        time: cur.time,
        columns,
    })
}

/// `Σ_i W^(i) T^(i)`.
pub fn fs_estimate(cur: &ParticleSet, state: &ForwardSmootherState) -> Vec<f64> {
    debug_assert_eq!(cur.len(), state.particles());
    weighted_columns(&cur.weights, &state.columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{bootstrap_step, init_particles, ResamplingPolicy};
    use crate::model::{simulate, FiniteHmm, LinearGaussianModel};
    use crate::smoother::{ConstantFunctional, FnFunctional, LgssmBenchmark};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lgssm() -> LinearGaussianModel {
        LinearGaussianModel::new(0.8, 0.5, 1.0, 1.0, 1.0).unwrap()
    }

    fn run<F: AdditiveFunctional>(
        model: &LinearGaussianModel,
        func: &F,
        n: usize,
        steps: usize,
        blend: Blend,
        seed: u64,
    ) -> (Vec<ParticleSet>, Vec<ForwardSmootherState>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = simulate(model, steps, &mut rng).unwrap();
        let ys = &traj.observations;
        let mut ps = vec![init_particles(model, ys[0], n, &mut rng).unwrap()];
        let mut st = vec![ForwardSmootherState::init(&ps[0], func, ys[0])];
        for k in 1..=steps {
            let next = bootstrap_step(&ps[k - 1], model, ys[k], &ResamplingPolicy::default(), &mut rng).unwrap();
            let s = st[k - 1]
                .update(&ps[k - 1], &next, model, func, ys[k], blend, Execution::default())
                .unwrap();
            ps.push(next);
            st.push(s);
        }
        (ps, st)
    }

    #[test]
    fn single_particle_accumulates_plain_sum() {
        let model = lgssm();
        let func = FnFunctional::new(1, |a: f64, b: f64, y: f64, out: &mut [f64]| out[0] = a * b + y);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let traj = simulate(&model, 10, &mut rng).unwrap();
        let ys = &traj.observations;
        let mut ps = init_particles(&model, ys[0], 1, &mut rng).unwrap();
        let mut st = ForwardSmootherState::init(&ps, &func, ys[0]);
        let mut expect = 0.0;
        for k in 1..=10 {
            let next = bootstrap_step(&ps, &model, ys[k], &ResamplingPolicy::default(), &mut rng).unwrap();
            expect += ps.positions[0] * next.positions[0] + ys[k];
            st = st.update(&ps, &next, &model, &func, ys[k], Blend::SUM, Execution::Sequential).unwrap();
            ps = next;
            assert!((st.columns[0][0] - expect).abs() <= 1e-13 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn constant_functional_gives_n_times_c() {
        let c = vec![0.25, -3.0];
        let (ps, st) = run(&lgssm(), &ConstantFunctional(c.clone()), 60, 40, Blend::SUM, 8);
        for (k, (p, s)) in ps.iter().zip(&st).enumerate() {
            for col in 0..2 {
                for &t in &s.columns[col] {
                    assert!((t - k as f64 * c[col]).abs() <= 1e-12 * (k as f64).max(1.0));
                }
            }
            let est = fs_estimate(p, s);
            assert!((est[1] - k as f64 * c[1]).abs() <= 1e-12 * (k as f64).max(1.0));
        }
    }

    #[test]
    fn zero_initial_term_gives_zero_estimate_at_time_zero() {
        let (ps, st) = run(&lgssm(), &LgssmBenchmark, 30, 0, Blend::SUM, 3);
        assert_eq!(fs_estimate(&ps[0], &st[0]), vec![0.0; 3]);
    }

    #[test]
    fn equal_statistics_average_to_themselves() {
        let (ps, _) = run(&lgssm(), &LgssmBenchmark, 30, 2, Blend::SUM, 3);
        let st = ForwardSmootherState {
            time: 2,
            columns: vec![vec![1.75; 30], vec![-0.5; 30]],
        };
        let est = fs_estimate(&ps[2], &st);
        assert!((est[0] - 1.75).abs() < 1e-14 && (est[1] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn discounted_constant_matches_closed_form() {
        // T_0 = 0 and s ≡ c give c·(1 - Π(1 - γ_k)); constant γ here.
        let gamma = 0.3;
        let (ps, st) = run(&lgssm(), &ConstantFunctional(vec![2.0]), 25, 12, Blend::discounted(gamma), 4);
        for (k, (p, s)) in ps.iter().zip(&st).enumerate() {
            let expect = 2.0 * (1.0 - (1.0 - gamma).powi(k as i32));
            assert!((fs_estimate(p, s)[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn convex_hull_bound() {
        // s = sin(x_prev · x_cur) ∈ [-1, 1], so each T_n lies in [-n, n].
        let func = FnFunctional::new(1, |a: f64, b: f64, _: f64, out: &mut [f64]| out[0] = (a * b).sin());
        let (_, st) = run(&lgssm(), &func, 40, 20, Blend::SUM, 12);
        for (k, s) in st.iter().enumerate() {
            assert!(s.columns[0].iter().all(|t| t.abs() <= k as f64 + 1e-12));
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let model = lgssm();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let traj = simulate(&model, 5, &mut rng).unwrap();
        let ys = &traj.observations;
        let p0 = init_particles(&model, ys[0], 100, &mut rng).unwrap();
        let p1 = bootstrap_step(&p0, &model, ys[1], &ResamplingPolicy::default(), &mut rng).unwrap();
        let s0 = ForwardSmootherState::zeros(&p0, 3);
        let a = s0.update(&p0, &p1, &model, &LgssmBenchmark, ys[1], Blend::SUM, Execution::Sequential).unwrap();
        let b = s0.update(&p0, &p1, &model, &LgssmBenchmark, ys[1], Blend::SUM, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generic_and_quadratic_paths_agree() {
        let model = lgssm();
        let generic = FnFunctional::new(3, |a: f64, b: f64, y: f64, out: &mut [f64]| {
            LgssmBenchmark.step(a, b, y, out)
        });
        let (ps, st_q) = run(&model, &LgssmBenchmark, 50, 15, Blend::SUM, 31);
        let (_, st_g) = run(&model, &generic, 50, 15, Blend::SUM, 31);
        let (a, b) = (fs_estimate(&ps[15], &st_q[15]), fs_estimate(&ps[15], &st_g[15]));
        for l in 0..3 {
            assert!((a[l] - b[l]).abs() <= 1e-12 * a[l].abs().max(1.0));
        }
    }

    #[test]
    fn impossible_transition_is_reported() {
        // Deterministic cycle 0 -> 1 -> 0: a target in state 0 cannot be reached
        // from a cloud concentrated on state 0.
        let hmm = FiniteHmm::new(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![1.0, 0.0],
        )
        .unwrap();
        let prev = ParticleSet {
            time: 0,
            positions: vec![0.0, 0.0],
            weights: vec![0.5, 0.5],
            ancestors: vec![0, 1],
            resampled: false,
            log_likelihood: 0.0,
        };
        let mut cur = prev.clone();
        cur.time = 1;
        let st = ForwardSmootherState::zeros(&prev, 1);
        let r = st.update(&prev, &cur, &hmm, &ConstantFunctional(vec![1.0]), 0.0, Blend::SUM, Execution::Sequential);
        assert!(matches!(r, Err(Error::DegenerateBackwardKernel { step: 1, .. })));
    }
}
