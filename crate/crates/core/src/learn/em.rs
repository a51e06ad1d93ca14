use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filter::{bootstrap_step, init_particles, ResamplingPolicy};
use crate::model::{LinearGaussianModel, ModelParams, StateSpaceModel};
use crate::oracle::{exact_additive_functionals, kalman_smoother};
use crate::smoother::{fs_estimate, AdditiveFunctional, Blend, ForwardSmootherState};

/// Sufficient statistics of the stochastic volatility model:
/// `(x_{n-1} x_n, x_{n-1}², x_n², y_n² e^{-x_n})`, zero initial term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SvSuffStats;

impl AdditiveFunctional for SvSuffStats {
    fn dim(&self) -> usize {
        4
    }
    fn step(&self, x_prev: f64, x_cur: f64, y: f64, out: &mut [f64]) {
        out[0] = x_prev * x_cur;
        out[1] = x_prev * x_prev;
        out[2] = x_cur * x_cur;
        out[3] = y * y * (-x_cur).exp();
    }
    fn prev_quadratic(&self, x_cur: f64, y: f64, coeffs: &mut [[f64; 3]]) -> bool {
        coeffs[0] = [0.0, x_cur, 0.0];
        coeffs[1] = [0.0, 0.0, 1.0];
        coeffs[2] = [x_cur * x_cur, 0.0, 0.0];
        coeffs[3] = [y * y * (-x_cur).exp(), 0.0, 0.0];
        true
    }
}

/// The M-step: summary statistics to a new parameter vector.
pub trait MaximizationMap: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, z: &[f64], current: &ModelParams) -> Result<ModelParams>;
}

/// `Λ(z) = (z1/z2, z3 + (z1/z2)² z2 - 2 (z1/z2) z1, z4)` for `(phi, sigma2, beta2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SvLambda;

impl SvLambda {
    pub fn map(z: &[f64]) -> Result<[f64; 3]> {
        if z.len() != 4 || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::LambdaDomain(format!("need 4 finite statistics, got {z:?}")));
        }
        if !(z[1] > 0.0) {
            return Err(Error::LambdaDomain(format!("z2 = {} must be > 0", z[1])));
        }
        let phi = z[0] / z[1];
        let sigma2 = z[2] + phi * phi * z[1] - 2.0 * phi * z[0];
        let beta2 = z[3];
        if !(phi.abs() < 1.0) {
            return Err(Error::LambdaDomain(format!("phi = {phi} outside (-1, 1)")));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::LambdaDomain(format!("sigma2 = {sigma2} must be > 0")));
        }
        if !(beta2 > 0.0) {
            return Err(Error::LambdaDomain(format!("beta2 = {beta2} must be > 0")));
        }
        Ok([phi, sigma2, beta2])
    }
}

impl MaximizationMap for SvLambda {
    fn dim(&self) -> usize {
        4
    }
    fn apply(&self, z: &[f64], current: &ModelParams) -> Result<ModelParams> {
        let theta = Self::map(z)?;
        current
            .with_values(&theta)
            .map_err(|e| Error::LambdaDomain(e.to_string()))
    }
}

/// `phi = z3 / z1` on the linear-Gaussian benchmark statistics, other
/// parameters held fixed.
#[derive(Debug, Clone, Copy, Default)]
pub struct LgssmPhiLambda;

impl MaximizationMap for LgssmPhiLambda {
    fn dim(&self) -> usize {
        3
    }
    fn apply(&self, z: &[f64], current: &ModelParams) -> Result<ModelParams> {
        if !(z[0] > 0.0) || !z[2].is_finite() {
            return Err(Error::LambdaDomain(format!("z1 = {} must be > 0", z[0])));
        }
        let mut v = current.values();
        v[0] = z[2] / z[0];
        current.with_values(&v).map_err(|e| Error::LambdaDomain(e.to_string()))
    }
}

/// `n⁻¹ Ŝ_n` at θ from one filter pass with the forward smoother.
pub fn smc_estep<M, F, R>(
    model: &M,
    ys: &[f64],
    func: &F,
    particles: usize,
    policy: &ResamplingPolicy,
    exec: Execution,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    M: StateSpaceModel,
    F: AdditiveFunctional + ?Sized,
    R: Rng + ?Sized,
{
    let (&y0, rest) = ys
        .split_first()
        .ok_or_else(|| Error::InvalidInput("need at least one observation".into()))?;
    let mut ps = init_particles(model, y0, particles, rng)?;
    let mut st = ForwardSmootherState::init(&ps, func, y0);
    for &y in rest {
        let next = bootstrap_step(&ps, model, y, policy, rng)?;
        st = st.update(&ps, &next, model, func, y, Blend::SUM, exec)?;
        ps = next;
    }
    let n = rest.len().max(1) as f64;
    Ok(fs_estimate(&ps, &st).into_iter().map(|v| v / n).collect())
}

/// `θ_{i+1} = Λ(n⁻¹ Ŝ_n^{θ_i})` with an SMC E-step.
#[allow(clippy::too_many_arguments)]
pub fn batch_em_iteration<M, F, L, R>(
    model: &M,
    ys: &[f64],
    func: &F,
    lambda: &L,
    particles: usize,
    policy: &ResamplingPolicy,
    exec: Execution,
    rng: &mut R,
) -> Result<M>
where
    M: StateSpaceModel,
    F: AdditiveFunctional + ?Sized,
    L: MaximizationMap + ?Sized,
    R: Rng + ?Sized,
{
    let z = smc_estep(model, ys, func, particles, policy, exec, rng)?;
    model.with_params(&lambda.apply(&z, &model.params())?)
}

/// Same iteration with the E-step computed exactly by the RTS smoother.
pub fn batch_em_iteration_exact<L: MaximizationMap + ?Sized>(
    model: &LinearGaussianModel,
    ys: &[f64],
    lambda: &L,
) -> Result<LinearGaussianModel> {
    let n = (ys.len().max(2) - 1) as f64;
    let z: Vec<f64> = exact_additive_functionals(&kalman_smoother(model, ys)?)
        .iter()
        .map(|v| v / n)
        .collect();
    model.with_params(&lambda.apply(&z, &model.params())?)
}
