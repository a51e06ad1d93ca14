//! State-space models with scalar hidden state.
//!
//! A model is an immutable value carrying its parameter vector θ. Estimation
//! code moves between parameter values with [`StateSpaceModel::with_params`],
//! which re-validates the constraints.
//!
//! States and observations are `f64`. The finite-state HMM encodes state and
//! symbol indices as integral floats.

mod hmm;
mod lgssm;
mod params;
mod sv;

pub use hmm::FiniteHmm;
pub use lgssm::LinearGaussianModel;
pub use params::{Constraint, ModelParams, ParamEntry};
pub use sv::StochasticVolatilityModel;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `x' ~ N(coef · x, sd²)`: enables the vectorised backward-kernel path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianTransition {
    pub coef: f64,
    pub sd: f64,
}

pub trait StateSpaceModel: Send + Sync {
    fn name(&self) -> &'static str;

    /// Current parameter vector θ with its constraint descriptors.
    fn params(&self) -> ModelParams;

    /// Same model structure at a different θ.
    fn with_params(&self, params: &ModelParams) -> Result<Self>
    where
        Self: Sized;

    /// Checks that trajectories can be drawn. Defaults to the full parameter
    /// constraints; models may accept degenerate (noise-free) settings here.
    fn check_simulable(&self) -> Result<()> {
        self.params().validate()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;
    fn sample_transition<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64;
    fn sample_observation<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64;

    fn log_initial(&self, x: f64) -> f64;
    fn log_transition(&self, x: f64, x_next: f64) -> f64;
    fn log_observation(&self, y: f64, x: f64) -> f64;

    /// `out[j] = log f(x_next | prev[j])`.
    fn log_transition_row(&self, prev: &[f64], x_next: f64, out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(prev) {
            *o = self.log_transition(x, x_next);
        }
    }

    /// θ-gradients, written into `out` (length = number of parameters).
    fn grad_log_initial(&self, x: f64, out: &mut [f64]);
    fn grad_log_transition(&self, x: f64, x_next: f64, out: &mut [f64]);
    fn grad_log_observation(&self, y: f64, x: f64, out: &mut [f64]);

    fn gaussian_transition(&self) -> Option<GaussianTransition> {
        None
    }

    /// When the per-step score summand is a polynomial of degree at most two
    /// in the previous state, writes `coeffs[l] = [c0, c1, c2]` so that
    /// component `l` equals `c0 + c1·x_prev + c2·x_prev²`, and returns true.
    fn grad_step_prev_quadratic(&self, _x_cur: f64, _y: f64, _coeffs: &mut [[f64; 3]]) -> bool {
        false
    }

    fn param_count(&self) -> usize {
        self.params().len()
    }
}

/// Per-step score summand `∇ log f(x_k | x_{k-1}) + ∇ log g(y_k | x_k)`.
pub fn grad_step_log_density<M: StateSpaceModel>(
    model: &M,
    x_prev: f64,
    x_cur: f64,
    y: f64,
    out: &mut [f64],
) {
    let d = out.len();
    let mut tmp = vec![0.0; d];
    model.grad_log_transition(x_prev, x_cur, out);
    model.grad_log_observation(y, x_cur, &mut tmp);
    for (o, t) in out.iter_mut().zip(&tmp) {
        *o += t;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<f64>,
    pub observations: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Draws `x_{0:n}, y_{0:n}` from the model's joint law.
pub fn simulate<M: StateSpaceModel, R: Rng + ?Sized>(
    model: &M,
    n: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    model.check_simulable()?;
    let mut states = Vec::with_capacity(n + 1);
    let mut observations = Vec::with_capacity(n + 1);
    let mut x = model.sample_initial(rng);
    for k in 0..=n {
        if k > 0 {
            x = model.sample_transition(x, rng);
        }
        states.push(x);
        observations.push(model.sample_observation(x, rng));
    }
    Ok(Trajectory {
        states,
        observations,
    })
}

/// Any of the bundled models; also the JSON model document
/// `{"model": "lgssm" | "sv" | "hmm", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "lowercase")]
pub enum AnyModel {
    Lgssm(LinearGaussianModel),
    Sv(StochasticVolatilityModel),
    Hmm(FiniteHmm),
}

impl AnyModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let model: AnyModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialisation is infallible")
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AnyModel::Lgssm(m) => m.validate(),
            AnyModel::Sv(m) => m.validate(),
            AnyModel::Hmm(m) => m.validate(),
        }
    }
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Lgssm($m) => $e,
            AnyModel::Sv($m) => $e,
            AnyModel::Hmm($m) => $e,
        }
    };
}

impl StateSpaceModel for AnyModel {
    fn name(&self) -> &'static str {
        dispatch!(self, m => m.name())
    }
    fn params(&self) -> ModelParams {
        dispatch!(self, m => m.params())
    }
    fn with_params(&self, params: &ModelParams) -> Result<Self> {
        Ok(match self {
            AnyModel::Lgssm(m) => AnyModel::Lgssm(m.with_params(params)?),
            AnyModel::Sv(m) => AnyModel::Sv(m.with_params(params)?),
            AnyModel::Hmm(m) => AnyModel::Hmm(m.with_params(params)?),
        })
    }
    fn check_simulable(&self) -> Result<()> {
        dispatch!(self, m => m.check_simulable())
    }
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        dispatch!(self, m => m.sample_initial(rng))
    }
    fn sample_transition<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        dispatch!(self, m => m.sample_transition(x, rng))
    }
    fn sample_observation<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        dispatch!(self, m => m.sample_observation(x, rng))
    }
    fn log_initial(&self, x: f64) -> f64 {
        dispatch!(self, m => m.log_initial(x))
    }
    fn log_transition(&self, x: f64, x_next: f64) -> f64 {
        dispatch!(self, m => m.log_transition(x, x_next))
    }
    fn log_observation(&self, y: f64, x: f64) -> f64 {
        dispatch!(self, m => m.log_observation(y, x))
    }
    fn log_transition_row(&self, prev: &[f64], x_next: f64, out: &mut [f64]) {
        dispatch!(self, m => m.log_transition_row(prev, x_next, out))
    }
    fn grad_log_initial(&self, x: f64, out: &mut [f64]) {
        dispatch!(self, m => m.grad_log_initial(x, out))
    }
    fn grad_log_transition(&self, x: f64, x_next: f64, out: &mut [f64]) {
        dispatch!(self, m => m.grad_log_transition(x, x_next, out))
    }
    fn grad_log_observation(&self, y: f64, x: f64, out: &mut [f64]) {
        dispatch!(self, m => m.grad_log_observation(y, x, out))
    }
    fn gaussian_transition(&self) -> Option<GaussianTransition> {
        dispatch!(self, m => m.gaussian_transition())
    }
    fn grad_step_prev_quadratic(&self, x_cur: f64, y: f64, coeffs: &mut [[f64; 3]]) -> bool {
        dispatch!(self, m => m.grad_step_prev_quadratic(x_cur, y, coeffs))
    }
}

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub(crate) fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

pub(crate) fn check_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(name, value, "must be finite"))
    }
}
