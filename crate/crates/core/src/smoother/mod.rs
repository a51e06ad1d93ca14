//! Estimators of smoothed additive functionals
//! `E[ s_0(X_0, y_0) + Σ_{k=1}^n s_k(X_{k-1}, X_k, y_k) | y_{0:n} ]`.
//!
//! * [`forward`]: the O(N²) forward-only recursion on per-particle statistics.
//! * [`ffbs`]: the batch forward-filtering backward-smoothing pass, which
//!   gives the same number from a stored filter history.
//! * [`path`]: the O(N) path-space estimator carried along ancestral lines.
//! * [`fixed_lag`]: the path-space estimator with contributions frozen after
//!   a fixed lag.

pub mod ffbs;
pub mod fixed_lag;
pub mod forward;
pub mod path;

pub use ffbs::{ffbs_backward, FfbsOutput};
pub use fixed_lag::FixedLagState;
pub use forward::{fs_estimate, ForwardSmootherState};
pub use path::PathStatistics;


use serde::{Deserialize, Serialize};

/// Vector of per-step statistics `s = (s^1, …, s^m)` defining an additive
/// functional, plus an optional time-0 term.
pub trait AdditiveFunctional: Sync {
    fn dim(&self) -> usize;

    /// `out = s(x_prev, x_cur, y)`.
    fn step(&self, x_prev: f64, x_cur: f64, y: f64, out: &mut [f64]);

    /// `out = s_0(x_0, y_0)`; zero unless overridden.
    fn initial(&self, _x0: f64, _y0: f64, out: &mut [f64]) {
        out.fill(0.0);
    }

    /// If every component is `c0 + c1·x_prev + c2·x_prev²` for coefficients
    /// depending only on `(x_cur, y)`, writes them and returns true. The
    /// forward smoother then needs only three kernel moments per particle.
    fn prev_quadratic(&self, _x_cur: f64, _y: f64, _coeffs: &mut [[f64; 3]]) -> bool {
        false
    }
}

impl<F: AdditiveFunctional + ?Sized> AdditiveFunctional for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn step(&self, x_prev: f64, x_cur: f64, y: f64, out: &mut [f64]) {
        (**self).step(x_prev, x_cur, y, out)
    }
    fn initial(&self, x0: f64, y0: f64, out: &mut [f64]) {
        (**self).initial(x0, y0, out)
    }
    fn prev_quadratic(&self, x_cur: f64, y: f64, coeffs: &mut [[f64; 3]]) -> bool {
        (**self).prev_quadratic(x_cur, y, coeffs)
    }
}

/// Update coefficients `T ← keep·T + add·s`.
///
/// `(1, 1)` accumulates plain sums; `(1 - γ, γ)` gives the discounted running
/// averages used by online EM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blend {
    pub keep: f64,
    pub add: f64,
}

impl Blend {
    pub const SUM: Blend = Blend { keep: 1.0, add: 1.0 };

    pub fn discounted(gamma: f64) -> Blend {
        Blend {
            keep: 1.0 - gamma,
            add: gamma,
        }
    }
}

impl Default for Blend {
    fn default() -> Self {
        Blend::SUM
    }
}

/// Functional built from a closure.
pub struct FnFunctional<S, I = fn(f64, f64, &mut [f64])> {
    dim: usize,
    step: S,
    initial: Option<I>,
}

impl<S> FnFunctional<S>
where
    S: Fn(f64, f64, f64, &mut [f64]) + Sync,
{
    pub fn new(dim: usize, step: S) -> Self {
        FnFunctional {
            dim,
            step,
            initial: None,
        }
    }
}

impl<S, I> FnFunctional<S, I>
where
    S: Fn(f64, f64, f64, &mut [f64]) + Sync,
    I: Fn(f64, f64, &mut [f64]) + Sync,
{
    pub fn with_initial(dim: usize, step: S, initial: I) -> Self {
        FnFunctional {
            dim,
            step,
            initial: Some(initial),
        }
    }
}

impl<S, I> AdditiveFunctional for FnFunctional<S, I>
where
    S: Fn(f64, f64, f64, &mut [f64]) + Sync,
    I: Fn(f64, f64, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn step(&self, x_prev: f64, x_cur: f64, y: f64, out: &mut [f64]) {
        (self.step)(x_prev, x_cur, y, out)
    }
    fn initial(&self, x0: f64, y0: f64, out: &mut [f64]) {
        match &self.initial {
            Some(f) => f(x0, y0, out),
            None => out.fill(0.0),
        }
    }
}

/// `s ≡ c` at every step, zero initial term.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantFunctional(pub Vec<f64>);

impl AdditiveFunctional for ConstantFunctional {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn step(&self, _: f64, _: f64, _: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
    fn prev_quadratic(&self, _: f64, _: f64, coeffs: &mut [[f64; 3]]) -> bool {
        for (c, &v) in coeffs.iter_mut().zip(&self.0) {
            *c = [v, 0.0, 0.0];
        }
        true
    }
}

/// The three linear-Gaussian benchmark statistics
/// `(x_{k-1}², x_{k-1}, x_{k-1}·x_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LgssmBenchmark;

impl AdditiveFunctional for LgssmBenchmark {
    fn dim(&self) -> usize {
        3
    }
    fn step(&self, x_prev: f64, x_cur: f64, _y: f64, out: &mut [f64]) {
        out[0] = x_prev * x_prev;
        out[1] = x_prev;
        out[2] = x_prev * x_cur;
    }
    fn prev_quadratic(&self, x_cur: f64, _y: f64, coeffs: &mut [[f64; 3]]) -> bool {
        coeffs[0] = [0.0, 0.0, 1.0];
        coeffs[1] = [0.0, 1.0, 0.0];
        coeffs[2] = [0.0, x_cur, 0.0];
        true
    }
}

/// `s_k(x_{k-1}, x_k) = h(x_k)` for `k >= 1`, zero initial term.
pub struct CurrentStateFunctional<H>(pub H);

impl<H: Fn(f64) -> f64 + Sync> AdditiveFunctional for CurrentStateFunctional<H> {
    fn dim(&self) -> usize {
        1
    }
    fn step(&self, _x_prev: f64, x_cur: f64, _y: f64, out: &mut [f64]) {
        out[0] = (self.0)(x_cur);
    }
    fn prev_quadratic(&self, x_cur: f64, _y: f64, coeffs: &mut [[f64; 3]]) -> bool {
        coeffs[0] = [(self.0)(x_cur), 0.0, 0.0];
        true
    }
}

/// Estimator labels used in trace output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Fs,
    Ffbs,
    Path,
    FixedLag,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [EstimatorKind::Fs, EstimatorKind::Ffbs, EstimatorKind::Path, EstimatorKind::FixedLag];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Fs => "fs",
            EstimatorKind::Ffbs => "ffbs",
            EstimatorKind::Path => "path",
            EstimatorKind::FixedLag => "fixedlag",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| crate::Error::InvalidInput(format!("unknown estimator `{s}`")))
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const TRACE_CSV_HEADER: &str = "step,estimator,statistic_index,value";

/// Appends one `step,estimator,statistic_index,value` row per component.
pub fn write_trace_rows<W: std::io::Write>(
    out: &mut W,
    step: usize,
    estimator: EstimatorKind,
    values: &[f64],
) -> std::io::Result<()> {
    for (l, v) in values.iter().enumerate() {
        writeln!(out, "{step},{estimator},{l},{v}")?;
    }
    Ok(())
}

/// Weighted column sums `Σ_i w_i · columns[l][i]`.
pub(crate) fn weighted_columns(weights: &[f64], columns: &[Vec<f64>]) -> Vec<f64> {
    columns
        .iter()
        .map(|col| col.iter().zip(weights).map(|(c, w)| c * w).sum())
        .collect()
}
