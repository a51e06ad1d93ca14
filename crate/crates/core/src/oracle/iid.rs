use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest mass of the posterior allowed outside the integration interval.
pub const TAIL_MASS_LIMIT: f64 = 1e-10;

const QUAD_TOL: f64 = 1e-12;

/// The three integrals in the path-space asymptotic variance for a model with
/// i.i.d. states `X_k ~ μ`, a repeated observation `y` and statistic `s(x_k)`.
///
/// With `π ∝ μ·g(y | ·)` and `s̃ = s - E_π[s]`:
/// `weighted = ∫ (π s̃)² / μ`, `ratio = ∫ π² / μ`, `spread = ∫ s̃² π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IidVarianceTerms {
    pub weighted: f64,
    pub ratio: f64,
    pub spread: f64,
    pub posterior_mean: f64,
}

impl IidVarianceTerms {
    /// Asymptotic variance of `√N (R̂_n - S_n)` for the plain sum over `n` steps.
    pub fn value(&self, n: usize) -> f64 {
        let n = n as f64;
        n * self.weighted + 0.5 * n * (n - 1.0) * self.ratio * self.spread
    }

    /// Same, for the discounted sum with coefficient sums
    /// `(Σ_k γ_k² Π_{i>k}(1-γ_i)², Σ_{k>=2} Σ_{i<k} γ_i² Π_{j>i}(1-γ_j)²)`.
    pub fn discounted_value(&self, coefficients: (f64, f64)) -> f64 {
        self.weighted * coefficients.0 + self.ratio * self.spread * coefficients.1
    }
}

const PANELS: usize = 16;

/// Clenshaw-Curtis on equal panels; fails on non-finite values or an error
/// estimate above `1e-8` relative.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, what: &str) -> Result<f64> {
    let bad = std::cell::Cell::new(false);
    let guarded = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            bad.set(true);
            0.0
        }
    };
    let h = (b - a) / PANELS as f64;
    let (mut integral, mut error) = (0.0, 0.0);
    for p in 0..PANELS {
        let lo = a + p as f64 * h;
        let out = quadrature::clenshaw_curtis::integrate(guarded, lo, lo + h, QUAD_TOL);
        integral += out.integral;
        error += out.error_estimate;
    }
    if bad.get() {
        return Err(Error::Numerical(format!("{what}: integrand not finite on [{a}, {b}]")));
    }
    if !integral.is_finite() || error > 1e-8 * integral.abs().max(1.0) {
        return Err(Error::Numerical(format!(
            "{what}: quadrature did not converge (estimate {integral}, error {error})"
        )));
    }
    Ok(integral)
}

/// Evaluates the integrals on `[lo, hi]`.
///
/// `mu` is the state density and `likelihood` is `x ↦ g(y | x)` at the fixed
/// observation. Fails if more than [`TAIL_MASS_LIMIT`] of the posterior lies
/// outside the interval (measured on flanks of the interval's width) or if
/// any quadrature fails.
pub fn iid_variance_terms(
    mu: impl Fn(f64) -> f64,
    likelihood: impl Fn(f64) -> f64,
    s: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
) -> Result<IidVarianceTerms> {
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("bad integration interval [{lo}, {hi}]")));
    }
    let joint = |x: f64| mu(x) * likelihood(x);
    let z = integrate(joint, lo, hi, "normaliser")?;
    if !(z > 0.0) {
        return Err(Error::Numerical("posterior normaliser is zero on the interval".into()));
    }
    let width = hi - lo;
    let tail = integrate(joint, lo - width, lo, "left tail")? + integrate(joint, hi, hi + width, "right tail")?;
    if tail / (z + tail) > TAIL_MASS_LIMIT {
        return Err(Error::Numerical(format!(
            "posterior tail mass {:.3e} outside [{lo}, {hi}] exceeds {TAIL_MASS_LIMIT:e}",
            tail / (z + tail)
        )));
    }
    let post = |x: f64| joint(x) / z;
    let mean = integrate(|x| post(x) * s(x), lo, hi, "posterior mean")?;
    let centred = |x: f64| s(x) - mean;
    // π²/μ = π·g/Z avoids dividing by a vanishing μ in the tails.
    let ratio_density = |x: f64| post(x) * likelihood(x) / z;
    Ok(IidVarianceTerms {
        weighted: integrate(|x| ratio_density(x) * centred(x).powi(2), lo, hi, "weighted term")?,
        ratio: integrate(ratio_density, lo, hi, "ratio term")?,
        spread: integrate(|x| post(x) * centred(x).powi(2), lo, hi, "spread term")?,
        posterior_mean: mean,
    })
}

/// Path-space asymptotic variance after `n` steps of the i.i.d. model.
pub fn iid_path_variance(
    mu: impl Fn(f64) -> f64,
    likelihood: impl Fn(f64) -> f64,
    s: impl Fn(f64) -> f64,
    n: usize,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    Ok(iid_variance_terms(mu, likelihood, s, lo, hi)?.value(n))
}
