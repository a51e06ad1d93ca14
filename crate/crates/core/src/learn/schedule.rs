use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step sizes `γ_n`, `n >= 1`: `constant_gamma` for `n <= constant_steps`,
/// then `(n - shift)^(-alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub constant_steps: usize,
    pub constant_gamma: f64,
    pub alpha: f64,
    pub shift: f64,
}

impl StepSchedule {
    pub fn new(constant_steps: usize, constant_gamma: f64, alpha: f64, shift: f64) -> Result<Self> {
        let s = StepSchedule {
            constant_steps,
            constant_gamma,
            alpha,
            shift,
        };
        s.validate()?;
        Ok(s)
    }

    /// `γ_n = n^(-alpha)`.
    pub fn power(alpha: f64) -> Result<Self> {
        Self::new(0, 0.0, alpha, 0.0)
    }

    /// `γ_n = gamma` forever (0 allowed, for frozen-parameter runs).
    pub fn constant(gamma: f64) -> Result<Self> {
        Self::new(usize::MAX, gamma, 1.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.5 && self.alpha <= 1.0) {
            return Err(Error::domain("alpha", self.alpha, "must lie in (0.5, 1]"));
        }
        if !(0.0..=1.0).contains(&self.constant_gamma) {
            return Err(Error::domain("constant_gamma", self.constant_gamma, "must lie in [0, 1]"));
        }
        if self.constant_steps != usize::MAX && !(self.shift.is_finite() && self.shift < self.constant_steps as f64 + 1.0) {
            return Err(Error::domain(
                "shift",
                self.shift,
                "must be below the first decaying step index",
            ));
        }
        Ok(())
    }

    pub fn gamma(&self, n: usize) -> f64 {
        debug_assert!(n >= 1);
        if n <= self.constant_steps {
            self.constant_gamma
        } else {
            (n as f64 - self.shift).powf(-self.alpha)
        }
    }
}

/// `γ_n² + Σ_{i=1}^{n-1} (n+1-i) γ_i² Π_{k=i+1}^{n} (1-γ_k)²` for `γ_k = gammas[k-1]`.
pub fn step_discount_sum_with(gammas: &[f64]) -> f64 {
    let (a, b) = discount_coefficients(gammas);
    a + b
}

/// The two coefficient sums of the discounted path-space variance:
/// `Σ_{k=1}^{n} γ_k² P_k` and `Σ_{i=1}^{n-1} (n-i) γ_i² P_i`, with
/// `P_i = Π_{k=i+1}^{n} (1-γ_k)²`. One backward pass.
pub fn discount_coefficients(gammas: &[f64]) -> (f64, f64) {
    let n = gammas.len();
    let mut product = 1.0;
    let (mut first, mut second) = (0.0, 0.0);
    for i in (1..=n).rev() {
        let g2 = gammas[i - 1] * gammas[i - 1] * product;
        first += g2;
        second += (n - i) as f64 * g2;
        product *= (1.0 - gammas[i - 1]).powi(2);
    }
    (first, second)
}

/// The step-discount sum for `γ_k = k^(-alpha)`, in O(n).
pub fn step_discount_sum(alpha: f64, n: usize) -> Result<f64> {
    StepSchedule::power(alpha)?;
    if n == 0 {
        return Err(Error::InvalidInput("step_discount_sum needs n >= 1".into()));
    }
    let gammas: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-alpha)).collect();
    Ok(step_discount_sum_with(&gammas))
}

/// The step-discount sum for every `n` in `1..=n_max` (forward recursion on
/// `A_n = Σ γ_i² P_i` and `B_n = Σ i γ_i² P_i`; value `(n+1)A_n - B_n`).
pub fn step_discount_sums(alpha: f64, n_max: usize) -> Result<Vec<f64>> {
    StepSchedule::power(alpha)?;
    let (mut a, mut b) = (0.0, 0.0);
    Ok((1..=n_max)
        .map(|n| {
            let g = (n as f64).powf(-alpha);
            let d = (1.0 - g) * (1.0 - g);
            a = d * a + g * g;
            b = d * b + n as f64 * g * g;
            (n as f64 + 1.0) * a - b
        })
        .collect())
}
