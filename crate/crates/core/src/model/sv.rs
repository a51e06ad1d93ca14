use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{normal_logpdf, Constraint, GaussianTransition, ModelParams, StateSpaceModel, LN_SQRT_2PI};
use crate::error::Result;

/// Stochastic volatility model
///
/// ```text
/// X_0 ~ N(0, sigma2 / (1 - phi²)),  X_{n+1} = phi·X_n + sigma·V,
/// Y_n = beta · exp(X_n / 2) · W.
/// ```
///
/// θ = (phi, sigma2, beta2) with |phi| < 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticVolatilityModel {
    pub phi: f64,
    pub sigma2: f64,
    pub beta2: f64,
}

impl StochasticVolatilityModel {
    pub fn new(phi: f64, sigma2: f64, beta2: f64) -> Result<Self> {
        let m = StochasticVolatilityModel { phi, sigma2, beta2 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma2 / (1.0 - self.phi * self.phi)
    }
}

impl StateSpaceModel for StochasticVolatilityModel {
    fn name(&self) -> &'static str {
        "sv"
    }

    fn params(&self) -> ModelParams {
        ModelParams::new(vec![
            ModelParams::entry("phi", self.phi, Constraint::Interval { lo: -1.0, hi: 1.0 }),
            ModelParams::entry("sigma2", self.sigma2, Constraint::Positive),
            ModelParams::entry("beta2", self.beta2, Constraint::Positive),
        ])
    }

    fn with_params(&self, params: &ModelParams) -> Result<Self> {
        let v = self.params().with_values(&params.values())?.values();
        Self::new(v[0], v[1], v[2])
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.stationary_variance().sqrt() * z
    }

    fn sample_transition<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.phi * x + self.sigma2.sqrt() * z
    }

    fn sample_observation<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.beta2.sqrt() * (0.5 * x).exp()) * z
    }

    fn log_initial(&self, x: f64) -> f64 {
        normal_logpdf(x, 0.0, self.stationary_variance().sqrt())
    }

    fn log_transition(&self, x: f64, x_next: f64) -> f64 {
        normal_logpdf(x_next, self.phi * x, self.sigma2.sqrt())
    }

    fn log_observation(&self, y: f64, x: f64) -> f64 {
        // N(y; 0, beta2 e^x)
        -LN_SQRT_2PI - 0.5 * (self.beta2.ln() + x) - 0.5 * y * y * (-x).exp() / self.beta2
    }

    fn grad_log_initial(&self, x: f64, out: &mut [f64]) {
        let one_m = 1.0 - self.phi * self.phi;
        let v = self.sigma2 / one_m;
        let dlog_dv = -0.5 / v + 0.5 * x * x / (v * v);
        out[0] = dlog_dv * 2.0 * self.phi * self.sigma2 / (one_m * one_m);
        out[1] = dlog_dv / one_m;
        out[2] = 0.0;
    }

    fn grad_log_transition(&self, x: f64, x_next: f64, out: &mut [f64]) {
        let r = x_next - self.phi * x;
        out[0] = r * x / self.sigma2;
        out[1] = -0.5 / self.sigma2 + 0.5 * r * r / (self.sigma2 * self.sigma2);
        out[2] = 0.0;
    }

    fn grad_log_observation(&self, y: f64, x: f64, out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = -0.5 / self.beta2 + 0.5 * y * y * (-x).exp() / (self.beta2 * self.beta2);
    }

    fn gaussian_transition(&self) -> Option<GaussianTransition> {
        Some(GaussianTransition {
            coef: self.phi,
            sd: self.sigma2.sqrt(),
        })
    }

    fn grad_step_prev_quadratic(&self, x_cur: f64, y: f64, coeffs: &mut [[f64; 3]]) -> bool {
        let (phi, s2) = (self.phi, self.sigma2);
        let s4 = s2 * s2;
        coeffs[0] = [0.0, x_cur / s2, -phi / s2];
        coeffs[1] = [
            -0.5 / s2 + 0.5 * x_cur * x_cur / s4,
            -phi * x_cur / s4,
            0.5 * phi * phi / s4,
        ];
        let b2 = self.beta2;
        coeffs[2] = [-0.5 / b2 + 0.5 * y * y * (-x_cur).exp() / (b2 * b2), 0.0, 0.0];
        true
    }
}
