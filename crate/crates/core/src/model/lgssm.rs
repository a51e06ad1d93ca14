use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, normal_logpdf, Constraint, GaussianTransition, ModelParams, StateSpaceModel,
};
use crate::error::{Error, Result};

/// Scalar linear-Gaussian model
///
/// ```text
/// X_0 ~ N(0, sigma0²),  X_{k+1} = phi·X_k + sigma_v·V,  Y_k = c·X_k + sigma_w·W.
/// ```
///
/// θ = (phi, sigma_v, c, sigma_w); `sigma0` is a fixed structural constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianModel {
    pub phi: f64,
    pub sigma_v: f64,
    pub c: f64,
    pub sigma_w: f64,
    pub sigma0: f64,
}

impl LinearGaussianModel {
    pub fn new(phi: f64, sigma_v: f64, c: f64, sigma_w: f64, sigma0: f64) -> Result<Self> {
        let m = LinearGaussianModel {
            phi,
            sigma_v,
            c,
            sigma_w,
            sigma0,
        };
        m.validate()?;
        Ok(m)
    }

    /// Model at θ with `sigma0` set to the stationary standard deviation
    /// `sigma_v / sqrt(1 - phi²)` (requires |phi| < 1).
    pub fn stationary(phi: f64, sigma_v: f64, c: f64, sigma_w: f64) -> Result<Self> {
        if phi.abs() >= 1.0 {
            return Err(Error::domain("phi", phi, "stationary start needs |phi| < 1"));
        }
        Self::new(phi, sigma_v, c, sigma_w, sigma_v / (1.0 - phi * phi).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(Error::domain("sigma0", self.sigma0, "must be finite and > 0"));
        }
        Ok(())
    }
}

impl StateSpaceModel for LinearGaussianModel {
    fn name(&self) -> &'static str {
        "lgssm"
    }

    fn params(&self) -> ModelParams {
        ModelParams::new(vec![
            ModelParams::entry("phi", self.phi, Constraint::Unconstrained),
            ModelParams::entry("sigma_v", self.sigma_v, Constraint::Positive),
            ModelParams::entry("c", self.c, Constraint::Unconstrained),
            ModelParams::entry("sigma_w", self.sigma_w, Constraint::Positive),
        ])
    }

    fn with_params(&self, params: &ModelParams) -> Result<Self> {
        let v = self.params().with_values(&params.values())?.values();
        Self::new(v[0], v[1], v[2], v[3], self.sigma0)
    }

    /// Zero noise scales are allowed for simulation (deterministic chains).
    fn check_simulable(&self) -> Result<()> {
        for (name, v) in [("phi", self.phi), ("c", self.c)] {
            check_finite(name, v)?;
        }
        for (name, v) in [
            ("sigma_v", self.sigma_v),
            ("sigma_w", self.sigma_w),
            ("sigma0", self.sigma0),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(name, v, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.sigma0 * z
    }

    fn sample_transition<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.phi * x + self.sigma_v * z
    }

    fn sample_observation<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.c * x + self.sigma_w * z
    }

    fn log_initial(&self, x: f64) -> f64 {
        normal_logpdf(x, 0.0, self.sigma0)
    }

    fn log_transition(&self, x: f64, x_next: f64) -> f64 {
        normal_logpdf(x_next, self.phi * x, self.sigma_v)
    }

    fn log_observation(&self, y: f64, x: f64) -> f64 {
        normal_logpdf(y, self.c * x, self.sigma_w)
    }

    fn grad_log_initial(&self, _x: f64, out: &mut [f64]) {
        // sigma0 is not part of θ.
        out.fill(0.0);
    }

    fn grad_log_transition(&self, x: f64, x_next: f64, out: &mut [f64]) {
        let s2 = self.sigma_v * self.sigma_v;
        let r = x_next - self.phi * x;
        out[0] = r * x / s2;
        out[1] = -1.0 / self.sigma_v + r * r / (s2 * self.sigma_v);
        out[2] = 0.0;
        out[3] = 0.0;
    }

    fn grad_log_observation(&self, y: f64, x: f64, out: &mut [f64]) {
        let s2 = self.sigma_w * self.sigma_w;
        let r = y - self.c * x;
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = r * x / s2;
        out[3] = -1.0 / self.sigma_w + r * r / (s2 * self.sigma_w);
    }

    fn gaussian_transition(&self) -> Option<GaussianTransition> {
        Some(GaussianTransition {
            coef: self.phi,
            sd: self.sigma_v,
        })
    }

    fn grad_step_prev_quadratic(&self, x_cur: f64, y: f64, coeffs: &mut [[f64; 3]]) -> bool {
        let (phi, sv) = (self.phi, self.sigma_v);
        let s2 = sv * sv;
        let s3 = s2 * sv;
        // (x' - phi x) x / s2
        coeffs[0] = [0.0, x_cur / s2, -phi / s2];
        // -1/sv + (x'² - 2 phi x' x + phi² x²) / s3
        coeffs[1] = [-1.0 / sv + x_cur * x_cur / s3, -2.0 * phi * x_cur / s3, phi * phi / s3];
        let sw2 = self.sigma_w * self.sigma_w;
        let r = y - self.c * x_cur;
        coeffs[2] = [r * x_cur / sw2, 0.0, 0.0];
        coeffs[3] = [-1.0 / self.sigma_w + r * r / (sw2 * self.sigma_w), 0.0, 0.0];
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{grad_step_log_density, simulate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transition_density_at_mode() {
        let m = LinearGaussianModel::new(0.7, 0.1, 1.0, 1.0, 1.0).unwrap();
        let v = m.log_transition(2.0, 1.4);
        assert!((v.exp() - 3.989_422_804_014_327).abs() < 1e-12);
        assert!((v + (0.1 * (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-14);
    }

    #[test]
    fn structural_zero_gradients() {
        let m = LinearGaussianModel::new(0.7, 0.3, 1.2, 0.9, 1.0).unwrap();
        let mut g = [0.0; 4];
        m.grad_log_transition(1.5, 0.7 * 1.5, &mut g);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[2], 0.0);
        assert_eq!(g[3], 0.0);
        grad_step_log_density(&m, 0.2, -0.4, 1.1, &mut g);
        let mut obs = [0.0; 4];
        m.grad_log_observation(1.1, -0.4, &mut obs);
        assert_eq!(g[3], obs[3]);
    }

    #[test]
    fn noise_free_chain_stays_at_zero() {
        let m = LinearGaussianModel {
            phi: 0.9,
            sigma_v: 0.0,
            c: 1.0,
            sigma_w: 1.0,
            sigma0: 0.0,
        };
        let t = simulate(&m, 25, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(t.states.iter().all(|&x| x == 0.0));
        assert!(LinearGaussianModel::new(0.9, 0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn quadratic_form_matches_pointwise_gradient() {
        let m = LinearGaussianModel::new(0.6, 0.4, 0.8, 1.3, 1.0).unwrap();
        let mut coeffs = [[0.0; 3]; 4];
        assert!(m.grad_step_prev_quadratic(0.35, -0.2, &mut coeffs));
        for &xp in &[-1.3, 0.0, 0.4, 2.2] {
            let mut g = [0.0; 4];
            grad_step_log_density(&m, xp, 0.35, -0.2, &mut g);
            for l in 0..4 {
                let q = coeffs[l][0] + coeffs[l][1] * xp + coeffs[l][2] * xp * xp;
                assert!((q - g[l]).abs() < 1e-12, "component {l}: {q} vs {}", g[l]);
            }
        }
    }

    #[test]
    fn with_params_keeps_sigma0() {
        let m = LinearGaussianModel::new(0.7, 0.3, 1.2, 0.9, 2.5).unwrap();
        let p = m.params().with_values(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let m2 = m.with_params(&p).unwrap();
        assert_eq!(m2.sigma0, 2.5);
        assert_eq!(m2.phi, 0.1);
    }
}
