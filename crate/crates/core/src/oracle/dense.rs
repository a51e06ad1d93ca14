use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::LinearGaussianModel;

/// Largest horizon accepted by [`dense_joint_gaussian`].
pub const DENSE_MAX_HORIZON: usize = 2000;

/// Posterior of `X_{0:n} | y_{0:n}` in full.
#[derive(Debug, Clone)]
pub struct DensePosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub log_likelihood: f64,
}

impl DensePosterior {
    /// `Cov(X_k, X_{k-1} | y)`.
    pub fn lag_one(&self, k: usize) -> f64 {
        self.covariance[(k, k - 1)]
    }
}

/// Assembles the tridiagonal prior precision plus the diagonal observation
/// precision and solves by Cholesky.
pub fn dense_joint_gaussian(model: &LinearGaussianModel, ys: &[f64]) -> Result<DensePosterior> {
    model.validate()?;
    if ys.is_empty() {
        return Err(Error::InvalidInput("need at least one observation".into()));
    }
    let n = ys.len() - 1;
    if n > DENSE_MAX_HORIZON {
        return Err(Error::Capacity {
            what: "dense joint Gaussian horizon",
            requested: n as f64,
            limit: DENSE_MAX_HORIZON as f64,
        });
    }
    let dim = n + 1;
    let (phi, q, c, r) = (
        model.phi,
        model.sigma_v * model.sigma_v,
        model.c,
        model.sigma_w * model.sigma_w,
    );
    let p0 = model.sigma0 * model.sigma0;

    let mut prior = DMatrix::<f64>::zeros(dim, dim);
    prior[(0, 0)] = 1.0 / p0;
    for k in 1..dim {
        prior[(k, k)] += 1.0 / q;
        prior[(k - 1, k - 1)] += phi * phi / q;
        prior[(k, k - 1)] = -phi / q;
        prior[(k - 1, k)] = -phi / q;
    }
    let mut precision = prior.clone();
    for k in 0..dim {
        precision[(k, k)] += c * c / r;
    }
    let rhs = DVector::from_iterator(dim, ys.iter().map(|y| c * y / r));

    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?;
    let mean = chol.solve(&rhs);
    let covariance = chol.inverse();

    // log p(y) = log N(y; 0, C Σ Cᵀ + R I) via the precision identities.
    let log_det_post: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_det_prior = -(p0.ln() + n as f64 * q.ln());
    let yy: f64 = ys.iter().map(|y| y * y).sum();
    let log_likelihood = -0.5
        * (dim as f64 * (2.0 * std::f64::consts::PI * r).ln() + yy / r - rhs.dot(&mean) + log_det_post
            - log_det_prior);

    Ok(DensePosterior {
        mean,
        covariance,
        log_likelihood,
    })
}
