use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LinearGaussianModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanFilterOutput {
    /// `m_{k|k-1}, P_{k|k-1}`; entry 0 is the prior.
    pub predicted: Vec<GaussianBelief>,
    pub filtered: Vec<GaussianBelief>,
    /// `log p(y_{0:n})`.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanSmootherOutput {
    pub filtered: Vec<GaussianBelief>,
    pub smoothed: Vec<GaussianBelief>,
    /// `lag_one[k] = Cov(X_k, X_{k-1} | y_{0:n})` for `k >= 1`; entry 0 is 0.
    pub lag_one: Vec<f64>,
    pub log_likelihood: f64,
}

impl KalmanSmootherOutput {
    pub fn horizon(&self) -> usize {
        self.smoothed.len() - 1
    }
}

fn strictly_positive(model: &LinearGaussianModel) -> Result<()> {
    model.validate()
}

pub fn kalman_filter(model: &LinearGaussianModel, ys: &[f64]) -> Result<KalmanFilterOutput> {
    strictly_positive(model)?;
    if ys.is_empty() {
        return Err(Error::InvalidInput("need at least one observation".into()));
    }
    let (phi, q, c, r) = (
        model.phi,
        model.sigma_v * model.sigma_v,
        model.c,
        model.sigma_w * model.sigma_w,
    );
    let mut predicted = Vec::with_capacity(ys.len());
    let mut filtered = Vec::with_capacity(ys.len());
    let mut pred = GaussianBelief {
        mean: 0.0,
        variance: model.sigma0 * model.sigma0,
    };
    let mut log_likelihood = 0.0;
    for (k, &y) in ys.iter().enumerate() {
        if k > 0 {
            let prev: &GaussianBelief = filtered.last().expect("k > 0");
            pred = GaussianBelief {
                mean: phi * prev.mean,
                variance: phi * phi * prev.variance + q,
            };
        }
        let s = c * c * pred.variance + r;
        let gain = c * pred.variance / s;
        let innov = y - c * pred.mean;
        log_likelihood += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + innov * innov / s);
        predicted.push(pred);
        filtered.push(GaussianBelief {
            mean: pred.mean + gain * innov,
            variance: (1.0 - gain * c) * pred.variance,
        });
    }
    Ok(KalmanFilterOutput {
        predicted,
        filtered,
        log_likelihood,
    })
}

/// Rauch-Tung-Striebel pass with lag-one covariances `G_{k-1} P_{k|n}`.
pub fn rts_smoother(filter: &KalmanFilterOutput, model: &LinearGaussianModel) -> KalmanSmootherOutput {
    let n = filter.filtered.len() - 1;
    let mut smoothed = filter.filtered.clone();
    let mut lag_one = vec![0.0; n + 1];
    for k in (0..n).rev() {
        let f = filter.filtered[k];
        let p = filter.predicted[k + 1];
        let gain = f.variance * model.phi / p.variance;
        let next = smoothed[k + 1];
        smoothed[k] = GaussianBelief {
            mean: f.mean + gain * (next.mean - p.mean),
            variance: f.variance + gain * gain * (next.variance - p.variance),
        };
        lag_one[k + 1] = gain * next.variance;
    }
    KalmanSmootherOutput {
        filtered: filter.filtered.clone(),
        smoothed,
        lag_one,
        log_likelihood: filter.log_likelihood,
    }
}

/// Filter plus smoother in one call.
pub fn kalman_smoother(model: &LinearGaussianModel, ys: &[f64]) -> Result<KalmanSmootherOutput> {
    Ok(rts_smoother(&kalman_filter(model, ys)?, model))
}

/// Exact `E[Σ x_{k-1}² | y]`, `E[Σ x_{k-1} | y]`, `E[Σ x_{k-1} x_k | y]`.
pub fn exact_additive_functionals(out: &KalmanSmootherOutput) -> [f64; 3] {
    let sm = &out.smoothed;
    let mut s = [0.0; 3];
    for k in 1..sm.len() {
        let (a, b) = (sm[k - 1], sm[k]);
        s[0] += a.variance + a.mean * a.mean;
        s[1] += a.mean;
        s[2] += out.lag_one[k] + b.mean * a.mean;
    }
    s
}

/// Exact benchmark functionals for every prefix `y_{0:t}` with `t` in
/// `checkpoints`.
pub fn exact_at_checkpoints(
    model: &LinearGaussianModel,
    ys: &[f64],
    checkpoints: &[usize],
) -> Result<Vec<[f64; 3]>> {
    let filter = kalman_filter(model, ys)?;
    checkpoints
        .iter()
        .map(|&t| {
            if t >= ys.len() {
                return Err(Error::InvalidInput(format!("checkpoint {t} beyond horizon {}", ys.len() - 1)));
            }
            let prefix = KalmanFilterOutput {
                predicted: filter.predicted[..=t].to_vec(),
                filtered: filter.filtered[..=t].to_vec(),
                log_likelihood: 0.0,
            };
            Ok(exact_additive_functionals(&rts_smoother(&prefix, model)))
        })
        .collect()
}
