//! Exact references: Kalman/RTS and dense Gaussian posteriors for the
//! linear-Gaussian model, forward-backward and path enumeration for finite
//! HMMs, and the asymptotic variance of the path-space estimator on an i.i.d.
//! model.

mod dense;
mod hmm;
mod iid;
mod kalman;

pub use dense::{dense_joint_gaussian, DensePosterior, DENSE_MAX_HORIZON};
pub use hmm::{hmm_enumerate, hmm_exact_smoothed_functional, hmm_forward_backward, HmmSmoothing, ENUMERATION_LIMIT};
pub use iid::{iid_path_variance, iid_variance_terms, IidVarianceTerms, TAIL_MASS_LIMIT};
pub use kalman::{
    exact_additive_functionals, exact_at_checkpoints, kalman_filter, kalman_smoother, rts_smoother,
    GaussianBelief, KalmanFilterOutput, KalmanSmootherOutput,
};

use serde::{Deserialize, Serialize};

/// 64-bit FNV-1a, used to key oracle records.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hash of an observation record (bit patterns, so `-0.0 != 0.0`).
pub fn data_hash(ys: &[f64]) -> String {
    let bytes: Vec<u8> = ys.iter().flat_map(|y| y.to_bits().to_le_bytes()).collect();
    format!("{:016x}", fnv1a(&bytes))
}

/// An oracle value keyed by model, θ and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub oracle: String,
    pub model_hash: String,
    pub theta: Vec<f64>,
    pub data_hash: String,
    pub horizon: usize,
    pub values: Vec<f64>,
}

impl OracleRecord {
    pub fn new(oracle: &str, model: &crate::model::AnyModel, ys: &[f64], horizon: usize, values: Vec<f64>) -> Self {
        use crate::model::StateSpaceModel;
        OracleRecord {
            oracle: oracle.to_string(),
            model_hash: format!("{:016x}", fnv1a(model.to_json().as_bytes())),
            theta: model.params().values(),
            data_hash: data_hash(ys),
            horizon,
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnyModel, LinearGaussianModel};
    use crate::smoother::FnFunctional;
    use proptest::prelude::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn record_round_trip() {
        let model = AnyModel::Lgssm(LinearGaussianModel::stationary(0.8, 0.1, 1.0, 1.0).unwrap());
        let ys = [0.1, 0.2];
        let rec = OracleRecord::new("rts", &model, &ys, 1, vec![1.0, 2.0, 3.0]);
        let back: OracleRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(rec.theta, vec![0.8, 0.1, 1.0, 1.0]);
        assert_ne!(rec.data_hash, data_hash(&[0.1, 0.2000001]));
    }

    fn kalman_dense_agree(phi: f64, sv: f64, c: f64, sw: f64, s0: f64, ys: &[f64]) {
        let m = LinearGaussianModel::new(phi, sv, c, sw, s0).unwrap();
        let k = kalman_smoother(&m, ys).unwrap();
        let d = dense_joint_gaussian(&m, ys).unwrap();
        let tol = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        for t in 0..ys.len() {
            assert!(tol(k.smoothed[t].mean, d.mean[t]));
            assert!(tol(k.smoothed[t].variance, d.covariance[(t, t)]));
            if t > 0 {
                assert!(tol(k.lag_one[t], d.lag_one(t)));
            }
        }
        assert!(tol(k.log_likelihood, d.log_likelihood));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]
        #[test]
        fn kalman_matches_dense(
            phi in -1.2f64..1.2, sv in 0.05f64..2.0, c in -2.0f64..2.0, sw in 0.1f64..3.0, s0 in 0.1f64..3.0,
            ys in proptest::collection::vec(-4.0f64..4.0, 31),
        ) {
            kalman_dense_agree(phi, sv, c, sw, s0, &ys);
        }

        #[test]
        fn exact_functionals_are_linear_in_the_statistic(
            alpha in -5.0f64..5.0,
            ys in proptest::collection::vec(0usize..2, 6),
        ) {
            let hmm = crate::model::FiniteHmm::new(
                vec![vec![0.6, 0.4], vec![0.25, 0.75]],
                vec![vec![0.8, 0.2], vec![0.3, 0.7]],
                vec![0.5, 0.5],
            ).unwrap();
            let ys: Vec<f64> = ys.into_iter().map(|y| y as f64).collect();
            let base = FnFunctional::new(1, |a: f64, b: f64, y: f64, out: &mut [f64]| out[0] = a + 2.0 * b - y);
            let scaled = FnFunctional::new(1, move |a: f64, b: f64, y: f64, out: &mut [f64]| {
                out[0] = alpha * (a + 2.0 * b - y)
            });
            let v = hmm_exact_smoothed_functional(&hmm, &ys, &base).unwrap()[0];
            let w = hmm_exact_smoothed_functional(&hmm, &ys, &scaled).unwrap()[0];
            prop_assert!((w - alpha * v).abs() <= 1e-12 * (alpha * v).abs().max(1.0));
            let e = hmm_enumerate(&hmm, &ys, &base).unwrap()[0];
            prop_assert!((e - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }
}
