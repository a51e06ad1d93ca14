//! Bootstrap particle filter.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StateSpaceModel;

/// Weighted particle approximation of the filtering law at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub time: usize,
    pub positions: Vec<f64>,
    /// Normalised importance weights.
    pub weights: Vec<f64>,
    /// `ancestors[i]` indexes the particle at `time - 1` that particle `i`
    /// was propagated from. Identity at time 0 and after steps without
    /// resampling.
    pub ancestors: Vec<usize>,
    pub resampled: bool,
    /// Running estimate of `log p(y_{0:time})`.
    pub log_likelihood: f64,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn ess(&self) -> f64 {
        ess(&self.weights)
    }

    /// Weighted mean of `f` over the particle positions.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.positions
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Appends `step,particle_index,position,weight` rows (no header).
    pub fn write_csv_rows<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (i, (x, w)) in self.positions.iter().zip(&self.weights).enumerate() {
            writeln!(out, "{},{},{},{}", self.time, i, x, w)?;
        }
        Ok(())
    }
}

pub const PARTICLE_CSV_HEADER: &str = "step,particle_index,position,weight";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResamplingScheme {
    Multinomial,
    #[default]
    Systematic,
}

/// When and how to resample. Resampling happens when
/// `ess <= ess_threshold · N`, so a threshold of 1 resamples at every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResamplingPolicy {
    pub scheme: ResamplingScheme,
    pub ess_threshold: f64,
}

impl Default for ResamplingPolicy {
    fn default() -> Self {
        ResamplingPolicy {
            scheme: ResamplingScheme::Systematic,
            ess_threshold: 1.0,
        }
    }
}

impl ResamplingPolicy {
    pub fn every_step(scheme: ResamplingScheme) -> Self {
        ResamplingPolicy {
            scheme,
            ess_threshold: 1.0,
        }
    }

    pub fn adaptive(scheme: ResamplingScheme, ess_threshold: f64) -> Result<Self> {
        let p = ResamplingPolicy {
            scheme,
            ess_threshold,
        };
        p.validate()?;
        Ok(p)
    }

    /// Effectively never resamples (ESS is always at least 1).
    pub fn never() -> Self {
        ResamplingPolicy {
            scheme: ResamplingScheme::Systematic,
            ess_threshold: f64::MIN_POSITIVE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ess_threshold > 0.0 && self.ess_threshold <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "ESS threshold {} must lie in (0, 1]",
                self.ess_threshold
            )));
        }
        Ok(())
    }

    fn triggers(&self, weights: &[f64]) -> bool {
        ess(weights) <= self.ess_threshold * weights.len() as f64
    }
}

/// Effective sample size `1 / Σ W²`, clamped to `[1, N]`.
pub fn ess(weights: &[f64]) -> f64 {
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    (1.0 / sq).clamp(1.0, weights.len() as f64)
}

/// Draws `N` ancestor indices from normalised `weights`.
pub fn resample<R: Rng + ?Sized>(weights: &[f64], scheme: ResamplingScheme, rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    match scheme {
        ResamplingScheme::Systematic => {
            let step = 1.0 / n as f64;
            let last_positive = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            let u0: f64 = rng.random::<f64>() * step;
            let mut cum = weights[0];
            let mut j = 0;
            for i in 0..n {
                let u = u0 + i as f64 * step;
                while u >= cum && j + 1 < n {
                    j += 1;
                    cum += weights[j];
                }
                out.push(j.min(last_positive));
            }
        }
        ResamplingScheme::Multinomial => {
            let mut cdf = Vec::with_capacity(n);
            let mut acc = 0.0;
            for &w in weights {
                acc += w;
                cdf.push(acc);
            }
            let total = acc;
            let last_positive = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            for _ in 0..n {
                let u = rng.random::<f64>() * total;
                let j = cdf.partition_point(|&c| c <= u).min(last_positive);
                out.push(j);
            }
        }
    }
    out
}

/// Normalises log-weights in place into `weights`; returns `log Σ exp(lw)`.
fn normalise(log_weights: &[f64], weights: &mut Vec<f64>, step: usize) -> Result<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::DegenerateWeights { step });
    }
    if max == f64::INFINITY {
        return Err(Error::Numerical(format!("infinite log-weight at step {step}")));
    }
    weights.clear();
    weights.extend(log_weights.iter().map(|lw| (lw - max).exp()));
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(max + total.ln())
}

/// Samples `X_0 ~ μ` and weights by `g(y_0 | ·)`.
pub fn init_particles<M: StateSpaceModel, R: Rng + ?Sized>(
    model: &M,
    y0: f64,
    n: usize,
    rng: &mut R,
) -> Result<ParticleSet> {
    if n == 0 {
        return Err(Error::InvalidInput("particle count must be at least 1".into()));
    }
    let positions: Vec<f64> = (0..n).map(|_| model.sample_initial(rng)).collect();
    let log_w: Vec<f64> = positions.iter().map(|&x| model.log_observation(y0, x)).collect();
    let mut weights = Vec::with_capacity(n);
    let log_total = normalise(&log_w, &mut weights, 0)?;
    Ok(ParticleSet {
        time: 0,
        positions,
        weights,
        ancestors: (0..n).collect(),
        resampled: false,
        log_likelihood: log_total - (n as f64).ln(),
    })
}

/// One bootstrap step: optional resampling, propagation through `f`, and
/// reweighting by `g(y | ·)`.
pub fn bootstrap_step<M: StateSpaceModel, R: Rng + ?Sized>(
    prev: &ParticleSet,
    model: &M,
    y: f64,
    policy: &ResamplingPolicy,
    rng: &mut R,
) -> Result<ParticleSet> {
    let n = prev.len();
    let step = prev.time + 1;
    let resampled = policy.triggers(&prev.weights);
    let ancestors = if resampled {
        resample(&prev.weights, policy.scheme, rng)
    } else {
        (0..n).collect()
    };
    let positions: Vec<f64> = ancestors
        .iter()
        .map(|&a| model.sample_transition(prev.positions[a], rng))
        .collect();
    let log_w: Vec<f64> = if resampled {
        positions.iter().map(|&x| model.log_observation(y, x)).collect()
    } else {
        positions
            .iter()
            .zip(&prev.weights)
            .map(|(&x, &w)| w.ln() + model.log_observation(y, x))
            .collect()
    };
    let mut weights = Vec::with_capacity(n);
    let log_total = normalise(&log_w, &mut weights, step)?;
    // Incoming weights are uniform after resampling and sum to one otherwise.
    let increment = if resampled {
        log_total - (n as f64).ln()
    } else {
        log_total
    };
    Ok(ParticleSet {
        time: step,
        positions,
        weights,
        ancestors,
        resampled,
        log_likelihood: prev.log_likelihood + increment,
    })
}

/// Runs the filter over all of `ys`, keeping every particle set.
pub fn run_filter<M: StateSpaceModel, R: Rng + ?Sized>(
    model: &M,
    ys: &[f64],
    n: usize,
    policy: &ResamplingPolicy,
    rng: &mut R,
) -> Result<Vec<ParticleSet>> {
    let (&y0, rest) = ys
        .split_first()
        .ok_or_else(|| Error::InvalidInput("need at least one observation".into()))?;
    let mut history = Vec::with_capacity(ys.len());
    history.push(init_particles(model, y0, n, rng)?);
    for &y in rest {
        let next = bootstrap_step(history.last().expect("non-empty"), model, y, policy, rng)?;
        history.push(next);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, LinearGaussianModel};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// LGSSM with c = 0: the likelihood is flat in x.
    fn flat() -> LinearGaussianModel {
        LinearGaussianModel::new(0.9, 0.5, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn ess_examples() {
        assert_eq!(ess(&[0.25; 4]), 4.0);
        assert_eq!(ess(&[1.0, 0.0, 0.0]), 1.0);
        assert!((ess(&[0.5, 0.25, 0.25]) - 1.0 / 0.375).abs() < 1e-12);
    }

    #[test]
    fn flat_likelihood_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ps = init_particles(&flat(), 0.7, 50, &mut rng).unwrap();
        assert!(ps.weights.iter().all(|&w| (w - 0.02).abs() < 1e-15));
        let one = init_particles(&flat(), 0.7, 1, &mut rng).unwrap();
        assert_eq!(one.weights, vec![1.0]);
    }

    #[test]
    fn flat_likelihood_without_resampling_keeps_weights() {
        let model = LinearGaussianModel::new(0.9, 0.5, 1.0, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ps = init_particles(&model, 0.7, 40, &mut rng).unwrap();
        let next = bootstrap_step(&ps, &flat(), 1.3, &ResamplingPolicy::never(), &mut rng).unwrap();
        assert!(!next.resampled);
        for (a, b) in ps.weights.iter().zip(&next.weights) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(next.ancestors, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn resampling_resets_to_equal_weights_before_reweighting() {
        let model = LinearGaussianModel::new(0.9, 0.5, 1.0, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ps = init_particles(&model, 2.0, 64, &mut rng).unwrap();
        // With a flat likelihood the post-step weights equal the pre-reweighting ones.
        let next = bootstrap_step(&ps, &flat(), 0.0, &ResamplingPolicy::default(), &mut rng).unwrap();
        assert!(next.resampled);
        assert!(next.weights.iter().all(|&w| (w - 1.0 / 64.0).abs() < 1e-15));
    }

    #[test]
    fn systematic_equal_weights_is_identity_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = resample(&[0.1; 10], ResamplingScheme::Systematic, &mut rng);
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn point_mass_resamples_to_single_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = [1.0, 0.0, 0.0, 0.0, 0.0];
        for scheme in [ResamplingScheme::Systematic, ResamplingScheme::Multinomial] {
            assert!(resample(&w, scheme, &mut rng).iter().all(|&i| i == 0));
        }
    }

    #[test]
    fn multinomial_counts_are_unbiased() {
        let w = [0.05, 0.4, 0.15, 0.3, 0.1];
        let n = w.len();
        let draws = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut counts = [0.0; 5];
        for _ in 0..draws {
            for i in resample(&w, ResamplingScheme::Multinomial, &mut rng) {
                counts[i] += 1.0;
            }
        }
        for i in 0..n {
            let mean = counts[i] / draws as f64;
            let expect = n as f64 * w[i];
            // Standard error of the mean of Binomial(n, w_i) counts.
            let se = (n as f64 * w[i] * (1.0 - w[i]) / draws as f64).sqrt();
            assert!((mean - expect).abs() < 3.0 * se, "index {i}: {mean} vs {expect}");
        }
    }

    #[test]
    fn systematic_counts_are_unbiased() {
        let w = [0.05, 0.4, 0.15, 0.3, 0.1];
        let draws = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let mut counts = [0.0; 5];
        for _ in 0..draws {
            for i in resample(&w, ResamplingScheme::Systematic, &mut rng) {
                counts[i] += 1.0;
            }
        }
        for i in 0..5 {
            let mean = counts[i] / draws as f64;
            // Counts are floor/ceil of N w_i, so per-draw variance is at most 1/4.
            assert!((mean - 5.0 * w[i]).abs() < 3.0 * (0.25 / draws as f64).sqrt());
        }
    }

    #[test]
    fn csv_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ps = init_particles(&flat(), 0.7, 2, &mut rng).unwrap();
        let mut buf = Vec::new();
        ps.write_csv_rows(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("0,0,"));
    }

    #[test]
    fn incompatible_observation_is_degenerate() {
        let hmm = crate::model::FiniteHmm::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            init_particles(&hmm, 1.0, 10, &mut rng),
            Err(Error::DegenerateWeights { step: 0 })
        ));
    }

    #[test]
    fn adaptive_policy_validates_threshold() {
        assert!(ResamplingPolicy::adaptive(ResamplingScheme::Systematic, 0.0).is_err());
        assert!(ResamplingPolicy::adaptive(ResamplingScheme::Systematic, 1.5).is_err());
        assert!(ResamplingPolicy::adaptive(ResamplingScheme::Multinomial, 0.5).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn weights_stay_normalised(seed in 0u64..1000, n in 1usize..80, thr in 0.05f64..1.0) {
            let model = LinearGaussianModel::new(0.8, 0.3, 1.0, 0.5, 1.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let traj = simulate(&model, 15, &mut rng).unwrap();
            let policy = ResamplingPolicy::adaptive(ResamplingScheme::Multinomial, thr).unwrap();
            let hist = run_filter(&model, &traj.observations, n, &policy, &mut rng).unwrap();
            for ps in &hist {
                let total: f64 = ps.weights.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(ps.weights.iter().all(|&w| w >= 0.0));
                let e = ps.ess();
                prop_assert!(e >= 1.0 && e <= n as f64);
                prop_assert!(ps.ancestors.iter().all(|&a| a < n));
            }
        }
    }
}
