//! Replicated smoothing runs on a fixed data record and the variance summary
//! built from them.
//!
//! Replicate `r` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `r`,
//! so replicate streams are distinct and independent of scheduling.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filter::{bootstrap_step, init_particles, ParticleSet, ResamplingPolicy};
use crate::learn::SvSuffStats;
use crate::model::{AnyModel, StateSpaceModel};
use crate::oracle::{exact_at_checkpoints, hmm_exact_smoothed_functional};
use crate::smoother::{
    ffbs_backward, fs_estimate, AdditiveFunctional, Blend, EstimatorKind, FixedLagState, ForwardSmootherState,
    LgssmBenchmark, PathStatistics,
};

/// RNG for replicate `replicate` under base seed `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// The functional studied for each model: the three benchmark statistics
/// for linear-Gaussian and HMM models, the four sufficient statistics for SV.
pub fn default_functional(model: &AnyModel) -> Box<dyn AdditiveFunctional> {
    match model {
        AnyModel::Sv(_) => Box::new(SvSuffStats),
        _ => Box::new(LgssmBenchmark),
    }
}

/// Exact values of [`default_functional`] at each checkpoint, when an oracle
/// exists for the model.
pub fn oracle_values(model: &AnyModel, ys: &[f64], checkpoints: &[usize]) -> Result<Option<Vec<Vec<f64>>>> {
    match model {
        AnyModel::Lgssm(m) => Ok(Some(
            exact_at_checkpoints(m, ys, checkpoints)?.into_iter().map(Vec::from).collect(),
        )),
        AnyModel::Hmm(h) => checkpoints
            .iter()
            .map(|&t| hmm_exact_smoothed_functional(h, &ys[..=t], &LgssmBenchmark))
            .collect::<Result<Vec<_>>>()
            .map(Some),
        AnyModel::Sv(_) => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub particles: usize,
    pub checkpoints: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    /// Required when `estimators` contains the fixed-lag estimator.
    pub lag: Option<usize>,
    pub policy: ResamplingPolicy,
    pub exec: Execution,
}

impl StudySettings {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidInput("particle count must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidInput("replicate count must be at least 1".into()));
        }
        if self.checkpoints.is_empty() || self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("checkpoints must be non-empty and strictly increasing".into()));
        }
        if *self.checkpoints.last().expect("non-empty") > horizon {
            return Err(Error::InvalidInput(format!("checkpoints exceed the horizon {horizon}")));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidInput("no estimators selected".into()));
        }
        if self.estimators.contains(&EstimatorKind::FixedLag) && self.lag.is_none() {
            return Err(Error::InvalidInput("the fixed-lag estimator needs a lag".into()));
        }
        self.policy.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub replicate: usize,
    pub seed: u64,
    pub checkpoint: usize,
    pub estimator: EstimatorKind,
    pub values: Vec<f64>,
    pub oracle: Option<Vec<f64>>,
    /// Seconds since the replicate started.
    pub elapsed: f64,
}

pub const RECORD_CSV_HEADER: &str = "replicate,seed,checkpoint,estimator,statistic_index,value,oracle,elapsed";

impl RunRecord {
    /// One CSV row per statistic; the oracle column is empty without an oracle.
    pub fn write_csv_rows<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (l, v) in self.values.iter().enumerate() {
            let oracle = self.oracle.as_ref().map_or(String::new(), |o| o[l].to_string());
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.replicate, self.seed, self.checkpoint, self.estimator, l, v, oracle, self.elapsed
            )?;
        }
        Ok(())
    }
}

/// Runs one replicate of every selected estimator over `ys`, sharing one
/// particle realisation.
pub fn run_replicate<M: StateSpaceModel, F: AdditiveFunctional + ?Sized>(
    model: &M,
    func: &F,
    ys: &[f64],
    settings: &StudySettings,
    oracle: Option<&[Vec<f64>]>,
    replicate: usize,
    exec: Execution,
) -> Result<Vec<RunRecord>> {
    let horizon = *settings.checkpoints.last().ok_or_else(|| Error::InvalidInput("no checkpoints".into()))?;
    if ys.len() <= horizon {
        return Err(Error::InvalidInput(format!("data has {} observations, need {}", ys.len(), horizon + 1)));
    }
    let start = Instant::now();
    let mut rng = replicate_rng(settings.seed, replicate as u64);
    let wants = |k| settings.estimators.contains(&k);
    let keep_history = wants(EstimatorKind::Ffbs);

    let mut ps = init_particles(model, ys[0], settings.particles, &mut rng)?;
    let mut history: Vec<ParticleSet> = Vec::new();
    let mut fs = wants(EstimatorKind::Fs).then(|| ForwardSmootherState::init(&ps, func, ys[0]));
    let mut path = wants(EstimatorKind::Path).then(|| PathStatistics::init(&ps, func, ys[0]));
    let mut lag = match (wants(EstimatorKind::FixedLag), settings.lag) {
        (true, Some(d)) => Some(FixedLagState::init(&ps, func, ys[0], d)),
        _ => None,
    };
    let mut records = Vec::new();
    let mut next_cp = 0;

    for t in 0..=horizon {
        if t > 0 {
            let next = bootstrap_step(&ps, model, ys[t], &settings.policy, &mut rng)?;
            if let Some(s) = fs.as_mut() {
                *s = s.update(&ps, &next, model, func, ys[t], Blend::SUM, exec)?;
            }
            if let Some(s) = path.as_mut() {
                *s = s.update(&ps, &next, func, ys[t], Blend::SUM);
            }
            if let Some(s) = lag.as_mut() {
                *s = s.update(&ps, &next, func, ys[t], Blend::SUM);
            }
            if keep_history {
                history.push(std::mem::replace(&mut ps, next));
            } else {
                ps = next;
            }
        }
        if settings.checkpoints[next_cp] != t {
            continue;
        }
        for &kind in &settings.estimators {
            let values = match kind {
                EstimatorKind::Fs => fs_estimate(&ps, fs.as_ref().expect("selected")),
                EstimatorKind::Path => path.as_ref().expect("selected").estimate(&ps),
                EstimatorKind::FixedLag => lag.as_ref().expect("selected").estimate(&ps),
                EstimatorKind::Ffbs => {
                    history.push(ps.clone());
                    let out = ffbs_backward(&history, ys, model, func, false, exec);
                    history.pop();
                    out?.estimate
                }
            };
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "replicate {replicate}: {kind} estimate at step {t} is not finite"
                )));
            }
            records.push(RunRecord {
                replicate,
                seed: settings.seed,
                checkpoint: t,
                estimator: kind,
                values,
                oracle: oracle.map(|o| o[next_cp].clone()),
                elapsed: start.elapsed().as_secs_f64(),
            });
        }
        next_cp += 1;
    }
    Ok(records)
}

/// Runs all replicates (in parallel under `settings.exec`); records are
/// ordered by replicate.
pub fn run_study<M: StateSpaceModel, F: AdditiveFunctional + ?Sized>(
    model: &M,
    func: &F,
    ys: &[f64],
    settings: &StudySettings,
    oracle: Option<&[Vec<f64>]>,
) -> Result<Vec<RunRecord>> {
    settings.validate(ys.len().saturating_sub(1))?;
    // Replicates already saturate the pool; the inner loops stay sequential.
    let inner = if settings.exec.is_parallel() && settings.replicates > 1 {
        Execution::Sequential
    } else {
        settings.exec
    };
    let per_rep = settings
        .exec
        .map_range(settings.replicates, |r| run_replicate(model, func, ys, settings, oracle, r, inner));
    let mut all = Vec::new();
    for recs in per_rep {
        all.extend(recs?);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticSummary {
    pub index: usize,
    pub means: Vec<f64>,
    /// Unbiased sample variance across replicates, per checkpoint.
    pub variances: Vec<f64>,
    pub oracle: Option<Vec<f64>>,
    /// Least-squares slope of `log variance` against `log checkpoint`.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub statistics: Vec<StatisticSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub checkpoints: Vec<usize>,
    pub replicates: usize,
    pub particles: usize,
    pub estimators: Vec<EstimatorSummary>,
}

pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let (mx, _) = mean_and_variance(xs);
    let (my, _) = mean_and_variance(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Log-log slope of variance against checkpoint.
pub fn variance_slope(checkpoints: &[usize], variances: &[f64]) -> Option<f64> {
    if variances.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = checkpoints.iter().map(|&c| (c as f64).ln()).collect();
    let ly: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
    ols_slope(&lx, &ly)
}

pub fn summarise(records: &[RunRecord], settings: &StudySettings) -> StudySummary {
    let cps = &settings.checkpoints;
    let estimators = settings
        .estimators
        .iter()
        .map(|&kind| {
            let mine: Vec<&RunRecord> = records.iter().filter(|r| r.estimator == kind).collect();
            let m = mine.first().map_or(0, |r| r.values.len());
            let statistics = (0..m)
                .map(|l| {
                    let mut means = Vec::new();
                    let mut variances = Vec::new();
                    let mut oracle = Some(Vec::new());
                    for &cp in cps {
                        let at: Vec<&&RunRecord> = mine.iter().filter(|r| r.checkpoint == cp).collect();
                        let xs: Vec<f64> = at.iter().map(|r| r.values[l]).collect();
                        let (mean, var) = mean_and_variance(&xs);
                        means.push(mean);
                        variances.push(var);
                        match (oracle.as_mut(), at.first().and_then(|r| r.oracle.as_ref())) {
                            (Some(o), Some(v)) => o.push(v[l]),
                            _ => oracle = None,
                        }
                    }
                    StatisticSummary {
                        index: l,
                        slope: variance_slope(cps, &variances),
                        means,
                        variances,
                        oracle,
                    }
                })
                .collect();
            EstimatorSummary {
                estimator: kind,
                statistics,
            }
        })
        .collect();
    StudySummary {
        checkpoints: cps.clone(),
        replicates: settings.replicates,
        particles: settings.particles,
        estimators,
    }
}

/// Named experiment configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    PaperFig1,
    DeskFig1,
    PaperFig2,
    DeskFig2,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-fig1" => Ok(Preset::PaperFig1),
            "desk-fig1" => Ok(Preset::DeskFig1),
            "paper-fig2" => Ok(Preset::PaperFig2),
            "desk-fig2" => Ok(Preset::DeskFig2),
            _ => Err(Error::InvalidInput(format!("unknown preset `{s}`"))),
        }
    }
}

/// Variance-growth study on the linear-Gaussian benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariancePreset {
    pub model: crate::model::LinearGaussianModel,
    pub horizon: usize,
    pub data_seed: u64,
    pub settings: StudySettings,
}

/// Online EM on the stochastic volatility model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationPreset {
    pub truth: crate::model::StochasticVolatilityModel,
    pub start: crate::model::StochasticVolatilityModel,
    pub horizon: usize,
    pub particles: usize,
    pub warmup: usize,
    pub schedule: crate::learn::StepSchedule,
    pub average_window: usize,
}

/// θ* of the linear-Gaussian benchmark, with a stationary initial law.
pub fn benchmark_lgssm() -> crate::model::LinearGaussianModel {
    crate::model::LinearGaussianModel::stationary(0.8, 0.1, 1.0, 1.0).expect("valid constants")
}

impl Preset {
    pub fn variance(self) -> Option<VariancePreset> {
        let (horizon, particles, checkpoints) = match self {
            Preset::PaperFig1 => (10_000, 500, vec![2500, 5000, 7500, 10_000]),
            Preset::DeskFig1 => (2000, 200, vec![250, 500, 1000, 2000]),
            _ => return None,
        };
        Some(VariancePreset {
            model: benchmark_lgssm(),
            horizon,
            data_seed: 2010,
            settings: StudySettings {
                particles,
                checkpoints,
                replicates: 50,
                seed: 1,
                estimators: vec![EstimatorKind::Fs, EstimatorKind::Path],
                lag: None,
                policy: ResamplingPolicy::default(),
                exec: Execution::default(),
            },
        })
    }

    pub fn estimation(self) -> Option<EstimationPreset> {
        use crate::learn::StepSchedule;
        use crate::model::StochasticVolatilityModel;
        let (horizon, particles, schedule) = match self {
            Preset::PaperFig2 => (500_000, 500, StepSchedule::new(100_000, 0.01, 0.6, 50_000.0)),
            // Constant over the transient, decaying across the averaging window;
            // the shift makes γ continuous at the switch.
            Preset::DeskFig2 => (
                20_000,
                100,
                StepSchedule::new(19_000, 0.01, 0.6, 19_000.0 - 0.01f64.powf(-1.0 / 0.6)),
            ),
            _ => return None,
        };
        Some(EstimationPreset {
            truth: StochasticVolatilityModel::new(0.8, 0.1, 1.0).expect("valid constants"),
            start: StochasticVolatilityModel::new(0.1, 1.0, 2.0).expect("valid constants"),
            horizon,
            particles,
            warmup: 100,
            schedule: schedule.expect("valid constants"),
            average_window: 1000,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, LinearGaussianModel};

    fn settings(estimators: Vec<EstimatorKind>, replicates: usize) -> StudySettings {
        StudySettings {
            particles: 60,
            checkpoints: vec![5, 10, 20],
            replicates,
            seed: 42,
            estimators,
            lag: Some(4),
            policy: ResamplingPolicy::default(),
            exec: Execution::default(),
        }
    }

    #[test]
    fn one_record_per_replicate_checkpoint_estimator() {
        let model = LinearGaussianModel::stationary(0.8, 0.1, 1.0, 1.0).unwrap();
        let ys = simulate(&model, 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().observations;
        let s = settings(EstimatorKind::ALL.to_vec(), 3);
        let oracle = oracle_values(&AnyModel::Lgssm(model), &ys, &s.checkpoints).unwrap().unwrap();
        let recs = run_study(&model, &LgssmBenchmark, &ys, &s, Some(&oracle)).unwrap();
        assert_eq!(recs.len(), 3 * 3 * 4);
        // The forward recursion and FFBS share particles within a replicate.
        for pair in recs.chunks(4) {
            let (fs, ffbs) = (&pair[0].values, &pair[1].values);
            for l in 0..3 {
                assert!((fs[l] - ffbs[l]).abs() <= 1e-10 * ffbs[l].abs().max(1.0));
            }
        }
        let summary = summarise(&recs, &s);
        assert_eq!(summary.estimators.len(), 4);
        assert_eq!(summary.estimators[0].statistics[2].oracle.as_ref().unwrap()[2], oracle[2][2]);
    }

    #[test]
    fn sequential_and_parallel_studies_agree() {
        let model = LinearGaussianModel::stationary(0.8, 0.1, 1.0, 1.0).unwrap();
        let ys = simulate(&model, 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().observations;
        let mut s = settings(vec![EstimatorKind::Fs, EstimatorKind::Path], 4);
        let strip = |v: Vec<RunRecord>| v.into_iter().map(|r| (r.values, r.checkpoint)).collect::<Vec<_>>();
        let a = strip(run_study(&model, &LgssmBenchmark, &ys, &s, None).unwrap());
        s.exec = Execution::Sequential;
        let b = strip(run_study(&model, &LgssmBenchmark, &ys, &s, None).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn settings_validation() {
        let mut s = settings(vec![EstimatorKind::FixedLag], 1);
        s.lag = None;
        assert!(s.validate(30).is_err());
        let mut s = settings(vec![EstimatorKind::Fs], 1);
        s.checkpoints = vec![10, 5];
        assert!(s.validate(30).is_err());
        s.checkpoints = vec![5, 40];
        assert!(s.validate(30).is_err());
    }

    #[test]
    fn presets() {
        let p = "paper-fig1".parse::<Preset>().unwrap().variance().unwrap();
        assert_eq!(p.settings.checkpoints, vec![2500, 5000, 7500, 10_000]);
        assert_eq!((p.settings.particles, p.settings.replicates), (500, 50));
        let d = Preset::DeskFig1.variance().unwrap();
        assert_eq!((d.horizon, d.settings.particles), (2000, 200));
        let e = Preset::PaperFig2.estimation().unwrap();
        assert_eq!((e.start.phi, e.start.sigma2, e.start.beta2), (0.1, 1.0, 2.0));
        assert_eq!((e.particles, e.warmup), (500, 100));
        assert!(Preset::DeskFig2.variance().is_none());
        assert!("fig3".parse::<Preset>().is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let cps = [250, 500, 1000, 2000];
        let v: Vec<f64> = cps.iter().map(|&c| 3.0 * (c as f64).powi(2)).collect();
        assert!((variance_slope(&cps, &v).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(variance_slope(&cps, &[1.0, 0.0, 1.0, 1.0]), None);
    }

    #[test]
    fn csv_rows_leave_missing_oracle_empty() {
        let r = RunRecord {
            replicate: 1,
            seed: 9,
            checkpoint: 5,
            estimator: EstimatorKind::Path,
            values: vec![0.5],
            oracle: None,
            elapsed: 0.25,
        };
        let mut buf = Vec::new();
        r.write_csv_rows(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,9,5,path,0,0.5,,0.25\n");
    }
}
