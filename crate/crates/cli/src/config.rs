use std::path::{Path, PathBuf};

use fsmooth::experiment::{benchmark_lgssm, Preset};
use fsmooth::learn::StepSchedule;
use fsmooth::{AnyModel, EstimatorKind, FiniteHmm, ResamplingPolicy, StochasticVolatilityModel};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Estimation loop driven by `estimate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMode {
    Rml,
    OnlineEm,
    BatchEm,
}

/// Every experiment knob. Fields left unset fall through to the next layer:
/// command-line flags, then the `--config` file, then the preset or built-in
/// defaults of the subcommand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    /// Data-generating model (θ* for simulation).
    pub model: Option<AnyModel>,
    /// Starting point θ_0 of `estimate`.
    pub start: Option<AnyModel>,
    /// Observation CSV produced by `simulate`; replaces simulation.
    pub data: Option<PathBuf>,
    pub n: Option<usize>,
    pub particles: Option<usize>,
    pub checkpoints: Option<Vec<usize>>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub data_seed: Option<u64>,
    pub estimators: Option<Vec<EstimatorKind>>,
    pub lag: Option<usize>,
    pub policy: Option<ResamplingPolicy>,
    pub schedule: Option<StepSchedule>,
    /// Overrides the decay exponent of the schedule.
    pub alpha: Option<f64>,
    pub warmup: Option<usize>,
    pub mode: Option<EstimateMode>,
    /// Number of trailing steps averaged in the estimation summary.
    pub window: Option<usize>,
    /// Batch EM iterations.
    pub iterations: Option<usize>,
    /// Write wall-clock durations into record files (off for byte-identical reruns).
    pub timing: Option<bool>,
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($top:ident, $base:ident; $($f:ident),*) => {
        ExperimentConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `top` win over `self`.
    pub fn overlay(self, top: ExperimentConfig) -> ExperimentConfig {
        let base = self;
        overlay!(top, base; preset, model, start, data, n, particles, checkpoints, replicates, seed, data_seed,
            estimators, lag, policy, schedule, alpha, warmup, mode, window, iterations, timing, out)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

/// `lgssm`, `sv` and `hmm` name the bundled benchmark models; anything else
/// is read as a JSON model document.
pub fn parse_model(arg: &str) -> Result<AnyModel, CliError> {
    match arg {
        "lgssm" => Ok(AnyModel::Lgssm(benchmark_lgssm())),
        "sv" => Ok(AnyModel::Sv(
            StochasticVolatilityModel::new(0.8, 0.1, 1.0).expect("valid constants"),
        )),
        "hmm" => Ok(AnyModel::Hmm(benchmark_hmm())),
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("`{path}` is neither a model name nor a readable file: {e}")))?;
            AnyModel::from_json(&text).map_err(|e| CliError::Config(format!("model {path}: {e}")))
        }
    }
}

pub fn parse_estimators(arg: &str) -> Result<Vec<EstimatorKind>, CliError> {
    arg.split(',')
        .map(|s| s.trim().parse().map_err(|e| CliError::Config(format!("{e}"))))
        .collect()
}

/// Three-state chain with three observation symbols.
pub fn benchmark_hmm() -> FiniteHmm {
    FiniteHmm::new(
        vec![vec![0.8, 0.15, 0.05], vec![0.1, 0.7, 0.2], vec![0.05, 0.25, 0.7]],
        vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.1, 0.2, 0.7]],
        vec![0.5, 0.3, 0.2],
    )
    .expect("valid constants")
}
