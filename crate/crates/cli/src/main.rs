mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_estimators, parse_model, EstimateMode, ExperimentConfig};

/// Particle smoothing of additive functionals: simulation, variance studies,
/// parameter estimation and oracle verification.
#[derive(Debug, Parser)]
#[command(name = "fsmooth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate states and observations to `data.csv` with a seed sidecar.
    Simulate(Flags),
    /// Replicated smoothing runs over one fixed data record.
    VarianceStudy(Flags),
    /// Recursive maximum likelihood, online EM or batch EM.
    Estimate(Flags),
    /// Cross-oracle and invariant checks; exits 1 on any failure.
    Verify(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// `lgssm`, `sv`, `hmm` or a JSON model file.
    #[arg(long)]
    model: Option<String>,
    /// θ_0 for `estimate`, same forms as `--model`.
    #[arg(long)]
    start: Option<String>,
    /// Observation CSV to use instead of simulating.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Horizon: observations are y_0..y_n.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    /// Comma-separated, strictly increasing.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Comma-separated subset of fs,ffbs,path,fixedlag.
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    lag: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<EstimateMode>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Write zero durations so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes, one per exit status.
#[derive(Debug)]
pub enum CliError {
    Verification(String),
    Config(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl From<fsmooth::Error> for CliError {
    fn from(e: fsmooth::Error) -> Self {
        use fsmooth::Error as E;
        match e {
            E::ParameterDomain { .. } | E::InvalidInput(_) | E::Json(_) | E::Io(_) => CliError::Config(e.to_string()),
            E::DegenerateWeights { .. }
            | E::DegenerateBackwardKernel { .. }
            | E::Capacity { .. }
            | E::Numerical(_)
            | E::LambdaDomain(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("I/O: {e}"))
    }
}

impl Flags {
    /// Flags over the config file; subcommands apply their own defaults last.
    fn resolve(self) -> Result<ExperimentConfig, CliError> {
        let file = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let flags = ExperimentConfig {
            preset: self
                .preset
                .as_deref()
                .map(|s| s.parse().map_err(|e: fsmooth::Error| CliError::Config(e.to_string())))
                .transpose()?,
            model: self.model.as_deref().map(parse_model).transpose()?,
            start: self.start.as_deref().map(parse_model).transpose()?,
            data: self.data,
            n: self.n,
            particles: self.particles,
            checkpoints: self.checkpoints,
            replicates: self.replicates,
            seed: self.seed,
            data_seed: self.data_seed,
            estimators: self.estimators.as_deref().map(parse_estimators).transpose()?,
            lag: self.lag,
            policy: None,
            schedule: None,
            alpha: self.alpha,
            warmup: self.warmup,
            mode: self.mode,
            window: self.window,
            iterations: self.iterations,
            timing: self.no_timing.then_some(false),
            out: self.out,
        };
        Ok(file.overlay(flags))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(f) => commands::simulate(&f.resolve()?),
        Command::VarianceStudy(f) => commands::variance_study(&f.resolve()?),
        Command::Estimate(f) => commands::estimate(&f.resolve()?),
        Command::Verify(f) => commands::verify(&f.resolve()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
