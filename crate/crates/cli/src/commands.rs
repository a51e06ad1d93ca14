use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fsmooth::experiment::{
    default_functional, oracle_values, replicate_rng, run_replicate, run_study, summarise, Preset, StudySettings,
    RECORD_CSV_HEADER,
};
use fsmooth::learn::{
    batch_em_iteration, step_discount_sum, write_estimation_rows, LgssmPhiLambda, MaximizationMap, OnlineEmState,
    OnlineSettings, RmlState, SvLambda, SvSuffStats, ESTIMATION_CSV_HEADER,
};
use fsmooth::model::simulate as simulate_model;
use fsmooth::oracle::{dense_joint_gaussian, hmm_enumerate, hmm_exact_smoothed_functional, kalman_smoother};
use fsmooth::smoother::{ConstantFunctional, LgssmBenchmark};
use fsmooth::{AdditiveFunctional, AnyModel, EstimatorKind, Execution, ResamplingPolicy, StateSpaceModel};
use serde::Serialize;

use crate::config::{benchmark_hmm, EstimateMode, ExperimentConfig};
use crate::CliError;

pub const DATA_CSV_HEADER: &str = "step,state,observation";

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Config(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(dir.join(name))
}

/// Observation column of a CSV written by `simulate`.
pub fn read_observations(path: &Path) -> Result<Vec<f64>, CliError> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let file = File::open(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
    let col = header
        .split(',')
        .position(|h| h.trim() == "observation")
        .ok_or_else(|| bad("no `observation` column".into()))?;
    let mut ys = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let field = line.split(',').nth(col).ok_or_else(|| bad(format!("row {} is short", i + 1)))?;
        ys.push(field.trim().parse().map_err(|e| bad(format!("row {}: {e}", i + 1)))?);
    }
    if ys.is_empty() {
        return Err(bad("no observations".into()));
    }
    Ok(ys)
}

fn preset_model(preset: Option<Preset>) -> AnyModel {
    let preset = preset.unwrap_or(Preset::DeskFig1);
    match (preset.variance(), preset.estimation()) {
        (Some(v), _) => AnyModel::Lgssm(v.model),
        (_, Some(e)) => AnyModel::Sv(e.truth),
        _ => AnyModel::Lgssm(fsmooth::experiment::benchmark_lgssm()),
    }
}

#[derive(Serialize)]
struct SimulationSidecar<'a> {
    seed: u64,
    n: usize,
    model: &'a AnyModel,
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let model = cfg.model.clone().unwrap_or_else(|| preset_model(cfg.preset));
    let n = cfg.n.unwrap_or(1000);
    let seed = cfg.seed.unwrap_or(1);
    let traj = simulate_model(&model, n, &mut replicate_rng(seed, 0))?;
    let dir = cfg.out_dir();
    let mut w = create(&dir, "data.csv")?;
    writeln!(w, "{DATA_CSV_HEADER}")?;
    for (k, (x, y)) in traj.states.iter().zip(&traj.observations).enumerate() {
        writeln!(w, "{k},{x},{y}")?;
    }
    w.flush()?;
    write_json(&dir, "data.json", &SimulationSidecar { seed, n, model: &model })?;
    println!("wrote {} ({} rows)", dir.join("data.csv").display(), n + 1);
    Ok(())
}

fn observations(cfg: &ExperimentConfig, model: &AnyModel, n: usize, data_seed: u64) -> Result<Vec<f64>, CliError> {
    match &cfg.data {
        Some(p) => read_observations(p),
        None => Ok(simulate_model(model, n, &mut replicate_rng(data_seed, 0))?.observations),
    }
}

pub fn variance_study(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let name = cfg.preset.unwrap_or(Preset::DeskFig1);
    let preset = name
        .variance()
        .ok_or_else(|| CliError::Config(format!("preset {name:?} does not describe a variance study")))?;
    let model = cfg.model.clone().unwrap_or(AnyModel::Lgssm(preset.model));
    let ys = observations(cfg, &model, cfg.n.unwrap_or(preset.horizon), cfg.data_seed.unwrap_or(preset.data_seed))?;
    let horizon = ys.len() - 1;

    let base = preset.settings;
    let checkpoints = cfg.checkpoints.clone().unwrap_or_else(|| {
        let kept: Vec<usize> = base.checkpoints.iter().copied().filter(|&c| c <= horizon).collect();
        if kept.is_empty() {
            vec![horizon]
        } else {
            kept
        }
    });
    let settings = StudySettings {
        particles: cfg.particles.unwrap_or(base.particles),
        checkpoints,
        replicates: cfg.replicates.unwrap_or(base.replicates),
        seed: cfg.seed.unwrap_or(base.seed),
        estimators: cfg.estimators.clone().unwrap_or(base.estimators),
        lag: cfg.lag.or(base.lag),
        policy: cfg.policy.unwrap_or(base.policy),
        exec: base.exec,
    };
    settings.validate(horizon).map_err(|e| CliError::Config(e.to_string()))?;

    let func = default_functional(&model);
    let oracle = oracle_values(&model, &ys, &settings.checkpoints)?;
    if oracle.is_none() {
        log::warn!("no exact oracle for the {} model; oracle columns are left empty", model.name());
    }
    let mut records = run_study(&model, func.as_ref(), &ys, &settings, oracle.as_deref())?;
    if let Some(r) = records.iter().find(|r| r.values.iter().any(|v| !v.is_finite())) {
        return Err(CliError::Numerical(format!(
            "non-finite estimate: replicate {}, checkpoint {}, estimator {}",
            r.replicate, r.checkpoint, r.estimator
        )));
    }
    if cfg.timing == Some(false) {
        records.iter_mut().for_each(|r| r.elapsed = 0.0);
    }

    let dir = cfg.out_dir();
    let mut w = create(&dir, "records.csv")?;
    writeln!(w, "{RECORD_CSV_HEADER}")?;
    for r in &records {
        r.write_csv_rows(&mut w)?;
    }
    w.flush()?;
    let summary = summarise(&records, &settings);
    write_json(&dir, "summary.json", &summary)?;

    for e in &summary.estimators {
        let slopes: Vec<String> = e
            .statistics
            .iter()
            .map(|s| s.slope.map_or("-".into(), |v| format!("{v:.3}")))
            .collect();
        println!("{:>8}: variance slopes [{}]", e.estimator, slopes.join(", "));
    }
    println!("wrote {} records to {}", records.len(), dir.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EstimateSummary {
    mode: EstimateMode,
    steps: usize,
    window: usize,
    names: Vec<String>,
    initial: Vec<f64>,
    #[serde(rename = "final")]
    last: Vec<f64>,
    /// Mean over the last `window` steps.
    average: Vec<f64>,
    skipped_m_steps: usize,
}

/// Running mean of the parameters over the trailing window.
struct TrailingMean {
    from: usize,
    sum: Vec<f64>,
    count: usize,
}

impl TrailingMean {
    fn new(total: usize, window: usize, dim: usize) -> Self {
        TrailingMean {
            from: total.saturating_sub(window.max(1)) + 1,
            sum: vec![0.0; dim],
            count: 0,
        }
    }

    fn push(&mut self, step: usize, values: &[f64]) {
        if step >= self.from {
            self.sum.iter_mut().zip(values).for_each(|(s, v)| *s += v);
            self.count += 1;
        }
    }

    fn mean(&self, fallback: &[f64]) -> Vec<f64> {
        if self.count == 0 {
            return fallback.to_vec();
        }
        self.sum.iter().map(|s| s / self.count as f64).collect()
    }
}

fn at_step(step: usize) -> impl Fn(fsmooth::Error) -> CliError {
    move |e| match CliError::from(e) {
        CliError::Config(m) => CliError::Config(format!("step {step}: {m}")),
        CliError::Numerical(m) => CliError::Numerical(format!("step {step}: {m}")),
        other => other,
    }
}

type EmPair = (Box<dyn AdditiveFunctional>, Box<dyn MaximizationMap>);

fn em_pair(model: &AnyModel) -> Result<EmPair, CliError> {
    match model {
        AnyModel::Sv(_) => Ok((Box::new(SvSuffStats), Box::new(SvLambda))),
        AnyModel::Lgssm(_) => Ok((Box::new(LgssmBenchmark), Box::new(LgssmPhiLambda))),
        AnyModel::Hmm(_) => Err(CliError::Config("EM is available for the sv and lgssm models".into())),
    }
}

pub fn estimate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let name = cfg.preset.unwrap_or(Preset::DeskFig2);
    let preset = name
        .estimation()
        .ok_or_else(|| CliError::Config(format!("preset {name:?} does not describe an estimation run")))?;
    let mode = cfg.mode.unwrap_or(EstimateMode::OnlineEm);
    let truth = cfg.model.clone().unwrap_or(AnyModel::Sv(preset.truth));
    let start = match (&cfg.start, &truth) {
        (Some(s), _) => s.clone(),
        (None, AnyModel::Sv(_)) => AnyModel::Sv(preset.start),
        (None, t) => t.clone(),
    };
    if start.param_count() == 0 {
        return Err(CliError::Config(format!("the {} model has no parameters to estimate", start.name())));
    }
    let mut schedule = cfg.schedule.unwrap_or(preset.schedule);
    if let Some(a) = cfg.alpha {
        schedule.alpha = a;
    }
    schedule.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let policy = cfg.policy.unwrap_or_default();
    let settings = OnlineSettings {
        particles: cfg.particles.unwrap_or(preset.particles),
        schedule,
        policy,
        exec: Execution::default(),
    };
    let seed = cfg.seed.unwrap_or(1);
    let window = cfg.window.unwrap_or(preset.average_window);
    let ys = observations(cfg, &truth, cfg.n.unwrap_or(preset.horizon), cfg.data_seed.unwrap_or(2010))?;

    let dir = cfg.out_dir();
    let mut trace = create(&dir, "trace.csv")?;
    writeln!(trace, "{ESTIMATION_CSV_HEADER}")?;
    let params = start.params();
    let names: Vec<String> = params.names().iter().map(|s| s.to_string()).collect();
    let initial = params.values();

    let (last, average, steps, skipped) = match mode {
        EstimateMode::Rml => {
            let free = vec![true; start.param_count()];
            let mut st = RmlState::new(start, ys[0], free, settings, seed).map_err(at_step(0))?;
            write_estimation_rows(&mut trace, 0, &st.model, 0.0, st.particles.ess())?;
            let steps = ys.len() - 1;
            let mut avg = TrailingMean::new(steps, window, initial.len());
            for (k, &y) in ys.iter().enumerate().skip(1) {
                st.step(y).map_err(at_step(k))?;
                write_estimation_rows(&mut trace, k, &st.model, st.last_gamma, st.particles.ess())?;
                avg.push(k, &st.model.params().values());
            }
            let last = st.model.params().values();
            (last.clone(), avg.mean(&last), steps, 0)
        }
        EstimateMode::OnlineEm => {
            let (func, lambda) = em_pair(&start)?;
            let warmup = cfg.warmup.unwrap_or(preset.warmup);
            let mut st =
                OnlineEmState::new(start, ys[0], func.as_ref(), warmup, settings, seed).map_err(at_step(0))?;
            write_estimation_rows(&mut trace, 0, &st.model, 0.0, st.particles.ess())?;
            let steps = ys.len() - 1;
            let mut avg = TrailingMean::new(steps, window, initial.len());
            for (k, &y) in ys.iter().enumerate().skip(1) {
                st.step(y, func.as_ref(), lambda.as_ref()).map_err(at_step(k))?;
                write_estimation_rows(&mut trace, k, &st.model, st.last_gamma, st.particles.ess())?;
                avg.push(k, &st.model.params().values());
            }
            let last = st.model.params().values();
            (last.clone(), avg.mean(&last), steps, st.skipped_m_steps)
        }
        EstimateMode::BatchEm => {
            let (func, lambda) = em_pair(&start)?;
            let iterations = cfg.iterations.unwrap_or(50);
            let mut model = start;
            write_estimation_rows(&mut trace, 0, &model, 0.0, f64::NAN)?;
            let mut avg = TrailingMean::new(iterations, window, initial.len());
            for i in 1..=iterations {
                let mut rng = replicate_rng(seed, i as u64);
                model = batch_em_iteration(
                    &model,
                    &ys,
                    func.as_ref(),
                    lambda.as_ref(),
                    settings.particles,
                    &policy,
                    settings.exec,
                    &mut rng,
                )
                .map_err(at_step(i))?;
                write_estimation_rows(&mut trace, i, &model, 1.0, f64::NAN)?;
                avg.push(i, &model.params().values());
            }
            let last = model.params().values();
            (last.clone(), avg.mean(&last), iterations, 0)
        }
    };
    trace.flush()?;
    let summary = EstimateSummary {
        mode,
        steps,
        window,
        names,
        initial,
        last,
        average,
        skipped_m_steps: skipped,
    };
    write_json(&dir, "estimate.json", &summary)?;
    for (n, v) in summary.names.iter().zip(&summary.average) {
        println!("{n:>8} = {v:.5}");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CheckResult {
    check: &'static str,
    pass: bool,
    value: f64,
    tolerance: f64,
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn check_ffbs_equals_fs(seed: u64, particles: usize) -> fsmooth::Result<f64> {
    let model = fsmooth::experiment::benchmark_lgssm();
    let ys = simulate_model(&model, 100, &mut replicate_rng(seed, 0))?.observations;
    let settings = StudySettings {
        particles,
        checkpoints: vec![100],
        replicates: 1,
        seed,
        estimators: vec![EstimatorKind::Fs, EstimatorKind::Ffbs],
        lag: None,
        policy: ResamplingPolicy::default(),
        exec: Execution::default(),
    };
    let recs = run_replicate(&model, &LgssmBenchmark, &ys, &settings, None, 0, Execution::default())?;
    let (fs, ffbs) = (&recs[0].values, &recs[1].values);
    Ok(fs.iter().zip(ffbs).map(|(a, b)| relative(*a, *b)).fold(0.0, f64::max))
}

fn check_kalman_equals_dense(seed: u64) -> fsmooth::Result<f64> {
    let model = fsmooth::experiment::benchmark_lgssm();
    let ys = simulate_model(&model, 50, &mut replicate_rng(seed, 1))?.observations;
    let ks = kalman_smoother(&model, &ys)?;
    let dense = dense_joint_gaussian(&model, &ys)?;
    let mut worst = relative(ks.log_likelihood, dense.log_likelihood);
    for (k, b) in ks.smoothed.iter().enumerate() {
        worst = worst
            .max((b.mean - dense.mean[k]).abs())
            .max((b.variance - dense.covariance[(k, k)]).abs());
        if k > 0 {
            worst = worst.max((ks.lag_one[k] - dense.lag_one(k)).abs());
        }
    }
    Ok(worst)
}

fn check_hmm_enumeration(seed: u64) -> fsmooth::Result<f64> {
    let hmm = benchmark_hmm();
    let ys = simulate_model(&hmm, 8, &mut replicate_rng(seed, 2))?.observations;
    let fb = hmm_exact_smoothed_functional(&hmm, &ys, &LgssmBenchmark)?;
    let en = hmm_enumerate(&hmm, &ys, &LgssmBenchmark)?;
    Ok(fb.iter().zip(&en).map(|(a, b)| relative(*a, *b)).fold(0.0, f64::max))
}

fn check_constant_identity(seed: u64) -> fsmooth::Result<f64> {
    let model = fsmooth::experiment::benchmark_lgssm();
    let n = 30;
    let ys = simulate_model(&model, n, &mut replicate_rng(seed, 3))?.observations;
    let c = [1.5, -2.0];
    let settings = StudySettings {
        particles: 50,
        checkpoints: vec![n],
        replicates: 1,
        seed,
        estimators: EstimatorKind::ALL.to_vec(),
        lag: Some(3),
        policy: ResamplingPolicy::default(),
        exec: Execution::default(),
    };
    let recs = run_replicate(&model, &ConstantFunctional(c.to_vec()), &ys, &settings, None, 0, Execution::default())?;
    Ok(recs
        .iter()
        .flat_map(|r| r.values.iter().zip(c).map(|(v, c)| relative(*v, n as f64 * c)))
        .fold(0.0, f64::max))
}

pub fn verify(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let seed = cfg.seed.unwrap_or(1);
    let particles = cfg.particles.unwrap_or(200);
    let checks: [(&'static str, f64, fsmooth::Result<f64>); 5] = [
        ("ffbs_equals_fs", 1e-10, check_ffbs_equals_fs(seed, particles)),
        ("kalman_equals_dense", 1e-9, check_kalman_equals_dense(seed)),
        ("hmm_enumeration_equals_forward_backward", 1e-10, check_hmm_enumeration(seed)),
        ("constant_functional_identity", 1e-12, check_constant_identity(seed)),
        ("step_discount_sum_alpha_one", 0.005, step_discount_sum(1.0, 10_000).map(|v| (v - 0.5).abs())),
    ];
    let mut failed = Vec::new();
    let mut results = Vec::new();
    for (check, tolerance, outcome) in checks {
        let value = outcome.unwrap_or_else(|e| {
            log::error!("{check}: {e}");
            f64::NAN
        });
        let pass = value <= tolerance;
        if !pass {
            failed.push(check);
        }
        let r = CheckResult {
            check,
            pass,
            value,
            tolerance,
        };
        println!("{}", serde_json::to_string(&r).expect("plain struct"));
        results.push(r);
    }
    if cfg.out.is_some() {
        write_json(&cfg.out_dir(), "verify.json", &results)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}
