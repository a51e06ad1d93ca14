use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::em::MaximizationMap;
use super::schedule::StepSchedule;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filter::{bootstrap_step, init_particles, ParticleSet, ResamplingPolicy};
use crate::model::{grad_step_log_density, StateSpaceModel};
use crate::smoother::{fs_estimate, AdditiveFunctional, Blend, ForwardSmootherState};

/// `∇_θ log f + ∇_θ log g` at a fixed θ, so that the smoothed sum is the
/// score `∇ log p_θ(y_{0:n})`. The initial term `∇ log μ + ∇ log g(y_0 | ·)`
/// is included unless disabled.
pub struct ScoreFunctional<'a, M> {
    pub model: &'a M,
    pub include_initial: bool,
}

impl<'a, M: StateSpaceModel> ScoreFunctional<'a, M> {
    pub fn new(model: &'a M) -> Self {
        ScoreFunctional {
            model,
            include_initial: true,
        }
    }
}

impl<M: StateSpaceModel> AdditiveFunctional for ScoreFunctional<'_, M> {
    fn dim(&self) -> usize {
        self.model.param_count()
    }
    fn step(&self, x_prev: f64, x_cur: f64, y: f64, out: &mut [f64]) {
        grad_step_log_density(self.model, x_prev, x_cur, y, out);
    }
    fn initial(&self, x0: f64, y0: f64, out: &mut [f64]) {
        if !self.include_initial {
            out.fill(0.0);
            return;
        }
        let mut tmp = vec![0.0; out.len()];
        self.model.grad_log_initial(x0, out);
        self.model.grad_log_observation(y0, x0, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += t;
        }
    }
    fn prev_quadratic(&self, x_cur: f64, y: f64, coeffs: &mut [[f64; 3]]) -> bool {
        self.model.grad_step_prev_quadratic(x_cur, y, coeffs)
    }
}

pub const ESTIMATION_CSV_HEADER: &str = "step,parameter_name,value,gamma,ess";

/// Appends one `step,parameter_name,value,gamma,ess` row per parameter.
pub fn write_estimation_rows<W: Write, M: StateSpaceModel>(
    out: &mut W,
    step: usize,
    model: &M,
    gamma: f64,
    ess: f64,
) -> std::io::Result<()> {
    let params = model.params();
    for (name, value) in params.names().iter().zip(params.values()) {
        writeln!(out, "{step},{name},{value},{gamma},{ess}")?;
    }
    Ok(())
}

pub fn save_checkpoint<T: Serialize>(state: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(state)?)?;
    Ok(())
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Settings shared by the online estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineSettings {
    pub particles: usize,
    pub schedule: StepSchedule,
    pub policy: ResamplingPolicy,
    #[serde(default)]
    pub exec: Execution,
}

/// Recursive maximum likelihood stream state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmlState<M> {
    pub model: M,
    pub particles: ParticleSet,
    pub stats: ForwardSmootherState,
    /// `Ŝ_n`, the current cumulative score estimate.
    pub score: Vec<f64>,
    /// Which parameters move.
    pub free: Vec<bool>,
    pub settings: OnlineSettings,
    pub time: usize,
    pub last_gamma: f64,
    pub rng: ChaCha8Rng,
}

impl<M: StateSpaceModel + Clone> RmlState<M> {
    pub fn new(model: M, y0: f64, free: Vec<bool>, settings: OnlineSettings, seed: u64) -> Result<Self> {
        if free.len() != model.param_count() {
            return Err(Error::InvalidInput(format!(
                "free mask has {} entries for {} parameters",
                free.len(),
                model.param_count()
            )));
        }
        settings.schedule.validate()?;
        settings.policy.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = init_particles(&model, y0, settings.particles, &mut rng)?;
        let stats = ForwardSmootherState::init(&particles, &ScoreFunctional::new(&model), y0);
        let score = fs_estimate(&particles, &stats);
        Ok(RmlState {
            model,
            particles,
            stats,
            score,
            free,
            settings,
            time: 0,
            last_gamma: 0.0,
            rng,
        })
    }

    /// Processes `y_n` at θ_n and sets `θ_{n+1} = θ_n + γ_{n+1}(Ŝ_n - Ŝ_{n-1})`
    /// in unconstrained coordinates.
    pub fn step(&mut self, y: f64) -> Result<()> {
        let model = &self.model;
        let next = bootstrap_step(&self.particles, model, y, &self.settings.policy, &mut self.rng)?;
        let func = ScoreFunctional::new(model);
        let stats = self
            .stats
            .update(&self.particles, &next, model, &func, y, Blend::SUM, self.settings.exec)?;
        let score = fs_estimate(&next, &stats);
        let n = self.time + 1;
        let gamma = self.settings.schedule.gamma(n + 1);

        let params = model.params();
        let mut free = params.to_free();
        let jac = params.free_jacobian();
        for (k, u) in free.iter_mut().enumerate() {
            if self.free[k] {
                *u += gamma * jac[k] * (score[k] - self.score[k]);
            }
        }
        let updated = params.from_free(&free)?;
        self.model = self.model.with_params(&updated)?;
        self.particles = next;
        self.stats = stats;
        self.score = score;
        self.time = n;
        self.last_gamma = gamma;
        Ok(())
    }
}

/// Online EM stream state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineEmState<M> {
    pub model: M,
    pub particles: ParticleSet,
    pub stats: ForwardSmootherState,
    /// Discounted summary statistics `𝒮_n`.
    pub summary: Vec<f64>,
    /// M-steps are skipped while fewer than this many observations are in.
    pub warmup: usize,
    pub settings: OnlineSettings,
    pub time: usize,
    pub last_gamma: f64,
    pub skipped_m_steps: usize,
    pub rng: ChaCha8Rng,
}

impl<M: StateSpaceModel + Clone> OnlineEmState<M> {
    pub fn new<F: AdditiveFunctional + ?Sized>(
        model: M,
        y0: f64,
        func: &F,
        warmup: usize,
        settings: OnlineSettings,
        seed: u64,
    ) -> Result<Self> {
        settings.schedule.validate()?;
        settings.policy.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = init_particles(&model, y0, settings.particles, &mut rng)?;
        let stats = ForwardSmootherState::init(&particles, func, y0);
        let summary = fs_estimate(&particles, &stats);
        Ok(OnlineEmState {
            model,
            particles,
            stats,
            summary,
            warmup,
            settings,
            time: 0,
            last_gamma: 0.0,
            skipped_m_steps: 0,
            rng,
        })
    }

    /// Processes `y_{n+1}` at θ_n with discounting `γ_{n+1}`, then applies
    /// the M-step unless still in warmup or `Λ` rejects the statistics.
    pub fn step<F, L>(&mut self, y: f64, func: &F, lambda: &L) -> Result<()>
    where
        F: AdditiveFunctional + ?Sized,
        L: MaximizationMap + ?Sized,
    {
        let n = self.time + 1;
        let gamma = self.settings.schedule.gamma(n);
        let next = bootstrap_step(&self.particles, &self.model, y, &self.settings.policy, &mut self.rng)?;
        let stats = self.stats.update(
            &self.particles,
            &next,
            &self.model,
            func,
            y,
            Blend::discounted(gamma),
            self.settings.exec,
        )?;
        self.summary = fs_estimate(&next, &stats);
        self.particles = next;
        self.stats = stats;
        self.time = n;
        self.last_gamma = gamma;
        if n < self.warmup {
            return Ok(());
        }
        match lambda
            .apply(&self.summary, &self.model.params())
            .and_then(|p| self.model.with_params(&p))
        {
            Ok(m) => self.model = m,
            Err(e @ (Error::LambdaDomain(_) | Error::ParameterDomain { .. })) => {
                log::warn!("step {n}: M-step skipped ({e})");
                self.skipped_m_steps += 1;
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::em::{SvLambda, SvSuffStats};
    use crate::model::{simulate, LinearGaussianModel, ModelParams, StochasticVolatilityModel};
    use crate::smoother::FnFunctional;

    fn settings(particles: usize, schedule: StepSchedule) -> OnlineSettings {
        OnlineSettings {
            particles,
            schedule,
            policy: ResamplingPolicy::default(),
            exec: Execution::default(),
        }
    }

    fn lgssm_data(n: usize) -> (LinearGaussianModel, Vec<f64>) {
        let m = LinearGaussianModel::stationary(0.8, 0.5, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (m, simulate(&m, n, &mut rng).unwrap().observations)
    }

    #[test]
    fn score_structural_zero_for_observation_only_parameter() {
        let (m, _) = lgssm_data(1);
        let f = ScoreFunctional::new(&m);
        let mut g = [0.0; 4];
        m.grad_log_transition(0.3, 0.9, &mut g);
        assert_eq!(g[3], 0.0);
        f.step(0.3, 0.9, 0.5, &mut g);
        assert!(g[3] != 0.0);
    }

    #[test]
    fn rml_with_zero_steps_keeps_theta() {
        let (m, ys) = lgssm_data(50);
        let mut st = RmlState::new(m, ys[0], vec![true; 4], settings(50, StepSchedule::constant(0.0).unwrap()), 1).unwrap();
        for &y in &ys[1..] {
            st.step(y).unwrap();
        }
        assert_eq!(st.model, m);
        assert_eq!(st.time, 50);
    }

    #[test]
    fn rml_mask_freezes_parameters() {
        let (m, ys) = lgssm_data(30);
        let start = LinearGaussianModel { phi: 0.3, ..m };
        let mut st = RmlState::new(start, ys[0], vec![true, false, false, false], settings(50, StepSchedule::power(0.8).unwrap()), 2).unwrap();
        for &y in &ys[1..] {
            st.step(y).unwrap();
        }
        assert_ne!(st.model.phi, 0.3);
        assert_eq!((st.model.sigma_v, st.model.c, st.model.sigma_w), (m.sigma_v, m.c, m.sigma_w));
    }

    #[test]
    fn warmup_holds_theta_exactly() {
        let truth = StochasticVolatilityModel::new(0.8, 0.1, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ys = simulate(&truth, 150, &mut rng).unwrap().observations;
        let start = StochasticVolatilityModel::new(0.1, 1.0, 2.0).unwrap();
        let sched = StepSchedule::new(100, 0.01, 0.6, 50.0).unwrap();
        let mut st = OnlineEmState::new(start, ys[0], &SvSuffStats, 100, settings(100, sched), 5).unwrap();
        for &y in &ys[1..100] {
            st.step(y, &SvSuffStats, &SvLambda).unwrap();
            assert_eq!(st.model, start);
        }
        for &y in &ys[100..] {
            st.step(y, &SvSuffStats, &SvLambda).unwrap();
        }
        assert_ne!(st.model, start);
    }

    struct KeepMap;
    impl MaximizationMap for KeepMap {
        fn dim(&self) -> usize {
            1
        }
        fn apply(&self, _z: &[f64], current: &ModelParams) -> Result<ModelParams> {
            Ok(current.clone())
        }
    }

    #[test]
    fn single_particle_summary_is_moving_average() {
        let (m, ys) = lgssm_data(40);
        let func = FnFunctional::new(1, |a: f64, b: f64, _: f64, out: &mut [f64]| out[0] = a * b);
        let sched = StepSchedule::power(0.7).unwrap();
        let mut st = OnlineEmState::new(m, ys[0], &func, 0, settings(1, sched), 8).unwrap();
        let mut ema = 0.0;
        for &y in &ys[1..] {
            let x_prev = st.particles.positions[0];
            st.step(y, &func, &KeepMap).unwrap();
            let g = st.last_gamma;
            ema = (1.0 - g) * ema + g * x_prev * st.particles.positions[0];
            assert!((st.summary[0] - ema).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_resume_is_exact() {
        let truth = StochasticVolatilityModel::new(0.8, 0.1, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ys = simulate(&truth, 60, &mut rng).unwrap().observations;
        let sched = StepSchedule::new(10, 0.05, 0.6, 5.0).unwrap();
        let mut a = OnlineEmState::new(truth, ys[0], &SvSuffStats, 5, settings(30, sched), 7).unwrap();
        for &y in &ys[1..30] {
            a.step(y, &SvSuffStats, &SvLambda).unwrap();
        }
        let dir = std::env::temp_dir().join(format!("fsmooth-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("em.json");
        save_checkpoint(&a, &path).unwrap();
        let mut b: OnlineEmState<StochasticVolatilityModel> = load_checkpoint(&path).unwrap();
        for &y in &ys[30..] {
            a.step(y, &SvSuffStats, &SvLambda).unwrap();
            b.step(y, &SvSuffStats, &SvLambda).unwrap();
        }
        assert_eq!(a.model, b.model);
        assert_eq!(a.summary, b.summary);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn estimation_rows() {
        let m = StochasticVolatilityModel::new(0.5, 0.2, 1.0).unwrap();
        let mut buf = Vec::new();
        write_estimation_rows(&mut buf, 3, &m, 0.01, 99.5).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "3,phi,0.5,0.01,99.5");
        assert_eq!(text.lines().count(), 3);
    }
}
