//! Closed-loop training episode.
//!
//! Each outer step computes the critic's control, masks it to the active
//! scenario inputs, passes it through the safety filter, integrates one `dt`,
//! stores the `(state, control)` sample, runs the replay lifecycle, and then
//! optimises the critic on a fixed mini-batch until the weight change passes
//! the convergence gate or the inner iteration cap is reached.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::{
    control_effort_cost, control_law, features, tracking_error, value, BatchObjective, CostConfig,
    CriticError, CriticWeights, N_FEATURES,
};
use crate::dynamics::{
    integrate_step, ControlArray, ControlVector, DynamicsError, HpvParameters, SystemState,
    N_CONTROL,
};
use crate::optimizer::{OptimizerConfig, OptimizerError, OptimizerState};
use crate::replay::{
    make_minibatch, Cluster, FastBuffer, ReplayConfig, ReplayError, RerBuffer, Sample, SlowBuffer,
};
use crate::safety::{hpv_barriers, safety_filter, BarrierSet, Intervention, DEFAULT_GAMMA0};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayKind {
    Rer,
    Cber,
    Sodacer,
}

impl ReplayKind {
    pub const ALL: [ReplayKind; 3] = [ReplayKind::Rer, ReplayKind::Cber, ReplayKind::Sodacer];

    pub fn as_str(&self) -> &'static str {
        match self {
            ReplayKind::Rer => "rer",
            ReplayKind::Cber => "cber",
            ReplayKind::Sodacer => "sodacer",
        }
    }
}

impl fmt::Display for ReplayKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReplayKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rer" => Ok(ReplayKind::Rer),
            "cber" => Ok(ReplayKind::Cber),
            "sodacer" => Ok(ReplayKind::Sodacer),
            other => Err(format!(
                "unknown replay method `{other}` (expected rer, cber or sodacer)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum WeightInit {
    #[default]
    Zeros,
    /// Independent draws from `uniform(−half_width, half_width)`.
    Uniform { half_width: f64 },
}

/// Which controls a scenario lets the critic use, in `(w1, w2, u1, u2, alpha)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlMask(pub [bool; N_CONTROL]);

impl ControlMask {
    pub const ALL: ControlMask = ControlMask([true; N_CONTROL]);
    pub const NONE: ControlMask = ControlMask([false; N_CONTROL]);

    pub fn apply(&self, u: &ControlArray) -> ControlArray {
        std::array::from_fn(|i| if self.0[i] { u[i] } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Weight-convergence tolerance `δ`.
    pub delta: f64,
    pub max_inner_iters: usize,
    /// Horizon `T` in years.
    pub horizon: f64,
    pub dt: f64,
    pub replay_kind: ReplayKind,
    pub seed: u64,
    /// Independent ChaCha stream within `seed`.
    pub stream: u64,
    pub w0: WeightInit,
    /// Outer steps between slow-buffer snapshots; 0 keeps only the final one.
    pub snapshot_every: usize,
    /// Keep a per-step log of safety interventions.
    pub log_safety: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            delta: 1e-4,
            max_inner_iters: 200,
            horizon: 20.0,
            dt: 0.01,
            replay_kind: ReplayKind::Sodacer,
            seed: 0,
            stream: 0,
            w0: WeightInit::Zeros,
            snapshot_every: 100,
            log_safety: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(format!("trainer.delta must be > 0, got {}", self.delta));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(format!("trainer.horizon must be > 0, got {}", self.horizon));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(format!("trainer.dt must be > 0, got {}", self.dt));
        }
        if let WeightInit::Uniform { half_width } = self.w0 {
            if !(half_width >= 0.0 && half_width.is_finite()) {
                return Err(format!(
                    "trainer.w0.half_width must be >= 0, got {half_width}"
                ));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        step_count(self.horizon, self.dt)
    }
}

fn step_count(horizon: f64, dt: f64) -> usize {
    (horizon / dt).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetySettings {
    pub enabled: bool,
    pub gamma0: f64,
}

impl Default for SafetySettings {
    fn default() -> Self {
        Self {
            enabled: true,
            gamma0: DEFAULT_GAMMA0,
        }
    }
}

/// Everything an episode needs besides its own trainer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSetup {
    pub params: HpvParameters,
    pub cost: CostConfig,
    pub replay: ReplayConfig,
    pub optimizer: OptimizerConfig,
    /// `None` disables the barrier filter; controls are then only clamped
    /// into their admissible intervals.
    pub barriers: Option<BarrierSet>,
}

impl Default for ProblemSetup {
    fn default() -> Self {
        Self::new(
            HpvParameters::default(),
            CostConfig::default(),
            ReplayConfig::default(),
            OptimizerConfig::default(),
            SafetySettings::default(),
        )
    }
}

impl ProblemSetup {
    pub fn new(
        params: HpvParameters,
        cost: CostConfig,
        replay: ReplayConfig,
        optimizer: OptimizerConfig,
        safety: SafetySettings,
    ) -> Self {
        let barriers = safety.enabled.then(|| hpv_barriers(&params, safety.gamma0));
        Self {
            params,
            cost,
            replay,
            optimizer,
            barriers,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("sample bookkeeping out of balance: {0}")]
    MassImbalance(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("outer step {step} (t = {t:.4}): {source}")]
    Step {
        step: usize,
        t: f64,
        #[source]
        source: StepError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: SystemState,
    /// Critic output after the scenario mask, before the safety filter.
    pub raw: ControlArray,
    /// Control actually applied over `[t, t + dt)`.
    pub filtered: ControlArray,
    pub value: f64,
    /// Discounted running cost accumulated up to `t`.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferSnapshot {
    pub step: usize,
    pub t: f64,
    pub fast_len: usize,
    pub forgotten_mass: u64,
    pub clusters: Vec<Cluster>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub outer_steps: usize,
    pub clamp_events: u64,
    pub safety_interventions: u64,
    pub safety_backoffs: u64,
    pub budget_cutoffs: u64,
    pub inner_iterations: u64,
    pub inner_cap_hits: u64,
    pub samples_generated: u64,
    pub fast_len: usize,
    pub slow_mass: u64,
    pub forgotten_mass: u64,
    pub evicted: u64,
    pub clusters_created: u64,
    pub clusters_pruned: u64,
    pub clusters_merged: u64,
    pub final_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyLogEntry {
    pub step: usize,
    pub t: f64,
    pub intervention: Intervention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: u64,
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_weights: CriticWeights,
    /// Discounted accumulation of `eᵀQe + U(u)` over the horizon.
    pub objective: f64,
    /// `∫ (U_f + I_f + I_m) dt` in `A0` units.
    pub spread: f64,
    pub buffer_trace: Vec<BufferSnapshot>,
    pub diagnostics: Diagnostics,
    pub safety_log: Vec<SafetyLogEntry>,
}

impl RunResult {
    pub fn final_state(&self) -> SystemState {
        self.trajectory
            .last()
            .map(|p| p.state)
            .unwrap_or(SystemState::ZERO)
    }
}

/// Discounted running cost of one step, `e^{−νt}(eᵀQe + U(u))·dt`.
fn step_cost(
    state: &SystemState,
    u: &ControlArray,
    t: f64,
    dt: f64,
    cost: &CostConfig,
) -> Result<f64, CriticError> {
    let e = tracking_error(state, cost);
    let running = cost.state_penalty(&e) + control_effort_cost(u, cost)?;
    Ok((-cost.nu * t).exp() * running * dt)
}

/// Outcome of one inner optimisation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerOutcome {
    pub weights: CriticWeights,
    pub optimizer: OptimizerState,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs optimizer updates on a fixed mini-batch until
/// `φ(e)ᵀ|ΔW| ≤ δ` and `‖ΔW‖∞ ≤ δ` hold for the latest update, or until
/// `max_iters` updates have been made.
pub fn inner_loop(
    objective: &BatchObjective,
    phi: &[f64; N_FEATURES],
    mut w: CriticWeights,
    mut opt: OptimizerState,
    delta: f64,
    max_iters: usize,
) -> Result<InnerOutcome, OptimizerError> {
    for it in 1..=max_iters {
        let grad = objective.gradient(&w);
        let (next_opt, next_w) = opt.update(&w, &grad)?;
        let dw: [f64; N_FEATURES] = std::array::from_fn(|i| (next_w.0[i] - w.0[i]).abs());
        w = next_w;
        opt = next_opt;
        let weighted: f64 = phi.iter().zip(&dw).map(|(p, d)| p * d).sum();
        let largest = dw.iter().fold(0.0f64, |a, &b| a.max(b));
        if weighted <= delta && largest <= delta {
            return Ok(InnerOutcome {
                weights: w,
                optimizer: opt,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(InnerOutcome {
        weights: w,
        optimizer: opt,
        iterations: max_iters,
        converged: false,
    })
}

enum Memory {
    Dual {
        fast: FastBuffer,
        slow: SlowBuffer,
        self_organizing: bool,
    },
    Uniform(RerBuffer),
}

impl Memory {
    fn new(kind: ReplayKind, cfg: &ReplayConfig) -> Self {
        match kind {
            ReplayKind::Rer => Memory::Uniform(RerBuffer::new(cfg.rer_capacity)),
            ReplayKind::Cber | ReplayKind::Sodacer => Memory::Dual {
                fast: FastBuffer::new(),
                slow: SlowBuffer::new(),
                self_organizing: kind == ReplayKind::Sodacer,
            },
        }
    }

    fn store(
        &mut self,
        s: Sample,
        step: usize,
        cfg: &ReplayConfig,
        diag: &mut Diagnostics,
    ) -> Result<(), ReplayError> {
        match self {
            Memory::Uniform(buf) => {
                buf.push(s);
                diag.evicted = buf.evicted();
            }
            Memory::Dual {
                fast,
                slow,
                self_organizing,
            } => {
                fast.push(s);
                if fast.len() > cfg.fast_capacity {
                    let old = fast
                        .pop_oldest()
                        .expect("fast buffer over capacity is non-empty");
                    let absorbed = if *self_organizing {
                        slow.absorb(&old, cfg)?
                    } else {
                        slow.absorb_static(&old, cfg)?
                    };
                    if matches!(absorbed, crate::replay::Absorption::NewCluster(_)) {
                        diag.clusters_created += 1;
                    }
                }
                if *self_organizing {
                    if (step + 1).is_multiple_of(cfg.forget_every) && !slow.is_empty() {
                        slow.apply_forgetting(cfg);
                    }
                    diag.clusters_pruned += slow.prune_narrow(cfg).len() as u64;
                    diag.clusters_merged += slow.merge_similar(cfg).len() as u64;
                }
                diag.fast_len = fast.len();
                diag.slow_mass = slow.total_count();
                diag.forgotten_mass = slow.forgotten_mass();
                diag.final_clusters = slow.len();
            }
        }
        Ok(())
    }

    fn check_balance(&self, generated: u64) -> Result<(), StepError> {
        let (held, lost) = match self {
            Memory::Uniform(buf) => (buf.len() as u64, buf.evicted()),
            Memory::Dual { fast, slow, .. } => (
                fast.len() as u64 + slow.total_count(),
                slow.forgotten_mass(),
            ),
        };
        if held + lost != generated {
            return Err(StepError::MassImbalance(format!(
                "held {held} + discarded {lost} != generated {generated}"
            )));
        }
        Ok(())
    }

    fn minibatch<R: Rng>(
        &self,
        cfg: &ReplayConfig,
        rng: &mut R,
    ) -> Result<Vec<Sample>, ReplayError> {
        match self {
            Memory::Uniform(buf) => buf.sample(cfg.rer_batch, rng),
            Memory::Dual { fast, slow, .. } => make_minibatch(fast, slow, cfg, rng),
        }
    }

    fn snapshot(&self, step: usize, t: f64) -> Option<BufferSnapshot> {
        match self {
            Memory::Uniform(_) => None,
            Memory::Dual { fast, slow, .. } => Some(BufferSnapshot {
                step,
                t,
                fast_len: fast.len(),
                forgotten_mass: slow.forgotten_mass(),
                clusters: slow.clusters().to_vec(),
            }),
        }
    }
}

fn filter_control(
    state: &SystemState,
    raw: &ControlArray,
    setup: &ProblemSetup,
) -> (ControlArray, Option<Intervention>) {
    match &setup.barriers {
        Some(b) => {
            let out = safety_filter(state, raw, b, &setup.params);
            (out.control.to_array(), Some(out.record))
        }
        None => {
            let upper = setup.params.control_upper();
            (std::array::from_fn(|i| raw[i].clamp(0.0, upper[i])), None)
        }
    }
}

fn initial_weights(init: WeightInit, rng: &mut ChaCha8Rng) -> CriticWeights {
    match init {
        WeightInit::Zeros => CriticWeights::zeros(),
        WeightInit::Uniform { half_width } if half_width > 0.0 => {
            CriticWeights(std::array::from_fn(|_| {
                rng.random_range(-half_width..half_width)
            }))
        }
        WeightInit::Uniform { .. } => CriticWeights::zeros(),
    }
}

/// Runs one closed-loop learning episode from `x0` over `[0, T]`.
pub fn train_episode(
    cfg: &TrainerConfig,
    setup: &ProblemSetup,
    x0: &SystemState,
    mask: ControlMask,
    run_id: u64,
) -> Result<RunResult, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    setup
        .replay
        .validate()
        .map_err(|e| TrainError::Config(e.to_string()))?;
    setup
        .optimizer
        .validate()
        .map_err(|e| TrainError::Config(e.to_string()))?;
    setup
        .cost
        .validate()
        .map_err(|e| TrainError::Config(e.to_string()))?;
    setup
        .params
        .validate()
        .map_err(|e| TrainError::Config(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream);

    let n = cfg.steps();
    let mut w = initial_weights(cfg.w0, &mut rng);
    let mut opt = OptimizerState::new(setup.optimizer);
    let mut memory = Memory::new(cfg.replay_kind, &setup.replay);
    let mut diag = Diagnostics::default();
    let mut trajectory = Vec::with_capacity(n + 1);
    let mut buffer_trace = Vec::new();
    let mut safety_log = Vec::new();
    let mut x = *x0;
    let mut objective = 0.0;
    let mut spread = 0.0;

    for step in 0..=n {
        let t = step as f64 * cfg.dt;
        let fail = |source: StepError| TrainError::Step { step, t, source };

        let raw = mask.apply(&control_law(&x, &w, &setup.cost, &setup.params));
        let (u, record) = filter_control(&x, &raw, setup);
        let e = tracking_error(&x, &setup.cost);
        trajectory.push(TrajectoryPoint {
            t,
            state: x,
            raw,
            filtered: u,
            value: value(&e, &w),
            objective,
        });
        if step == n {
            break;
        }

        if let Some(rec) = record {
            if rec.is_active() {
                diag.safety_interventions += 1;
                diag.safety_backoffs += rec.backoffs.len() as u64;
                diag.budget_cutoffs += u64::from(rec.budget_cutoff);
                if cfg.log_safety {
                    safety_log.push(SafetyLogEntry {
                        step,
                        t,
                        intervention: rec,
                    });
                }
            }
        }

        objective += step_cost(&x, &u, t, cfg.dt, &setup.cost).map_err(|e| fail(e.into()))?;
        spread += x.total_infections() * cfg.dt;
        let sample = Sample {
            x: x.epi(),
            u,
            t,
            run_id,
        };
        let next = integrate_step(&x, &ControlVector::from_array(u), &setup.params, cfg.dt)
            .map_err(|e| fail(e.into()))?;
        diag.clamp_events += u64::from(next.clamp_events);

        diag.samples_generated += 1;
        memory
            .store(sample, step, &setup.replay, &mut diag)
            .map_err(|e| fail(e.into()))?;
        memory.check_balance(diag.samples_generated).map_err(fail)?;

        if cfg.max_inner_iters > 0 {
            let batch = memory
                .minibatch(&setup.replay, &mut rng)
                .map_err(|e| fail(e.into()))?;
            let batch_obj = BatchObjective::new(&batch, &setup.cost, &setup.params)
                .map_err(|e| fail(e.into()))?;
            let phi = features(&e);
            let out = inner_loop(&batch_obj, &phi, w, opt, cfg.delta, cfg.max_inner_iters)
                .map_err(|e| fail(e.into()))?;
            diag.inner_iterations += out.iterations as u64;
            diag.inner_cap_hits += u64::from(!out.converged);
            w = out.weights;
            opt = out.optimizer;
        }

        if cfg.snapshot_every > 0 && (step + 1) % cfg.snapshot_every == 0 {
            buffer_trace.extend(memory.snapshot(step + 1, t + cfg.dt));
        }
        diag.outer_steps += 1;
        x = next.state;
    }
    buffer_trace.extend(memory.snapshot(n, n as f64 * cfg.dt));

    Ok(RunResult {
        run_id,
        trajectory,
        final_weights: w,
        objective,
        spread,
        buffer_trace,
        diagnostics: diag,
        safety_log,
    })
}

/// Open-loop trajectory under constant controls; no critic, no replay.
pub fn rollout_constant(
    controls: &ControlVector,
    params: &HpvParameters,
    cost: &CostConfig,
    x0: &SystemState,
    horizon: f64,
    dt: f64,
) -> Result<RunResult, TrainError> {
    if !(dt > 0.0 && dt.is_finite()) || !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(TrainError::Config(format!(
            "horizon must be >= 0 and dt > 0, got horizon = {horizon}, dt = {dt}"
        )));
    }
    let n = step_count(horizon, dt);
    let u = controls.to_array();
    let mut x = *x0;
    let mut trajectory = Vec::with_capacity(n + 1);
    let mut diag = Diagnostics::default();
    let mut objective = 0.0;
    let mut spread = 0.0;
    for step in 0..=n {
        let t = step as f64 * dt;
        trajectory.push(TrajectoryPoint {
            t,
            state: x,
            raw: u,
            filtered: u,
            value: 0.0,
            objective,
        });
        if step == n {
            break;
        }
        let fail = |source: StepError| TrainError::Step { step, t, source };
        objective += step_cost(&x, &u, t, dt, cost).map_err(|e| fail(e.into()))?;
        spread += x.total_infections() * dt;
        let next = integrate_step(&x, controls, params, dt).map_err(|e| fail(e.into()))?;
        diag.clamp_events += u64::from(next.clamp_events);
        diag.outer_steps += 1;
        x = next.state;
    }
    Ok(RunResult {
        run_id: 0,
        trajectory,
        final_weights: CriticWeights::zeros(),
        objective,
        spread,
        buffer_trace: Vec::new(),
        diagnostics: diag,
        safety_log: Vec::new(),
    })
}
