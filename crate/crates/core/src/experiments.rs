//! Scenario batches, spectrum envelopes, method comparison and Friedman ranks.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{StateVec, SystemState, CONTROL_NAMES, N_CONTROL, N_STATE, STATE_NAMES};
use crate::exec::map_runs;
use crate::trainer::{
    train_episode, ControlMask, Diagnostics, ProblemSetup, ReplayKind, RunResult, TrainerConfig,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid rank input: {0}")]
    InvalidInput(String),
    #[error("invalid experiment configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioId {
    F1,
    F2,
    F3,
    F4,
    F5,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [
        ScenarioId::F1,
        ScenarioId::F2,
        ScenarioId::F3,
        ScenarioId::F4,
        ScenarioId::F5,
    ];

    /// Active controls in `(w1, w2, u1, u2, alpha)` order.
    pub fn mask(&self) -> ControlMask {
        let m = match self {
            ScenarioId::F1 => [true, true, false, false, false],
            ScenarioId::F2 => [false, false, true, true, true],
            ScenarioId::F3 => [false, false, true, true, false],
            ScenarioId::F4 => [false, false, false, false, true],
            ScenarioId::F5 => [true; N_CONTROL],
        };
        ControlMask(m)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::F1 => "f1",
            ScenarioId::F2 => "f2",
            ScenarioId::F3 => "f3",
            ScenarioId::F4 => "f4",
            ScenarioId::F5 => "f5",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            ScenarioId::F1 => "prevention only (w1, w2)",
            ScenarioId::F2 => "vaccination and screening (u1, u2, alpha)",
            ScenarioId::F3 => "vaccination only (u1, u2)",
            ScenarioId::F4 => "screening only (alpha)",
            ScenarioId::F5 => "all controls",
        }
    }

    /// Parses `f3`, a comma list `f1,f4`, or an inclusive range `f1..f5`.
    pub fn parse_list(s: &str) -> Result<Vec<ScenarioId>, String> {
        let s = s.trim();
        if let Some((a, b)) = s.split_once("..") {
            let a: ScenarioId = a.parse()?;
            let b: ScenarioId = b.parse()?;
            if a > b {
                return Err(format!("empty scenario range `{s}`"));
            }
            return Ok(ScenarioId::ALL
                .into_iter()
                .filter(|id| *id >= a && *id <= b)
                .collect());
        }
        s.split(',').map(str::parse).collect()
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f1" => Ok(ScenarioId::F1),
            "f2" => Ok(ScenarioId::F2),
            "f3" => Ok(ScenarioId::F3),
            "f4" => Ok(ScenarioId::F4),
            "f5" => Ok(ScenarioId::F5),
            other => Err(format!("unknown scenario `{other}` (expected f1..f5)")),
        }
    }
}

/// Uniform initial conditions, rejection-sampled onto the valid simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialStateSampler {
    /// Upper bound for `U_f`, `I_f` and `I_m`.
    pub infected_max: f64,
    /// Upper bound for `V_f` and `V_m`.
    pub vaccinated_max: f64,
}

impl Default for InitialStateSampler {
    fn default() -> Self {
        Self {
            infected_max: 0.2,
            vaccinated_max: 0.5,
        }
    }
}

const MAX_REJECTIONS: usize = 10_000;

impl InitialStateSampler {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        for (name, v) in [
            ("infected_max", self.infected_max),
            ("vaccinated_max", self.vaccinated_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ExperimentError::Config(format!(
                    "sampler.{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SystemState {
        let draw = |rng: &mut R, hi: f64| {
            if hi > 0.0 {
                rng.random_range(0.0..=hi)
            } else {
                0.0
            }
        };
        for _ in 0..MAX_REJECTIONS {
            let epi: StateVec = [
                draw(rng, self.infected_max),
                draw(rng, self.infected_max),
                draw(rng, self.vaccinated_max),
                draw(rng, self.infected_max),
                draw(rng, self.vaccinated_max),
            ];
            let s = SystemState::new(epi, 0.0);
            if s.is_valid() {
                return s;
            }
        }
        // bounds are validated into [0, 1]; the disease-free origin is always valid
        SystemState::ZERO
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: ScenarioId,
    pub mask: ControlMask,
    pub runs: u64,
    pub sampler: InitialStateSampler,
    pub horizon: f64,
    pub dt: f64,
}

impl ScenarioConfig {
    pub fn new(id: ScenarioId, runs: u64, horizon: f64, dt: f64) -> Self {
        Self {
            id,
            mask: id.mask(),
            runs,
            sampler: InitialStateSampler::default(),
            horizon,
            dt,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.runs == 0 {
            return Err(ExperimentError::Config("runs must be >= 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ExperimentError::Config(format!(
                "horizon must be > 0, got {}",
                self.horizon
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ExperimentError::Config(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        self.sampler.validate()
    }
}

/// Channels tracked by the spectrum envelopes.
pub const N_CHANNELS: usize = N_STATE + 1 + N_CONTROL + 1;

pub fn channel_names() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = STATE_NAMES.to_vec();
    v.push("j_cost");
    v.extend(CONTROL_NAMES);
    v.push("objective");
    v
}

pub type ChannelRow = [f64; N_CHANNELS];

pub fn run_channels(run: &RunResult) -> Vec<ChannelRow> {
    run.trajectory
        .iter()
        .map(|p| {
            let mut row = [0.0; N_CHANNELS];
            row[..N_STATE + 1].copy_from_slice(&p.state.augmented());
            row[N_STATE + 1..N_STATE + 1 + N_CONTROL].copy_from_slice(&p.filtered);
            row[N_CHANNELS - 1] = p.objective;
            row
        })
        .collect()
}

/// Stream indices for run `r`: the initial condition and the trainer's own
/// randomness come from disjoint streams of the same base seed, and every
/// method sees the same pair.
pub fn x0_stream(run: u64) -> u64 {
    2 * run
}

pub fn exploration_stream(run: u64) -> u64 {
    2 * run + 1
}

pub fn initial_state(sampler: &InitialStateSampler, seed: u64, run: u64) -> SystemState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(x0_stream(run));
    sampler.sample(&mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: u64,
    pub x0: SystemState,
    pub final_state: SystemState,
    pub objective: f64,
    pub spread: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_id: u64,
    pub x0: SystemState,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub scenario: ScenarioId,
    pub method: ReplayKind,
    pub runs: u64,
    pub seed: u64,
    pub times: Vec<f64>,
    pub min: Vec<ChannelRow>,
    pub mean: Vec<ChannelRow>,
    pub max: Vec<ChannelRow>,
    /// Successful runs, in run order.
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

impl SpectrumSummary {
    pub fn final_objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn mean_objective(&self) -> Option<f64> {
        mean(&self.final_objectives())
    }

    pub fn objective_of(&self, run_id: u64) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.run_id == run_id)
            .map(|r| r.objective)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn std_dev(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    if v.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (v.len() - 1) as f64).sqrt())
}

/// Pointwise min / mean / max over equally long channel series.
pub fn envelope(series: &[Vec<ChannelRow>]) -> (Vec<ChannelRow>, Vec<ChannelRow>, Vec<ChannelRow>) {
    let Some(len) = series.iter().map(Vec::len).min() else {
        return (Vec::new(), Vec::new(), Vec::new());
    };
    let n = series.len() as f64;
    let mut lo = vec![[f64::INFINITY; N_CHANNELS]; len];
    let mut hi = vec![[f64::NEG_INFINITY; N_CHANNELS]; len];
    let mut avg = vec![[0.0; N_CHANNELS]; len];
    for s in series {
        for (k, row) in s.iter().take(len).enumerate() {
            for c in 0..N_CHANNELS {
                lo[k][c] = lo[k][c].min(row[c]);
                hi[k][c] = hi[k][c].max(row[c]);
                avg[k][c] += row[c];
            }
        }
    }
    for k in 0..len {
        for c in 0..N_CHANNELS {
            // summation rounding can push the mean a few ulps outside the range
            avg[k][c] = (avg[k][c] / n).clamp(lo[k][c], hi[k][c]);
        }
    }
    (lo, avg, hi)
}

fn episode_config(
    base: &TrainerConfig,
    sc: &ScenarioConfig,
    method: ReplayKind,
    seed: u64,
    run: u64,
) -> TrainerConfig {
    TrainerConfig {
        horizon: sc.horizon,
        dt: sc.dt,
        replay_kind: method,
        seed,
        stream: exploration_stream(run),
        ..*base
    }
}

/// Runs `sc.runs` seeded episodes of one method and aggregates their
/// envelopes. Individual run failures are collected, not propagated.
pub fn run_scenario(
    sc: &ScenarioConfig,
    method: ReplayKind,
    trainer: &TrainerConfig,
    setup: &ProblemSetup,
    seed: u64,
) -> Result<SpectrumSummary, ExperimentError> {
    sc.validate()?;
    let probe = episode_config(trainer, sc, method, seed, 0);
    probe.validate().map_err(ExperimentError::Config)?;

    let outcomes = map_runs(sc.runs, |run| {
        let x0 = initial_state(&sc.sampler, seed, run);
        let cfg = episode_config(trainer, sc, method, seed, run);
        match train_episode(&cfg, setup, &x0, sc.mask, run) {
            Ok(r) => Ok((
                RunRecord {
                    run_id: run,
                    x0,
                    final_state: r.final_state(),
                    objective: r.objective,
                    spread: r.spread,
                    diagnostics: r.diagnostics.clone(),
                },
                run_channels(&r),
            )),
            Err(e) => Err(RunFailure {
                run_id: run,
                x0,
                message: e.to_string(),
            }),
        }
    });

    let mut records = Vec::new();
    let mut series = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok((rec, ch)) => {
                records.push(rec);
                series.push(ch);
            }
            Err(f) => failures.push(f),
        }
    }
    let (min, mean, max) = envelope(&series);
    let times = (0..min.len()).map(|k| k as f64 * sc.dt).collect();
    Ok(SpectrumSummary {
        scenario: sc.id,
        method,
        runs: sc.runs,
        seed,
        times,
        min,
        mean,
        max,
        records,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanTable {
    /// `ranks[scenario][method]`, 1 = smallest objective.
    pub ranks: Vec<Vec<f64>>,
    pub average: Vec<f64>,
    /// Rows where every method tied.
    pub degenerate_rows: Vec<usize>,
}

/// Ranks each row (a scenario) across its columns (methods), averaging ranks
/// over ties, then averages each column over rows.
pub fn friedman_ranks(values: &[Vec<f64>]) -> Result<FriedmanTable, ExperimentError> {
    let m = values
        .first()
        .map(Vec::len)
        .ok_or_else(|| ExperimentError::InvalidInput("no scenarios".into()))?;
    if m == 0 {
        return Err(ExperimentError::InvalidInput("no methods".into()));
    }
    let mut ranks = Vec::with_capacity(values.len());
    let mut degenerate_rows = Vec::new();
    for (i, row) in values.iter().enumerate() {
        if row.len() != m {
            return Err(ExperimentError::InvalidInput(format!(
                "row {i} has {} entries, expected {m}",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(ExperimentError::InvalidInput(format!(
                "entry ({i}, {j}) is not finite"
            )));
        }
        if m > 1 && row.iter().all(|v| *v == row[0]) {
            degenerate_rows.push(i);
        }
        ranks.push(average_ranks(row));
    }
    let average = (0..m)
        .map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / ranks.len() as f64)
        .collect();
    Ok(FriedmanTable {
        ranks,
        average,
        degenerate_rows,
    })
}

fn average_ranks(row: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    let mut out = vec![0.0; row.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && row[order[j + 1]] == row[order[i]] {
            j += 1;
        }
        // positions i..=j share ranks i+1..=j+1
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub const COMPARISON_STATISTIC: &str =
    "mean over successful runs of the final discounted objective";

pub const COMPARISON_CAVEAT: &str = "Objective values depend on the random seeds, discount rate, state weighting, \
horizon and run statistic chosen here. They support a directional ordering of the replay methods under \
identical settings and paired seeds, not comparison with externally reported absolute values. Scenario \
masks: f1 = (w1, w2), f2 = (u1, u2, alpha), f3 = (u1, u2), f4 = (alpha), f5 = all controls.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub scenario: ScenarioId,
    pub method: ReplayKind,
    pub runs: u64,
    pub succeeded: usize,
    pub failed: usize,
    pub mean_objective: Option<f64>,
    pub std_objective: Option<f64>,
    pub mean_spread: Option<f64>,
    pub safety_interventions: u64,
    pub clamp_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub scenario: ScenarioId,
    /// Differences are `objective(method) − objective(baseline)` per run.
    pub baseline: ReplayKind,
    pub method: ReplayKind,
    pub run_ids: Vec<u64>,
    pub differences: Vec<f64>,
    pub mean: Option<f64>,
    /// Runs where `method` did at least as well as `baseline`.
    pub wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub base_seed: u64,
    pub runs: u64,
    pub x0_streams: Vec<u64>,
    pub exploration_streams: Vec<u64>,
    pub x0: Vec<SystemState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub caveat: String,
    pub statistic: String,
    pub scenarios: Vec<ScenarioId>,
    pub methods: Vec<ReplayKind>,
    pub horizon: f64,
    pub dt: f64,
    pub trainer: TrainerConfig,
    pub seeds: SeedManifest,
    pub cells: Vec<CellStats>,
    /// `objective_matrix[scenario][method]`; `None` when every run in the cell failed.
    pub objective_matrix: Vec<Vec<Option<f64>>>,
    pub friedman: Option<FriedmanTable>,
    pub paired: Vec<PairedDifference>,
    #[serde(skip)]
    pub spectra: Vec<SpectrumSummary>,
}

impl ComparisonReport {
    pub fn total_failures(&self) -> usize {
        self.cells.iter().map(|c| c.failed).sum()
    }

    pub fn spectrum(&self, scenario: ScenarioId, method: ReplayKind) -> Option<&SpectrumSummary> {
        self.spectra
            .iter()
            .find(|s| s.scenario == scenario && s.method == method)
    }
}

fn cell_stats(s: &SpectrumSummary) -> CellStats {
    let objectives = s.final_objectives();
    let spreads: Vec<f64> = s.records.iter().map(|r| r.spread).collect();
    CellStats {
        scenario: s.scenario,
        method: s.method,
        runs: s.runs,
        succeeded: s.records.len(),
        failed: s.failures.len(),
        mean_objective: mean(&objectives),
        std_objective: std_dev(&objectives),
        mean_spread: mean(&spreads),
        safety_interventions: s
            .records
            .iter()
            .map(|r| r.diagnostics.safety_interventions)
            .sum(),
        clamp_events: s.records.iter().map(|r| r.diagnostics.clamp_events).sum(),
    }
}

/// Paired per-run differences of `method` against `baseline`.
pub fn paired_difference(baseline: &SpectrumSummary, method: &SpectrumSummary) -> PairedDifference {
    let mut run_ids = Vec::new();
    let mut differences = Vec::new();
    for rec in &method.records {
        if let Some(b) = baseline.objective_of(rec.run_id) {
            run_ids.push(rec.run_id);
            differences.push(rec.objective - b);
        }
    }
    PairedDifference {
        scenario: method.scenario,
        baseline: baseline.method,
        method: method.method,
        wins: differences.iter().filter(|d| **d <= 0.0).count(),
        mean: mean(&differences),
        run_ids,
        differences,
    }
}

/// Runs every (scenario, method) cell on the same seeds and ranks the methods.
pub fn compare_methods(
    scenarios: &[ScenarioConfig],
    methods: &[ReplayKind],
    trainer: &TrainerConfig,
    setup: &ProblemSetup,
    seed: u64,
) -> Result<ComparisonReport, ExperimentError> {
    let first = scenarios
        .first()
        .ok_or_else(|| ExperimentError::Config("no scenarios selected".into()))?;
    if methods.is_empty() {
        return Err(ExperimentError::Config("no methods selected".into()));
    }
    if scenarios.iter().any(|s| {
        s.runs != first.runs
            || s.horizon != first.horizon
            || s.dt != first.dt
            || s.sampler != first.sampler
    }) {
        return Err(ExperimentError::Config(
            "all scenarios must share runs, horizon, dt and sampler".into(),
        ));
    }

    let mut spectra = Vec::with_capacity(scenarios.len() * methods.len());
    for sc in scenarios {
        for &m in methods {
            spectra.push(run_scenario(sc, m, trainer, setup, seed)?);
        }
    }

    let cells: Vec<CellStats> = spectra.iter().map(cell_stats).collect();
    let objective_matrix: Vec<Vec<Option<f64>>> = cells
        .chunks(methods.len())
        .map(|row| row.iter().map(|c| c.mean_objective).collect())
        .collect();
    let complete: Option<Vec<Vec<f64>>> = objective_matrix
        .iter()
        .map(|row| row.iter().copied().collect::<Option<Vec<f64>>>())
        .collect();
    let friedman = complete.map(|m| friedman_ranks(&m)).transpose()?;

    let mut paired = Vec::new();
    for row in spectra.chunks(methods.len()) {
        for a in 0..row.len() {
            for b in a + 1..row.len() {
                paired.push(paired_difference(&row[a], &row[b]));
            }
        }
    }

    let seeds = SeedManifest {
        base_seed: seed,
        runs: first.runs,
        x0_streams: (0..first.runs).map(x0_stream).collect(),
        exploration_streams: (0..first.runs).map(exploration_stream).collect(),
        x0: (0..first.runs)
            .map(|r| initial_state(&first.sampler, seed, r))
            .collect(),
    };

    Ok(ComparisonReport {
        caveat: COMPARISON_CAVEAT.to_string(),
        statistic: COMPARISON_STATISTIC.to_string(),
        scenarios: scenarios.iter().map(|s| s.id).collect(),
        methods: methods.to_vec(),
        horizon: first.horizon,
        dt: first.dt,
        trainer: *trainer,
        seeds,
        cells,
        objective_matrix,
        friedman,
        paired,
        spectra,
    })
}
