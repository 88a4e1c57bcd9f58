use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use sodacer::config::Config;
use sodacer::dynamics::{ControlVector, SystemState};
use sodacer::experiments::{
    compare_methods, run_scenario, ScenarioId, SpectrumSummary, COMPARISON_CAVEAT,
};
use sodacer::output::{
    write_clusters_csv, write_friedman_csv, write_json, write_mean_cost_csv, write_runs_csv,
    write_safety_csv, write_spectrum_csv, write_trajectory_csv,
};
use sodacer::trainer::{rollout_constant, train_episode, ReplayKind, TrainError, TrainerConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_PARTIAL: u8 = 4;
const EXIT_IO: u8 = 1;

const DEFAULT_X0: &str = "0.1,0.05,0.2,0.1,0.1";

#[derive(Parser, Debug)]
#[command(
    name = "sodacer",
    version,
    about = "Safe critic-based HPV control experiments"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set trainer.delta=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output directory, created if missing.
    #[arg(
        long,
        env = "SODACER_OUT_DIR",
        default_value = "sodacer-out",
        global = true
    )]
    out_dir: PathBuf,

    /// Overwrite an existing run manifest in the output directory.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Open-loop rollout under constant controls.
    Simulate(SimulateArgs),
    /// One closed-loop training episode.
    Train(TrainArgs),
    /// Compare replay methods across scenarios with paired seeds.
    Compare(CompareArgs),
    /// Spectrum envelopes for one scenario and method.
    Spectrum(SpectrumArgs),
    /// Check a configuration without running anything.
    ValidateConfig,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Constant controls `w1,w2,u1,u2,alpha`.
    #[arg(long, default_value = "0,0,0,0,0")]
    controls: String,
    /// Initial state `U_f,I_f,V_f,I_m,V_m`.
    #[arg(long, default_value = DEFAULT_X0)]
    x0: String,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value = "f5")]
    scenario: ScenarioId,
    /// Replay method; defaults to `trainer.replay_kind`.
    #[arg(long)]
    method: Option<ReplayKind>,
    /// Defaults to `trainer.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = DEFAULT_X0)]
    x0: String,
    /// Also write every safety intervention to `safety.csv`.
    #[arg(long)]
    log_safety: bool,
}

#[derive(Args, Debug)]
struct BatchArgs {
    /// Defaults to `experiment.runs` (or `experiment.full_runs` with `--full`).
    #[arg(long)]
    runs: Option<u64>,
    /// Defaults to `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Full-scale batch: `experiment.full_runs` runs over `experiment.full_horizon`.
    #[arg(long)]
    full: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// `f1..f5`, a single id, or a comma list. Defaults to `experiment.scenarios`.
    #[arg(long)]
    scenarios: Option<String>,
    /// Comma list of `rer`, `cber`, `sodacer`. Defaults to `experiment.methods`.
    #[arg(long)]
    methods: Option<String>,
    #[command(flatten)]
    batch: BatchArgs,
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    #[arg(long, default_value = "f5")]
    scenario: ScenarioId,
    #[arg(long, default_value = "sodacer")]
    method: ReplayKind,
    #[command(flatten)]
    batch: BatchArgs,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("cannot write {}: {e}", path.display()),
        }
    }

    fn train(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => Self::config(m),
            other => Self {
                code: EXIT_NUMERIC,
                message: format!("numerical failure: {other}"),
            },
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = Config::load(cli.config.as_deref(), &cli.overrides)
        .map_err(|e| Failure::config(e.to_string()))?;
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    match &cli.command {
        Command::ValidateConfig => {
            println!("configuration ok");
            Ok(())
        }
        Command::Simulate(a) => simulate(cli, &cfg, a),
        Command::Train(a) => train(cli, &cfg, a),
        Command::Compare(a) => compare(cli, &cfg, a),
        Command::Spectrum(a) => spectrum(cli, &cfg, a),
    }
}

fn parse_five(s: &str, what: &str) -> CliResult<[f64; 5]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::config(format!("--{what}: {e}")))?;
    <[f64; 5]>::try_from(v)
        .map_err(|v| Failure::config(format!("--{what} needs 5 values, got {}", v.len())))
}

fn parse_x0(s: &str) -> CliResult<SystemState> {
    let x0 = SystemState::new(parse_five(s, "x0")?, 0.0);
    if !x0.is_valid() {
        return Err(Failure::config(format!(
            "--x0 {s} is outside the unit box or violates the population simplex"
        )));
    }
    Ok(x0)
}

/// Output directory, refusing to clobber an earlier run unless forced.
struct OutDir {
    dir: PathBuf,
    artifacts: Vec<String>,
    started: Instant,
}

impl OutDir {
    fn open(cli: &Cli) -> CliResult<Self> {
        let dir = cli.out_dir.clone();
        if dir.join("manifest.json").exists() && !cli.force {
            return Err(Failure::config(format!(
                "{} already holds a run manifest; pass --force to overwrite",
                dir.display()
            )));
        }
        fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
        Ok(Self {
            dir,
            artifacts: Vec::new(),
            started: Instant::now(),
        })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&Path) -> std::io::Result<()>) -> CliResult<()> {
        let path = self.dir.join(name);
        f(&path).map_err(|e| Failure::io(&path, e))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn finish(
        mut self,
        command: &str,
        arguments: Value,
        cfg: &Config,
        seeds: Value,
    ) -> CliResult<()> {
        let timing = json!({ "wall_clock_seconds": self.started.elapsed().as_secs_f64() });
        self.write("timing.json", |p| write_json(p, &timing))?;
        let manifest = json!({
            "tool": "sodacer",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "arguments": arguments,
            "seeds": seeds,
            "config": cfg,
            "artifacts": self.artifacts,
            "wall_clock": "timing.json",
        });
        let path = self.dir.join("manifest.json");
        write_json(&path, &manifest).map_err(|e| Failure::io(&path, e))
    }
}

fn simulate(cli: &Cli, cfg: &Config, a: &SimulateArgs) -> CliResult<()> {
    let controls = ControlVector::from_array(parse_five(&a.controls, "controls")?);
    if !controls.is_admissible(&cfg.hpv) {
        return Err(Failure::config(format!(
            "--controls {} outside [0, {:?}]",
            a.controls,
            cfg.hpv.control_upper()
        )));
    }
    let x0 = parse_x0(&a.x0)?;
    let mut out = OutDir::open(cli)?;
    let run = rollout_constant(
        &controls,
        &cfg.hpv,
        &cfg.cost,
        &x0,
        cfg.trainer.horizon,
        cfg.trainer.dt,
    )
    .map_err(Failure::train)?;
    let fin = run.final_state();
    let summary = json!({
        "objective": run.objective,
        "spread": run.spread,
        "x0": x0,
        "final_state": fin,
        "final_total_infections": fin.total_infections(),
        "diagnostics": run.diagnostics,
    });
    out.write("trajectory.csv", |p| write_trajectory_csv(p, &run))?;
    out.write("summary.json", |p| write_json(p, &summary))?;
    println!(
        "simulate: T = {} objective = {:.6} final infections = {:.6}",
        cfg.trainer.horizon,
        run.objective,
        fin.total_infections()
    );
    out.finish(
        "simulate",
        json!({ "controls": controls.to_array(), "x0": x0.epi() }),
        cfg,
        Value::Null,
    )
}

fn train(cli: &Cli, cfg: &Config, a: &TrainArgs) -> CliResult<()> {
    let x0 = parse_x0(&a.x0)?;
    let tcfg = TrainerConfig {
        replay_kind: a.method.unwrap_or(cfg.trainer.replay_kind),
        seed: a.seed.unwrap_or(cfg.trainer.seed),
        log_safety: a.log_safety || cfg.trainer.log_safety,
        ..cfg.trainer
    };
    let mut out = OutDir::open(cli)?;
    let run =
        train_episode(&tcfg, &cfg.setup(), &x0, a.scenario.mask(), 0).map_err(Failure::train)?;
    let summary = json!({
        "scenario": a.scenario,
        "method": tcfg.replay_kind,
        "objective": run.objective,
        "spread": run.spread,
        "x0": x0,
        "final_state": run.final_state(),
        "final_weights": run.final_weights,
        "diagnostics": run.diagnostics,
    });
    out.write("trajectory.csv", |p| write_trajectory_csv(p, &run))?;
    out.write("summary.json", |p| write_json(p, &summary))?;
    if !run.buffer_trace.is_empty() {
        out.write("clusters.csv", |p| write_clusters_csv(p, &run.buffer_trace))?;
    }
    if tcfg.log_safety {
        out.write("safety.csv", |p| write_safety_csv(p, &run.safety_log))?;
    }
    println!(
        "train {} {}: objective = {:.6} inner iterations = {} safety interventions = {}",
        a.scenario,
        tcfg.replay_kind,
        run.objective,
        run.diagnostics.inner_iterations,
        run.diagnostics.safety_interventions
    );
    out.finish(
        "train",
        json!({
            "scenario": a.scenario,
            "method": tcfg.replay_kind,
            "x0": x0.epi(),
            "log_safety": tcfg.log_safety,
        }),
        cfg,
        json!({ "seed": tcfg.seed, "stream": tcfg.stream }),
    )
}

fn batch_scale(cfg: &Config, b: &BatchArgs) -> (u64, f64, u64) {
    let (runs, horizon) = cfg.experiment.scale(b.full);
    (
        b.runs.unwrap_or(runs),
        horizon,
        b.seed.unwrap_or(cfg.experiment.seed),
    )
}

fn print_failures(s: &SpectrumSummary) {
    for f in &s.failures {
        eprintln!(
            "  {} {} run {:>4}: {}",
            s.scenario, s.method, f.run_id, f.message
        );
    }
}

fn print_cell(s: &SpectrumSummary) {
    let mean = s
        .mean_objective()
        .map(|m| format!("{m:.6}"))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "{} {:<8} runs ok {:>4}/{:<4} mean objective {}",
        s.scenario,
        s.method,
        s.records.len(),
        s.runs,
        mean
    );
}

fn spectrum(cli: &Cli, cfg: &Config, a: &SpectrumArgs) -> CliResult<()> {
    let (runs, horizon, seed) = batch_scale(cfg, &a.batch);
    let mut sc = cfg.scenario(a.scenario, a.batch.full);
    sc.runs = runs;
    sc.horizon = horizon;
    let mut out = OutDir::open(cli)?;
    let s = run_scenario(&sc, a.method, &cfg.trainer, &cfg.setup(), seed)
        .map_err(|e| Failure::config(e.to_string()))?;
    let stem = format!("{}_{}", a.scenario, a.method);
    out.write(&format!("spectrum_{stem}.csv"), |p| {
        write_spectrum_csv(p, &s)
    })?;
    out.write(&format!("runs_{stem}.csv"), |p| write_runs_csv(p, &s))?;
    let summary = json!({
        "scenario": s.scenario,
        "method": s.method,
        "runs": s.runs,
        "horizon": sc.horizon,
        "succeeded": s.records.len(),
        "mean_objective": s.mean_objective(),
        "failures": s.failures,
    });
    out.write("summary.json", |p| write_json(p, &summary))?;
    print_cell(&s);
    out.finish(
        "spectrum",
        json!({
            "scenario": a.scenario,
            "method": a.method,
            "runs": runs,
            "horizon": horizon,
            "full": a.batch.full,
        }),
        cfg,
        json!({ "base_seed": seed, "runs": runs }),
    )?;
    if !s.failures.is_empty() {
        print_failures(&s);
        return Err(Failure {
            code: EXIT_PARTIAL,
            message: format!("{} of {} runs failed", s.failures.len(), s.runs),
        });
    }
    Ok(())
}

fn compare(cli: &Cli, cfg: &Config, a: &CompareArgs) -> CliResult<()> {
    let scenarios = match &a.scenarios {
        Some(s) => ScenarioId::parse_list(s).map_err(Failure::config)?,
        None => cfg.experiment.scenarios.clone(),
    };
    let methods: Vec<ReplayKind> = match &a.methods {
        Some(s) => s
            .split(',')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(Failure::config)?,
        None => cfg.experiment.methods.clone(),
    };
    let (runs, horizon, seed) = batch_scale(cfg, &a.batch);
    let configs: Vec<_> = scenarios
        .iter()
        .map(|id| {
            let mut sc = cfg.scenario(*id, a.batch.full);
            sc.runs = runs;
            sc.horizon = horizon;
            sc
        })
        .collect();
    let mut out = OutDir::open(cli)?;
    let report = compare_methods(&configs, &methods, &cfg.trainer, &cfg.setup(), seed)
        .map_err(|e| Failure::config(e.to_string()))?;

    for s in &report.spectra {
        out.write(&format!("spectrum_{}_{}.csv", s.scenario, s.method), |p| {
            write_spectrum_csv(p, s)
        })?;
        print_cell(s);
    }
    out.write("friedman.csv", |p| write_friedman_csv(p, &report))?;
    out.write("mean_cost.csv", |p| write_mean_cost_csv(p, &report))?;
    out.write("comparison.json", |p| write_json(p, &report))?;
    if let Some(f) = &report.friedman {
        let ranks: Vec<String> = methods
            .iter()
            .zip(&f.average)
            .map(|(m, r)| format!("{m} {r:.2}"))
            .collect();
        println!("average ranks: {}", ranks.join(", "));
    }
    println!("note: {COMPARISON_CAVEAT}");
    out.finish(
        "compare",
        json!({
            "scenarios": scenarios,
            "methods": methods,
            "runs": runs,
            "horizon": horizon,
            "full": a.batch.full,
        }),
        cfg,
        serde_json::to_value(&report.seeds).unwrap_or(Value::Null),
    )?;
    let failed = report.total_failures();
    if failed > 0 {
        for s in &report.spectra {
            print_failures(s);
        }
        return Err(Failure {
            code: EXIT_PARTIAL,
            message: format!("{failed} runs failed across the comparison"),
        });
    }
    Ok(())
}
