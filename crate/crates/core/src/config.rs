//! TOML configuration with command-line overrides.
//!
//! Sections: `[hpv]`, `[cost]`, `[replay]`, `[optimizer]`, `[safety]`,
//! `[trainer]`, `[experiment]`. Every key is optional. Values resolve as
//! override > file > built-in default. `cost.kappa` and `replay.bounds`
//! follow the model's control caps unless given explicitly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::critic::CostConfig;
use crate::dynamics::HpvParameters;
use crate::experiments::{InitialStateSampler, ScenarioConfig, ScenarioId};
use crate::optimizer::OptimizerConfig;
use crate::replay::{ReplayConfig, SampleBounds};
use crate::trainer::{ProblemSetup, ReplayKind, SafetySettings, TrainerConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("bad override `{0}`: expected section.key=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub runs: u64,
    pub horizon: f64,
    /// Used instead of `runs` / `horizon` when a full-scale batch is requested.
    pub full_runs: u64,
    pub full_horizon: f64,
    pub seed: u64,
    pub scenarios: Vec<ScenarioId>,
    pub methods: Vec<ReplayKind>,
    pub sampler: InitialStateSampler,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            runs: 20,
            horizon: 10.0,
            full_runs: 200,
            full_horizon: 20.0,
            seed: 0,
            scenarios: ScenarioId::ALL.to_vec(),
            methods: ReplayKind::ALL.to_vec(),
            sampler: InitialStateSampler::default(),
        }
    }
}

impl ExperimentSettings {
    pub fn scale(&self, full: bool) -> (u64, f64) {
        if full {
            (self.full_runs, self.full_horizon)
        } else {
            (self.runs, self.horizon)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub hpv: HpvParameters,
    pub cost: CostConfig,
    pub replay: ReplayConfig,
    pub optimizer: OptimizerConfig,
    pub safety: SafetySettings,
    pub trainer: TrainerConfig,
    pub experiment: ExperimentSettings,
}

impl Config {
    /// Reads `path` (if any), applies `overrides`, fills defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config, ConfigError> {
        let table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                parse_table(&text, &p.display().to_string())?
            }
            None => Table::new(),
        };
        Self::from_table(table, overrides)
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Config, ConfigError> {
        Self::from_table(parse_table(text, "config text")?, overrides)
    }

    fn from_table(mut table: Table, overrides: &[String]) -> Result<Config, ConfigError> {
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let has_kappa = lookup(&table, &["cost", "kappa"]).is_some();
        let has_bounds = lookup(&table, &["replay", "bounds"]).is_some();
        let mut cfg: Config = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse {
                origin: "configuration".into(),
                message: e.message().to_string(),
            })?;
        let upper = cfg.hpv.control_upper();
        if !has_kappa {
            cfg.cost.kappa = upper;
        }
        if !has_bounds {
            cfg.replay.bounds = SampleBounds::new(upper);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: String| ConfigError::Invalid(e);
        self.hpv.validate().map_err(|e| bad(format!("hpv: {e}")))?;
        self.cost
            .validate()
            .map_err(|e| bad(format!("cost: {e}")))?;
        self.replay
            .validate()
            .map_err(|e| bad(format!("replay: {e}")))?;
        self.optimizer
            .validate()
            .map_err(|e| bad(format!("optimizer: {e}")))?;
        if !(self.safety.gamma0 > 0.0 && self.safety.gamma0.is_finite()) {
            return Err(bad(format!(
                "safety.gamma0 must be > 0, got {}",
                self.safety.gamma0
            )));
        }
        self.trainer.validate().map_err(bad)?;
        let e = &self.experiment;
        if e.runs == 0 || e.full_runs == 0 {
            return Err(bad(
                "experiment.runs and experiment.full_runs must be >= 1".into()
            ));
        }
        for (name, h) in [("horizon", e.horizon), ("full_horizon", e.full_horizon)] {
            if !(h > 0.0 && h.is_finite()) {
                return Err(bad(format!("experiment.{name} must be > 0, got {h}")));
            }
        }
        if e.scenarios.is_empty() || e.methods.is_empty() {
            return Err(bad(
                "experiment.scenarios and experiment.methods must be non-empty".into(),
            ));
        }
        e.sampler.validate().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }

    pub fn setup(&self) -> ProblemSetup {
        ProblemSetup::new(
            self.hpv,
            self.cost,
            self.replay,
            self.optimizer,
            self.safety,
        )
    }

    pub fn scenario(&self, id: ScenarioId, full: bool) -> ScenarioConfig {
        let (runs, horizon) = self.experiment.scale(full);
        ScenarioConfig {
            sampler: self.experiment.sampler,
            ..ScenarioConfig::new(id, runs, horizon, self.trainer.dt)
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is representable as TOML")
    }
}

fn parse_table(text: &str, origin: &str) -> Result<Table, ConfigError> {
    text.parse::<Table>().map_err(|e| ConfigError::Parse {
        origin: origin.to_string(),
        message: e.message().to_string(),
    })
}

fn lookup<'a>(table: &'a Table, path: &[&str]) -> Option<&'a Value> {
    let (last, head) = path.split_last()?;
    let mut t = table;
    for k in head {
        t = t.get(*k)?.as_table()?;
    }
    t.get(*last)
}

/// `a.b.c=value`; the value is read as a TOML literal, or as a bare string
/// when it is not one.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let parts: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));

    let (last, head) = parts.split_last().expect("at least two parts");
    let mut t = table;
    for k in head {
        let entry = t
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}
