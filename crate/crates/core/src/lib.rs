//! Safe critic-based optimal control of HPV transmission with
//! self-organizing dual-buffer experience replay.
//!
//! The crate is layered bottom-up: [`dynamics`] integrates the epidemic
//! model, [`critic`] holds the polynomial value approximation and its
//! residual, [`replay`] the three memory schemes, [`optimizer`] the weight
//! update, and [`safety`] the barrier filter. [`trainer`] runs one closed-loop
//! episode; [`experiments`] batches episodes into spectra, comparisons and
//! rank tables.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod critic;
pub mod dynamics;
pub mod exec;
pub mod experiments;
pub mod optimizer;
pub mod output;
pub mod replay;
pub mod safety;
pub mod trainer;

pub use config::{Config, ConfigError};
pub use critic::{CostConfig, CriticWeights};
pub use dynamics::{ControlVector, HpvParameters, SystemState};
pub use experiments::{compare_methods, friedman_ranks, run_scenario, ScenarioConfig, ScenarioId};
pub use replay::ReplayConfig;
pub use trainer::{
    rollout_constant, train_episode, ControlMask, ProblemSetup, ReplayKind, RunResult,
    TrainerConfig,
};
