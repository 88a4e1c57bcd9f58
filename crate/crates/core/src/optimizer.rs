//! Bias-corrected moment optimizer for the critic weights.
//!
//! Implements exactly the recurrences of the training loop:
//! `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)s(g)`, bias correction, and
//! `W ← W − η·m̂/(√v̂ + ε₀)`. `s(g) = g²` by default; the verbatim `s(g) = g`
//! form is available behind [`OptimizerConfig::squared_second_moment`] and
//! fails loudly once `v̂` turns negative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::{CriticWeights, FeatureVec, N_FEATURES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("update produced a non-finite value at coordinate {index} (step {step})")]
    NonFiniteUpdate { index: usize, step: u64 },
    #[error("gradient is not finite at coordinate {0}")]
    NonFiniteGradient(usize),
    #[error("invalid optimizer setting `{name}`: {reason}")]
    InvalidConfig { name: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eta: f64,
    pub eps0: f64,
    pub squared_second_moment: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eta: 0.01,
            eps0: 1e-8,
            squared_second_moment: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(OptimizerError::InvalidConfig {
                    name,
                    reason: format!("must lie in (0, 1), got {b}"),
                });
            }
        }
        for (name, v) in [("eta", self.eta), ("eps0", self.eps0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OptimizerError::InvalidConfig {
                    name,
                    reason: format!("must be > 0, got {v}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: FeatureVec,
    pub v: FeatureVec,
    pub step: u64,
    pub config: OptimizerConfig,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            m: [0.0; N_FEATURES],
            v: [0.0; N_FEATURES],
            step: 0,
            config,
        }
    }

    /// One optimizer step. `self` is left untouched; the advanced state and
    /// the new weights are returned.
    pub fn update(
        &self,
        w: &CriticWeights,
        grad: &FeatureVec,
    ) -> Result<(OptimizerState, CriticWeights), OptimizerError> {
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(OptimizerError::NonFiniteGradient(i));
        }
        let OptimizerConfig {
            beta1,
            beta2,
            eta,
            eps0,
            squared_second_moment,
        } = self.config;
        let step = self.step + 1;
        let t = i32::try_from(step).unwrap_or(i32::MAX);
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        let mut next = OptimizerState {
            step,
            ..self.clone()
        };
        let mut out = *w;
        for i in 0..N_FEATURES {
            let g = grad[i];
            let second = if squared_second_moment { g * g } else { g };
            next.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            next.v[i] = beta2 * self.v[i] + (1.0 - beta2) * second;
            let m_hat = next.m[i] / bc1;
            let v_hat = next.v[i] / bc2;
            out.0[i] -= eta * m_hat / (v_hat.sqrt() + eps0);
            if !out.0[i].is_finite() {
                return Err(OptimizerError::NonFiniteUpdate { index: i, step });
            }
        }
        Ok((next, out))
    }
}
