//! Single-layer polynomial critic for the discounted HJB equation.
//!
//! The value function is approximated as `Ĵ(e) = φ(e)ᵀŴ` with a fixed
//! 28-term polynomial basis over the tracking error. Training minimises
//! `½Ĥ²`, the squared approximate Hamiltonian residual, over replayed
//! `(state, control)` pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    hpv_control_matrix, hpv_drift, ControlArray, HpvParameters, StateVec, SystemState, N_CONTROL,
    N_STATE,
};
use crate::replay::Sample;

/// Size of the polynomial basis.
pub const N_FEATURES: usize = 28;

pub type FeatureVec = [f64; N_FEATURES];
pub type FeatureJacobian = [[f64; N_STATE]; N_FEATURES];

/// Exponents of each basis monomial over `(U_f, I_f, V_f, I_m, V_m)`.
///
/// Order: linear terms `U_f, I_m, V_m, I_f, V_f`; squares; the six
/// female × male products; then the twelve cubic cross terms.
const MONOMIALS: [[u8; N_STATE]; N_FEATURES] = [
    [1, 0, 0, 0, 0],
    [0, 0, 0, 1, 0],
    [0, 0, 0, 0, 1],
    [0, 1, 0, 0, 0],
    [0, 0, 1, 0, 0],
    [2, 0, 0, 0, 0],
    [0, 2, 0, 0, 0],
    [0, 0, 2, 0, 0],
    [0, 0, 0, 2, 0],
    [0, 0, 0, 0, 2],
    [1, 0, 0, 1, 0],
    [1, 0, 0, 0, 1],
    [0, 1, 0, 1, 0],
    [0, 1, 0, 0, 1],
    [0, 0, 1, 1, 0],
    [0, 0, 1, 0, 1],
    [2, 0, 0, 1, 0],
    [2, 0, 0, 0, 1],
    [0, 2, 0, 1, 0],
    [0, 2, 0, 0, 1],
    [1, 0, 0, 2, 0],
    [0, 1, 0, 2, 0],
    [0, 0, 1, 2, 0],
    [0, 0, 2, 1, 0],
    [0, 0, 2, 0, 1],
    [1, 0, 0, 0, 2],
    [0, 1, 0, 0, 2],
    [0, 0, 1, 0, 2],
];

/// Human-readable names of the basis terms, in basis order.
pub fn feature_names() -> Vec<String> {
    MONOMIALS
        .iter()
        .map(|exps| {
            exps.iter()
                .zip(crate::dynamics::STATE_NAMES)
                .filter(|(&p, _)| p > 0)
                .map(|(&p, n)| {
                    if p == 1 {
                        n.to_string()
                    } else {
                        format!("{n}^{p}")
                    }
                })
                .collect::<Vec<_>>()
                .join("*")
        })
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriticError {
    #[error("control {index} = {value} lies beyond its saturation limit {limit}")]
    SaturationBoundary {
        index: usize,
        value: f64,
        limit: f64,
    },
    #[error("invalid cost setting `{name}`: {reason}")]
    InvalidCost { name: &'static str, reason: String },
    #[error("critic weights contain a non-finite entry at index {0}")]
    NonFiniteWeights(usize),
}

/// Critic coefficients `Ŵ`. Serialises as a plain JSON array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CriticWeights(pub FeatureVec);

impl Default for CriticWeights {
    fn default() -> Self {
        Self::zeros()
    }
}

impl CriticWeights {
    pub fn zeros() -> Self {
        Self([0.0; N_FEATURES])
    }

    pub fn as_array(&self) -> &FeatureVec {
        &self.0
    }

    pub fn check_finite(&self) -> Result<(), CriticError> {
        match self.0.iter().position(|w| !w.is_finite()) {
            Some(i) => Err(CriticError::NonFiniteWeights(i)),
            None => Ok(()),
        }
    }
}

/// Weights of the quadratic running cost and the control-effort integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    /// Diagonal of `Q`.
    pub q_diag: StateVec,
    /// Discount rate `ν` (1/year).
    pub nu: f64,
    /// Control-cost gains `Φ_i`.
    pub phi_gain: ControlArray,
    /// Saturation limits `κ_i`.
    pub kappa: ControlArray,
    /// Reference state `x_r`.
    pub x_ref: StateVec,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self::for_params(&HpvParameters::default())
    }
}

impl CostConfig {
    /// Penalises the three infectious compartments only; `κ` follows the
    /// model's control caps.
    pub fn for_params(params: &HpvParameters) -> Self {
        Self {
            q_diag: [1.0, 1.0, 0.0, 1.0, 0.0],
            nu: 0.1,
            phi_gain: [1.0; N_CONTROL],
            kappa: params.control_upper(),
            x_ref: [0.0; N_STATE],
        }
    }

    pub fn validate(&self) -> Result<(), CriticError> {
        if self.q_diag.iter().any(|q| !(q.is_finite() && *q >= 0.0))
            || !self.q_diag.iter().any(|q| *q > 0.0)
        {
            return Err(CriticError::InvalidCost {
                name: "q_diag",
                reason: "entries must be >= 0 with at least one > 0".into(),
            });
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(CriticError::InvalidCost {
                name: "nu",
                reason: format!("must be > 0, got {}", self.nu),
            });
        }
        if self.phi_gain.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CriticError::InvalidCost {
                name: "phi_gain",
                reason: "entries must be > 0".into(),
            });
        }
        if self.kappa.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CriticError::InvalidCost {
                name: "kappa",
                reason: "entries must be > 0".into(),
            });
        }
        if self.x_ref.iter().any(|v| !v.is_finite()) {
            return Err(CriticError::InvalidCost {
                name: "x_ref",
                reason: "entries must be finite".into(),
            });
        }
        Ok(())
    }

    /// `eᵀQe`.
    pub fn state_penalty(&self, e: &StateVec) -> f64 {
        e.iter().zip(&self.q_diag).map(|(ei, q)| q * ei * ei).sum()
    }
}

pub fn tracking_error(state: &SystemState, cfg: &CostConfig) -> StateVec {
    tracking_error_of(&state.epi(), cfg)
}

pub fn tracking_error_of(x: &StateVec, cfg: &CostConfig) -> StateVec {
    std::array::from_fn(|k| x[k] - cfg.x_ref[k])
}

pub fn features(e: &StateVec) -> FeatureVec {
    std::array::from_fn(|i| monomial(e, &MONOMIALS[i]))
}

fn monomial(e: &StateVec, exps: &[u8; N_STATE]) -> f64 {
    e.iter()
        .zip(exps)
        .map(|(x, &p)| x.powi(i32::from(p)))
        .product()
}

/// `∂φ/∂e`, one row per basis term.
pub fn feature_jacobian(e: &StateVec) -> FeatureJacobian {
    let mut jac = [[0.0; N_STATE]; N_FEATURES];
    for (row, exps) in jac.iter_mut().zip(MONOMIALS.iter()) {
        for k in 0..N_STATE {
            let p = exps[k];
            if p == 0 {
                continue;
            }
            let mut d = f64::from(p) * e[k].powi(i32::from(p) - 1);
            for j in (0..N_STATE).filter(|&j| j != k) {
                d *= e[j].powi(i32::from(exps[j]));
            }
            row[k] = d;
        }
    }
    jac
}

pub fn value(e: &StateVec, w: &CriticWeights) -> f64 {
    dot(&features(e), &w.0)
}

/// `∇_e Ĵ = (∂φ/∂e)ᵀ Ŵ`.
pub fn value_gradient(e: &StateVec, w: &CriticWeights) -> StateVec {
    let jac = feature_jacobian(e);
    let mut g = [0.0; N_STATE];
    for (row, wi) in jac.iter().zip(&w.0) {
        for k in 0..N_STATE {
            g[k] += row[k] * wi;
        }
    }
    g
}

/// Saturated greedy control `û_i = -κ_i tanh(s_i)` derived from the critic.
///
/// The input matrix is evaluated at the state itself. The output is
/// symmetric in `(-κ_i, κ_i)`; the safety layer maps it onto the model's
/// one-sided bounds.
pub fn control_law(
    state: &SystemState,
    w: &CriticWeights,
    cfg: &CostConfig,
    params: &HpvParameters,
) -> ControlArray {
    let arg = control_law_argument(state, w, cfg, params);
    std::array::from_fn(|i| -cfg.kappa[i] * arg[i].tanh())
}

/// The tanh argument `s_i = gᵀ∇Ĵ / (2κ_iΦ_i)`.
pub fn control_law_argument(
    state: &SystemState,
    w: &CriticWeights,
    cfg: &CostConfig,
    params: &HpvParameters,
) -> ControlArray {
    let e = tracking_error(state, cfg);
    let grad = value_gradient(&e, w);
    let g = hpv_control_matrix(state, params);
    std::array::from_fn(|i| {
        let gt_grad: f64 = (0..N_STATE).map(|k| g[k][i] * grad[k]).sum();
        gt_grad / (2.0 * cfg.kappa[i] * cfg.phi_gain[i])
    })
}

/// Non-quadratic control-effort cost
/// `U(u) = 2 Σ_i ∫_0^{u_i} κ_iΦ_i atanh(θ/κ_i) dθ`, evaluated in closed form.
///
/// At `|u_i| = κ_i` exactly the finite limit `κ_i²Φ_i ln 4` is used.
pub fn control_effort_cost(u: &ControlArray, cfg: &CostConfig) -> Result<f64, CriticError> {
    let mut total = 0.0;
    for i in 0..N_CONTROL {
        let (k, phi) = (cfg.kappa[i], cfg.phi_gain[i]);
        let ui = u[i];
        let r = ui.abs() / k;
        if !(r <= 1.0) {
            return Err(CriticError::SaturationBoundary {
                index: i,
                value: ui,
                limit: k,
            });
        }
        total += if r == 1.0 {
            k * k * phi * 4f64.ln()
        } else {
            // u·atanh(u/κ) is even in u, so |u| is used throughout
            2.0 * k * phi * (ui.abs() * r.atanh() + 0.5 * k * (-r * r).ln_1p())
        };
    }
    Ok(total)
}

/// Pieces of the Hamiltonian residual that do not depend on the weights.
///
/// With the sample's control frozen, `Ĥ(w) = offset + slopeᵀw` exactly.
#[derive(Debug, Clone, Copy)]
pub struct ResidualTerms {
    pub offset: f64,
    pub slope: FeatureVec,
}

impl ResidualTerms {
    pub fn new(
        sample: &Sample,
        cfg: &CostConfig,
        params: &HpvParameters,
    ) -> Result<Self, CriticError> {
        let state = SystemState::new(sample.x, 0.0);
        let e = tracking_error(&state, cfg);
        let offset = cfg.state_penalty(&e) + control_effort_cost(&sample.u, cfg)?;

        let mut flow = hpv_drift(&state, params);
        let g = hpv_control_matrix(&state, params);
        for (fk, row) in flow.iter_mut().zip(g.iter()) {
            *fk += dot(row, &sample.u);
        }
        let phi = features(&e);
        let jac = feature_jacobian(&e);
        let slope = std::array::from_fn(|i| -cfg.nu * phi[i] + dot(&jac[i], &flow));
        Ok(Self { offset, slope })
    }

    pub fn residual(&self, w: &CriticWeights) -> f64 {
        self.offset + dot(&self.slope, &w.0)
    }
}

/// `Ĥ = eᵀQe + U(û) − νφᵀŴ + (∇_eφᵀŴ)ᵀ(f(x) + g(x)û)` with `û` taken from
/// the sample.
pub fn approx_hamiltonian(
    sample: &Sample,
    w: &CriticWeights,
    cfg: &CostConfig,
    params: &HpvParameters,
) -> Result<f64, CriticError> {
    let state = SystemState::new(sample.x, 0.0);
    let e = tracking_error(&state, cfg);
    let mut flow = hpv_drift(&state, params);
    let g = hpv_control_matrix(&state, params);
    for (fk, row) in flow.iter_mut().zip(g.iter()) {
        *fk += dot(row, &sample.u);
    }
    Ok(
        cfg.state_penalty(&e) + control_effort_cost(&sample.u, cfg)? - cfg.nu * value(&e, w)
            + dot(&value_gradient(&e, w), &flow),
    )
}

/// Loss `½Ĥ²` and its semi-gradient in the weights.
pub fn critic_loss_and_gradient(
    sample: &Sample,
    w: &CriticWeights,
    cfg: &CostConfig,
    params: &HpvParameters,
) -> Result<(f64, FeatureVec), CriticError> {
    let terms = ResidualTerms::new(sample, cfg, params)?;
    let h = terms.residual(w);
    Ok((0.5 * h * h, terms.slope.map(|d| h * d)))
}

/// Mean loss over a fixed mini-batch, reduced to its normal-equation form.
///
/// Because every residual is affine in the weights, the batch gradient is
/// `A·w + b` with `A = mean(d dᵀ)` and `b = mean(c·d)`. Building `A` once per
/// mini-batch makes each inner optimisation step O(28²) regardless of the
/// batch size.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    gram: Box<[[f64; N_FEATURES]; N_FEATURES]>,
    linear: FeatureVec,
    constant: f64,
    len: usize,
}

impl BatchObjective {
    pub fn new(
        batch: &[Sample],
        cfg: &CostConfig,
        params: &HpvParameters,
    ) -> Result<Self, CriticError> {
        let mut gram = Box::new([[0.0; N_FEATURES]; N_FEATURES]);
        let mut linear = [0.0; N_FEATURES];
        let mut constant = 0.0;
        for s in batch {
            let t = ResidualTerms::new(s, cfg, params)?;
            for i in 0..N_FEATURES {
                let di = t.slope[i];
                linear[i] += t.offset * di;
                for j in i..N_FEATURES {
                    gram[i][j] += di * t.slope[j];
                }
            }
            constant += t.offset * t.offset;
        }
        let n = batch.len().max(1) as f64;
        for i in 0..N_FEATURES {
            for j in i..N_FEATURES {
                gram[i][j] /= n;
                gram[j][i] = gram[i][j];
            }
            linear[i] /= n;
        }
        Ok(Self {
            gram,
            linear,
            constant: constant / n,
            len: batch.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Mean of `½Ĥ²` over the batch.
    pub fn loss(&self, w: &CriticWeights) -> f64 {
        let aw = self.gram_times(w);
        0.5 * (dot(&w.0, &aw) + 2.0 * dot(&self.linear, &w.0) + self.constant)
    }

    /// Mean semi-gradient over the batch.
    pub fn gradient(&self, w: &CriticWeights) -> FeatureVec {
        let aw = self.gram_times(w);
        std::array::from_fn(|i| aw[i] + self.linear[i])
    }

    fn gram_times(&self, w: &CriticWeights) -> FeatureVec {
        std::array::from_fn(|i| dot(&self.gram[i], &w.0))
    }
}

pub(crate) fn dot<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const U_F: usize = 0;
    const I_M: usize = 3;

    fn sample(x: StateVec, u: ControlArray) -> Sample {
        Sample {
            x,
            u,
            t: 0.0,
            run_id: 0,
        }
    }

    fn g2_weights() -> CriticWeights {
        CriticWeights(std::array::from_fn(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * (k as f64 + 1.0) / 100.0
        }))
    }

    #[test]
    fn tracking_error_examples() {
        let cfg = CostConfig::default();
        let x = [0.1, 0.05, 0.2, 0.1, 0.1];
        assert_eq!(tracking_error_of(&x, &cfg), x);
        let ref_cfg = CostConfig { x_ref: x, ..cfg };
        assert_eq!(tracking_error_of(&x, &ref_cfg), [0.0; 5]);
        assert_eq!(tracking_error_of(&[1.0; 5], &cfg), [1.0; 5]);
    }

    #[test]
    fn features_at_origin_vanish() {
        assert_eq!(features(&[0.0; 5]), [0.0; N_FEATURES]);
    }

    #[test]
    fn single_component_has_two_terms() {
        let phi = features(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        let nonzero: Vec<usize> = (0..N_FEATURES).filter(|&i| phi[i] != 0.0).collect();
        assert_eq!(nonzero, vec![0, 5]);
        assert_eq!(phi[0], 1.0);
        assert_eq!(phi[5], 1.0);
    }

    #[test]
    fn cubic_cross_term() {
        let mut e = [0.0; 5];
        e[U_F] = 0.5;
        e[I_M] = 0.2;
        let phi = features(&e);
        // U_f^2 * I_m is basis term 16
        assert!((phi[16] - 0.05).abs() < 1e-16);
        assert_eq!(feature_names()[16], "u_f^2*i_m");
    }

    #[test]
    fn jacobian_at_origin_is_linear_block() {
        let jac = feature_jacobian(&[0.0; 5]);
        // linear terms are listed as U_f, I_m, V_m, I_f, V_f
        let order = [0, 3, 4, 1, 2];
        for (row, &k) in order.iter().enumerate() {
            let mut expect = [0.0; 5];
            expect[k] = 1.0;
            assert_eq!(jac[row], expect);
        }
        for row in jac.iter().skip(5) {
            assert_eq!(*row, [0.0; 5]);
        }
    }

    #[test]
    fn jacobian_of_square() {
        let jac = feature_jacobian(&[0.3, 0.0, 0.0, 0.0, 0.0]);
        assert!((jac[5][0] - 0.6).abs() < 1e-16);
        assert_eq!(&jac[5][1..], &[0.0; 4]);
    }

    #[test]
    fn value_examples() {
        let e = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(value(&e, &CriticWeights::zeros()), 0.0);
        assert_eq!(value(&[0.0; 5], &g2_weights()), 0.0);
        let phi = features(&e);
        for k in 0..N_FEATURES {
            let mut w = CriticWeights::zeros();
            w.0[k] = 1.0;
            assert_eq!(value(&e, &w), phi[k]);
        }
    }

    #[test]
    fn zero_weights_give_zero_control() {
        let s = SystemState::new([0.1, 0.05, 0.2, 0.1, 0.1], 0.0);
        let u = control_law(
            &s,
            &CriticWeights::zeros(),
            &CostConfig::default(),
            &HpvParameters::default(),
        );
        assert_eq!(u, [0.0; 5]);
    }

    #[test]
    fn saturated_argument_reaches_limit() {
        // alpha column of g is (-U_f, U_f, 0, 0, 0); put weight on the I_f
        // linear term so that s_alpha = U_f * w / (2 κ Φ) = +50.
        let params = HpvParameters::default();
        let cfg = CostConfig::default();
        let s = SystemState::new([0.5, 0.0, 0.0, 0.0, 0.0], 0.0);
        let mut w = CriticWeights::zeros();
        w.0[3] = 50.0 * 2.0 * cfg.kappa[4] * cfg.phi_gain[4] / 0.5;
        let arg = control_law_argument(&s, &w, &cfg, &params);
        assert!((arg[4] - 50.0).abs() < 1e-12);
        let u = control_law(&s, &w, &cfg, &params);
        assert!((u[4] + cfg.kappa[4]).abs() < 1e-10);
    }

    #[test]
    fn effort_cost_zero_and_limit() {
        let cfg = CostConfig::default();
        assert_eq!(control_effort_cost(&[0.0; 5], &cfg).unwrap(), 0.0);
        let at_limit = control_effort_cost(&[1.0, 0.0, 0.0, 0.0, 0.0], &cfg).unwrap();
        assert!((at_limit - 4f64.ln()).abs() < 1e-15);
        let near = control_effort_cost(&[1.0 - 1e-12, 0.0, 0.0, 0.0, 0.0], &cfg).unwrap();
        assert!((near - 4f64.ln()).abs() < 1e-9);
        let err = control_effort_cost(&[0.0, 0.0, 3.5, 0.0, 0.0], &cfg).unwrap_err();
        assert!(matches!(
            err,
            CriticError::SaturationBoundary { index: 2, .. }
        ));
    }

    #[test]
    fn hamiltonian_trivial_cases() {
        let cfg = CostConfig::default();
        let p = HpvParameters::default();
        let w0 = CriticWeights::zeros();
        assert_eq!(
            approx_hamiltonian(&sample([0.0; 5], [0.0; 5]), &w0, &cfg, &p).unwrap(),
            0.0
        );
        let x = [0.1, 0.05, 0.2, 0.1, 0.1];
        let h = approx_hamiltonian(&sample(x, [0.0; 5]), &w0, &cfg, &p).unwrap();
        assert_eq!(h, cfg.state_penalty(&x));
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn hamiltonian_matches_golden_fixture() {
        // Term-by-term sympy evaluation in tests/fixtures/golden.py.
        let s = sample([0.1, 0.05, 0.2, 0.1, 0.1], [0.2, 0.1, 0.5, 0.2, 0.2]);
        let h = approx_hamiltonian(
            &s,
            &g2_weights(),
            &CostConfig::default(),
            &HpvParameters::default(),
        )
        .unwrap();
        assert!((h - 4.11671779296482465e-01).abs() < 1e-14, "{h}");
        let effort = control_effort_cost(&s.u, &CostConfig::default()).unwrap();
        assert!((effort - 3.81517587886226028e-01).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let (loss, grad) = critic_loss_and_gradient(
            &sample([0.0; 5], [0.0; 5]),
            &g2_weights(),
            &CostConfig::default(),
            &HpvParameters::default(),
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad, [0.0; N_FEATURES]);
    }

    #[test]
    fn batch_objective_matches_per_sample_mean() {
        let cfg = CostConfig::default();
        let p = HpvParameters::default();
        let batch: Vec<Sample> = (0..7)
            .map(|k| {
                let t = k as f64 / 10.0;
                sample(
                    [0.1 + t / 10.0, 0.05, 0.2 - t / 10.0, 0.1 * t, 0.3],
                    [t / 2.0, 0.1, 2.0 * t, 0.2, 0.5],
                )
            })
            .collect();
        let w = g2_weights();
        let obj = BatchObjective::new(&batch, &cfg, &p).unwrap();
        let mut loss = 0.0;
        let mut grad = [0.0; N_FEATURES];
        for s in &batch {
            let (l, g) = critic_loss_and_gradient(s, &w, &cfg, &p).unwrap();
            loss += l / batch.len() as f64;
            for i in 0..N_FEATURES {
                grad[i] += g[i] / batch.len() as f64;
            }
        }
        assert!((obj.loss(&w) - loss).abs() < 1e-12 * loss.max(1.0));
        let bg = obj.gradient(&w);
        for i in 0..N_FEATURES {
            assert!(
                (bg[i] - grad[i]).abs() < 1e-12,
                "{i}: {} vs {}",
                bg[i],
                grad[i]
            );
        }
    }

    fn unit_state() -> impl Strategy<Value = StateVec> {
        proptest::array::uniform5(0.0..1.0f64)
    }

    proptest! {
        #[test]
        fn control_law_is_bounded(x in unit_state(), w in proptest::array::uniform28(-50.0..50.0f64)) {
            let cfg = CostConfig::default();
            let u = control_law(&SystemState::new(x, 0.0), &CriticWeights(w), &cfg, &HpvParameters::default());
            for i in 0..N_CONTROL {
                prop_assert!(u[i].abs() <= cfg.kappa[i]);
            }
        }

        #[test]
        fn value_is_linear_in_weights(
            e in proptest::array::uniform5(-1.0..1.0f64),
            w1 in proptest::array::uniform28(-1.0..1.0f64),
            w2 in proptest::array::uniform28(-1.0..1.0f64),
            a in -3.0..3.0f64,
            b in -3.0..3.0f64,
        ) {
            let combo = CriticWeights(std::array::from_fn(|i| a * w1[i] + b * w2[i]));
            let lhs = value(&e, &combo);
            let rhs = a * value(&e, &CriticWeights(w1)) + b * value(&e, &CriticWeights(w2));
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn effort_cost_even_and_monotone(r in 0.0..0.99f64, dr in 1e-4..0.009f64, i in 0usize..5) {
            let cfg = CostConfig::default();
            let k = cfg.kappa[i];
            let mut u = [0.0; 5];
            u[i] = r * k;
            let c = control_effort_cost(&u, &cfg).unwrap();
            prop_assert!(c >= 0.0);
            let mut neg = u;
            neg[i] = -u[i];
            prop_assert_eq!(control_effort_cost(&neg, &cfg).unwrap(), c);
            let mut bigger = u;
            bigger[i] = (r + dr) * k;
            prop_assert!(control_effort_cost(&bigger, &cfg).unwrap() > c);
        }

        #[test]
        fn loss_is_nonnegative(
            x in unit_state(),
            u in proptest::array::uniform5(0.0..0.99f64),
            w in proptest::array::uniform28(-5.0..5.0f64),
        ) {
            let (loss, _) = critic_loss_and_gradient(&sample(x, u), &CriticWeights(w), &CostConfig::default(), &HpvParameters::default()).unwrap();
            prop_assert!(loss >= 0.0);
        }
    }
}
