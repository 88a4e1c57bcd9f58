//! HPV transmission model written as an affine control system
//! `ẋ = f(x) + g(x)·u`, plus the budget integrator and a fixed-step RK4 stepper.
//!
//! The epidemiological state is ordered `(U_f, I_f, V_f, I_m, V_m)` and the
//! controls `(w1, w2, u1, u2, alpha)` everywhere in this crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of epidemiological compartments.
pub const N_STATE: usize = 5;
/// Number of control inputs.
pub const N_CONTROL: usize = 5;

pub type StateVec = [f64; N_STATE];
pub type ControlArray = [f64; N_CONTROL];
/// Rows are state components, columns are controls.
pub type ControlMatrix = [[f64; N_CONTROL]; N_STATE];

pub const STATE_NAMES: [&str; N_STATE] = ["u_f", "i_f", "v_f", "i_m", "v_m"];
pub const CONTROL_NAMES: [&str; N_CONTROL] = ["w1", "w2", "u1", "u2", "alpha"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite state after integration step: {0:?}")]
    NonFiniteState([f64; N_STATE + 1]),
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// Population fractions plus the accumulated intervention cost.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemState {
    pub u_f: f64,
    pub i_f: f64,
    pub v_f: f64,
    pub i_m: f64,
    pub v_m: f64,
    pub j_cost: f64,
}

impl SystemState {
    pub const ZERO: Self = Self {
        u_f: 0.0,
        i_f: 0.0,
        v_f: 0.0,
        i_m: 0.0,
        v_m: 0.0,
        j_cost: 0.0,
    };

    pub fn new(epi: StateVec, j_cost: f64) -> Self {
        Self {
            u_f: epi[0],
            i_f: epi[1],
            v_f: epi[2],
            i_m: epi[3],
            v_m: epi[4],
            j_cost,
        }
    }

    pub fn epi(&self) -> StateVec {
        [self.u_f, self.i_f, self.v_f, self.i_m, self.v_m]
    }

    /// The six integrated components, budget last.
    pub fn augmented(&self) -> [f64; N_STATE + 1] {
        [
            self.u_f,
            self.i_f,
            self.v_f,
            self.i_m,
            self.v_m,
            self.j_cost,
        ]
    }

    fn from_augmented(z: [f64; N_STATE + 1]) -> Self {
        Self::new([z[0], z[1], z[2], z[3], z[4]], z[5])
    }

    pub fn total_infections(&self) -> f64 {
        self.u_f + self.i_f + self.i_m
    }

    /// Box, simplex and budget-sign invariants.
    pub fn is_valid(&self) -> bool {
        let epi = self.epi();
        epi.iter().all(|v| (0.0..=1.0).contains(v))
            && self.u_f + self.i_f + self.v_f <= 1.0 + 1e-12
            && self.i_m + self.v_m <= 1.0 + 1e-12
            && self.j_cost >= 0.0
            && self.j_cost.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlVector {
    pub w1: f64,
    pub w2: f64,
    pub u1: f64,
    pub u2: f64,
    pub alpha: f64,
}

impl ControlVector {
    pub const ZERO: Self = Self {
        w1: 0.0,
        w2: 0.0,
        u1: 0.0,
        u2: 0.0,
        alpha: 0.0,
    };

    pub fn from_array(a: ControlArray) -> Self {
        Self {
            w1: a[0],
            w2: a[1],
            u1: a[2],
            u2: a[3],
            alpha: a[4],
        }
    }

    pub fn to_array(&self) -> ControlArray {
        [self.w1, self.w2, self.u1, self.u2, self.alpha]
    }

    /// Whether every control lies in its one-sided admissible interval.
    pub fn is_admissible(&self, params: &HpvParameters) -> bool {
        self.to_array()
            .iter()
            .zip(params.control_upper())
            .all(|(&u, hi)| (0.0..=hi).contains(&u))
    }
}

/// Model constants. `Default` is the mean column of the published parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpvParameters {
    /// Vaccine escape fraction (the table lists `1 - epsilon = 0.9`).
    pub epsilon: f64,
    pub theta: f64,
    pub beta_m: f64,
    pub beta_f: f64,
    pub beta_f_tilde: f64,
    pub gamma_f: f64,
    pub gamma_m: f64,
    pub p: f64,
    pub mu_f: f64,
    pub mu_m: f64,
    pub a1_over_a0: f64,
    pub a2_over_a0: f64,
    pub a3_over_a0: f64,
    pub u_max: f64,
    pub alpha_max: f64,
    pub j_max: f64,
}

impl Default for HpvParameters {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            theta: 1.0 / 10.0,
            beta_m: 4.0,
            beta_f: 4.0,
            beta_f_tilde: 2.0,
            gamma_f: 1.0 / 1.3,
            gamma_m: 1.0 / 0.6,
            p: 0.2,
            mu_f: 1.0 / 30.0,
            mu_m: 1.0 / 30.0,
            a1_over_a0: 0.5,
            a2_over_a0: 0.2,
            a3_over_a0: 0.4,
            u_max: 3.0,
            alpha_max: 3.0,
            j_max: 200.0,
        }
    }
}

impl HpvParameters {
    /// Upper saturation limit of each control; the lower limit is 0.
    pub fn control_upper(&self) -> ControlArray {
        [1.0, 1.0, self.u_max, self.u_max, self.alpha_max]
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            ("theta", self.theta),
            ("beta_m", self.beta_m),
            ("beta_f", self.beta_f),
            ("beta_f_tilde", self.beta_f_tilde),
            ("gamma_f", self.gamma_f),
            ("gamma_m", self.gamma_m),
            ("mu_f", self.mu_f),
            ("mu_m", self.mu_m),
            ("a1_over_a0", self.a1_over_a0),
            ("a2_over_a0", self.a2_over_a0),
            ("a3_over_a0", self.a3_over_a0),
            ("u_max", self.u_max),
            ("alpha_max", self.alpha_max),
            ("j_max", self.j_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(DynamicsError::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        if !(0.0..=0.2).contains(&self.epsilon) {
            return Err(DynamicsError::InvalidParameter {
                name: "epsilon",
                reason: format!("must lie in [0, 0.2], got {}", self.epsilon),
            });
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(DynamicsError::InvalidParameter {
                name: "p",
                reason: format!("must lie in [0, 1], got {}", self.p),
            });
        }
        Ok(())
    }
}

/// Zero-control part `f(x)` of the model.
pub fn hpv_drift(state: &SystemState, params: &HpvParameters) -> StateVec {
    let HpvParameters {
        epsilon: eps,
        theta,
        beta_m,
        beta_f,
        beta_f_tilde,
        gamma_f,
        gamma_m,
        p,
        mu_f,
        mu_m,
        ..
    } = *params;
    let [uf, i_f, vf, im, vm] = state.epi();

    // susceptible pools plus the vaccinated who escape protection
    let exposed_f = (1.0 - uf - i_f - vf) + eps * vf;
    let exposed_m = (1.0 - im - vm) + eps * vm;
    let force_on_m = beta_f * uf + beta_f_tilde * i_f;

    [
        exposed_f * (1.0 - p) * beta_m * im - (gamma_f + mu_f) * uf,
        exposed_f * p * beta_m * im - (gamma_f + mu_f) * i_f,
        -eps * beta_m * vf * im - (mu_f + theta) * vf,
        force_on_m * exposed_m - (gamma_m + mu_m) * im,
        -force_on_m * eps * vm - (mu_m + theta) * vm,
    ]
}

/// Input matrix `g(x)`.
pub fn hpv_control_matrix(state: &SystemState, params: &HpvParameters) -> ControlMatrix {
    let [uf, i_f, vf, im, vm] = state.epi();
    [
        [0.0, 0.0, 0.0, 0.0, -uf],
        [0.0, 0.0, 0.0, 0.0, uf],
        [params.mu_f, 0.0, 1.0 - uf - i_f - vf, 0.0, 0.0],
        [0.0; N_CONTROL],
        [0.0, params.mu_m, 0.0, 1.0 - im - vm, 0.0],
    ]
}

/// `f(x) + g(x)·u` over the five compartments.
pub fn hpv_rhs(state: &SystemState, controls: &ControlArray, params: &HpvParameters) -> StateVec {
    let mut dx = hpv_drift(state, params);
    let g = hpv_control_matrix(state, params);
    for (d, row) in dx.iter_mut().zip(g.iter()) {
        *d += row.iter().zip(controls).map(|(a, b)| a * b).sum::<f64>();
    }
    dx
}

/// Rate at which the intervention budget is spent.
pub fn running_cost_rate(controls: &ControlVector, params: &HpvParameters) -> f64 {
    let ControlVector {
        w1,
        w2,
        u1,
        u2,
        alpha,
    } = *controls;
    0.5 * (params.a1_over_a0 * (w1 * w1 + w2 * w2)
        + params.a2_over_a0 * (u1 * u1 + u2 * u2)
        + params.a3_over_a0 * alpha * alpha)
}

fn augmented_rhs(
    z: &[f64; N_STATE + 1],
    controls: &ControlVector,
    budget_rate: f64,
    params: &HpvParameters,
) -> [f64; N_STATE + 1] {
    let s = SystemState::from_augmented(*z);
    let dx = hpv_rhs(&s, &controls.to_array(), params);
    [dx[0], dx[1], dx[2], dx[3], dx[4], budget_rate]
}

/// State after one RK4 step, with the number of components that had to be
/// clamped back into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: SystemState,
    pub clamp_events: u32,
}

/// Advances the augmented six-dimensional system by `dt` with the controls
/// held constant over the step.
pub fn integrate_step(
    state: &SystemState,
    controls: &ControlVector,
    params: &HpvParameters,
    dt: f64,
) -> Result<StepOutcome, DynamicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynamicsError::BadStep(dt));
    }
    let rate = running_cost_rate(controls, params);
    let z0 = state.augmented();
    let axpy = |a: &[f64; 6], k: &[f64; 6], h: f64| {
        let mut out = *a;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += h * ki;
        }
        out
    };
    let k1 = augmented_rhs(&z0, controls, rate, params);
    let k2 = augmented_rhs(&axpy(&z0, &k1, 0.5 * dt), controls, rate, params);
    let k3 = augmented_rhs(&axpy(&z0, &k2, 0.5 * dt), controls, rate, params);
    let k4 = augmented_rhs(&axpy(&z0, &k3, dt), controls, rate, params);

    let mut z = z0;
    for i in 0..z.len() {
        z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFiniteState(z));
    }

    let mut clamp_events = 0;
    for v in z.iter_mut().take(N_STATE) {
        if *v < 0.0 || *v > 1.0 {
            *v = v.clamp(0.0, 1.0);
            clamp_events += 1;
        }
    }
    Ok(StepOutcome {
        state: SystemState::from_augmented(z),
        clamp_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1() -> SystemState {
        SystemState::new([0.1, 0.05, 0.2, 0.1, 0.1], 0.0)
    }

    #[test]
    fn origin_is_equilibrium_of_drift() {
        assert_eq!(
            hpv_drift(&SystemState::ZERO, &HpvParameters::default()),
            [0.0; 5]
        );
    }

    #[test]
    fn vaccinated_female_decay() {
        let s = SystemState::new([0.0, 0.0, 0.3, 0.0, 0.0], 0.0);
        let d = hpv_drift(&s, &HpvParameters::default());
        assert!((d[2] + 0.04).abs() < 1e-15, "{}", d[2]);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn drift_matches_golden_fixture() {
        // Generated by tests/fixtures/golden.py (sympy, exact rationals).
        let expected = [
            1.34143589743589753e-01,
            1.34717948717948711e-02,
            -3.46666666666666651e-02,
            2.34999999999999987e-01,
            -1.83333333333333334e-02,
        ];
        let d = hpv_drift(&g1(), &HpvParameters::default());
        for (a, b) in d.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn control_matrix_rows() {
        let p = HpvParameters::default();
        let g0 = hpv_control_matrix(&SystemState::ZERO, &p);
        assert_eq!(g0[2], [p.mu_f, 0.0, 1.0, 0.0, 0.0]);

        let s = SystemState::new([0.4, 0.0, 0.0, 0.2, 0.1], 0.0);
        let g = hpv_control_matrix(&s, &p);
        assert_eq!(g[0][4], -0.4);
        assert_eq!(g[1][4], 0.4);
        assert_eq!(g[3], [0.0; 5]);
        assert_eq!(&g[4][..3], &[0.0, p.mu_m, 0.0]);
        assert!((g[4][3] - 0.7).abs() < 1e-15);
        assert_eq!(g[4][4], 0.0);
    }

    #[test]
    fn running_cost_examples() {
        let p = HpvParameters::default();
        assert_eq!(running_cost_rate(&ControlVector::ZERO, &p), 0.0);
        let w = ControlVector {
            w1: 1.0,
            w2: 1.0,
            ..ControlVector::ZERO
        };
        assert!((running_cost_rate(&w, &p) - 0.5).abs() < 1e-15);
        let u = ControlVector {
            u1: 3.0,
            u2: 3.0,
            ..ControlVector::ZERO
        };
        assert!((running_cost_rate(&u, &p) - 1.8).abs() < 1e-14);
    }

    #[test]
    fn zero_state_stays_zero() {
        let p = HpvParameters::default();
        for dt in [1e-3, 0.01, 0.5] {
            let out = integrate_step(&SystemState::ZERO, &ControlVector::ZERO, &p, dt).unwrap();
            assert_eq!(out.state, SystemState::ZERO);
            assert_eq!(out.clamp_events, 0);
        }
    }

    #[test]
    fn rejects_bad_step() {
        let p = HpvParameters::default();
        assert!(matches!(
            integrate_step(&g1(), &ControlVector::ZERO, &p, 0.0),
            Err(DynamicsError::BadStep(_))
        ));
    }

    #[test]
    fn non_finite_is_reported() {
        let p = HpvParameters {
            beta_m: f64::INFINITY,
            ..HpvParameters::default()
        };
        let r = integrate_step(&g1(), &ControlVector::ZERO, &p, 0.01);
        assert!(matches!(r, Err(DynamicsError::NonFiniteState(_))));
    }

    #[test]
    fn clamping_is_counted() {
        // A huge step overshoots the box; the clamp must be observable.
        let p = HpvParameters::default();
        let s = SystemState::new([0.0, 0.0, 0.0, 0.0, 0.99], 0.0);
        let c = ControlVector {
            u2: 3.0,
            w2: 1.0,
            ..ControlVector::ZERO
        };
        let out = integrate_step(&s, &c, &p, 5.0).unwrap();
        assert!(out.clamp_events > 0);
        assert!(out.state.epi().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn default_parameters_validate() {
        HpvParameters::default().validate().unwrap();
        let bad = HpvParameters {
            epsilon: 0.5,
            ..HpvParameters::default()
        };
        assert!(bad.validate().is_err());
    }
}
