//! Control-barrier-function safety layer.
//!
//! Every barrier is affine in the augmented state `z = (x, J_cost)`:
//! `h(z) = ∇h·z + offset`, and the safe set is `h ≥ 0`. A control is safe
//! for barrier `h` when `∇h·ż + γ₀h ≥ 0`. Since the compartment dynamics are
//! affine in `u`, each state-barrier margin is affine in `u` too, which lets
//! the filter repair violations by scaling controls back toward zero.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    hpv_control_matrix, hpv_drift, running_cost_rate, ControlArray, ControlVector, HpvParameters,
    SystemState, N_CONTROL, N_STATE,
};

const AUG: usize = N_STATE + 1;
const BISECTION_ROUNDS: usize = 20;
/// Repair passes over the barrier list before falling back to zero control.
const MAX_PASSES: usize = 4 * (2 * N_STATE);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BarrierKind {
    /// `h = x_k`
    Lower(usize),
    /// `h = 1 − x_k`
    Upper(usize),
    /// `h = J_max − J_cost`
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    pub kind: BarrierKind,
    pub grad: [f64; AUG],
    pub offset: f64,
}

impl Barrier {
    pub fn eval(&self, state: &SystemState) -> f64 {
        self.grad
            .iter()
            .zip(state.augmented())
            .map(|(g, z)| g * z)
            .sum::<f64>()
            + self.offset
    }

    pub fn is_budget(&self) -> bool {
        self.kind == BarrierKind::Budget
    }

    pub fn label(&self) -> String {
        use crate::dynamics::STATE_NAMES;
        match self.kind {
            BarrierKind::Lower(k) => format!("{}>=0", STATE_NAMES[k]),
            BarrierKind::Upper(k) => format!("{}<=1", STATE_NAMES[k]),
            BarrierKind::Budget => "j_cost<=j_max".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSet {
    pub barriers: Vec<Barrier>,
    /// Gain of the linear class-K function `α̃(h) = γ₀h`.
    pub gamma0: f64,
}

pub const DEFAULT_GAMMA0: f64 = 5.0;

/// `h = x_k` and `h = 1 − x_k` for each compartment, then the budget cap.
pub fn default_hpv_barriers(params: &HpvParameters) -> BarrierSet {
    hpv_barriers(params, DEFAULT_GAMMA0)
}

pub fn hpv_barriers(params: &HpvParameters, gamma0: f64) -> BarrierSet {
    let mut barriers = Vec::with_capacity(2 * N_STATE + 1);
    for k in 0..N_STATE {
        let mut g = [0.0; AUG];
        g[k] = 1.0;
        barriers.push(Barrier {
            kind: BarrierKind::Lower(k),
            grad: g,
            offset: 0.0,
        });
        g[k] = -1.0;
        barriers.push(Barrier {
            kind: BarrierKind::Upper(k),
            grad: g,
            offset: 1.0,
        });
    }
    let mut g = [0.0; AUG];
    g[N_STATE] = -1.0;
    barriers.push(Barrier {
        kind: BarrierKind::Budget,
        grad: g,
        offset: params.j_max,
    });
    BarrierSet { barriers, gamma0 }
}

/// `∇h·ż + γ₀h` for every barrier, in set order.
pub fn cbf_margin(
    state: &SystemState,
    u: &ControlVector,
    barriers: &BarrierSet,
    params: &HpvParameters,
) -> Vec<f64> {
    let lin = MarginModel::new(state, barriers, params);
    let ua = u.to_array();
    let budget_rate = running_cost_rate(u, params);
    barriers
        .barriers
        .iter()
        .enumerate()
        .map(|(b, bar)| {
            if bar.is_budget() {
                bar.grad[N_STATE] * budget_rate + barriers.gamma0 * bar.eval(state)
            } else {
                lin.margin(b, &ua)
            }
        })
        .collect()
}

/// State-barrier margins written as `m_b(u) = base_b + slope_b·u`.
struct MarginModel {
    base: Vec<f64>,
    slope: Vec<ControlArray>,
}

impl MarginModel {
    fn new(state: &SystemState, barriers: &BarrierSet, params: &HpvParameters) -> Self {
        let f = hpv_drift(state, params);
        let g = hpv_control_matrix(state, params);
        let mut base = Vec::with_capacity(barriers.barriers.len());
        let mut slope = Vec::with_capacity(barriers.barriers.len());
        for bar in &barriers.barriers {
            let gh = &bar.grad[..N_STATE];
            base.push(
                gh.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>()
                    + barriers.gamma0 * bar.eval(state),
            );
            slope.push(std::array::from_fn(|i| {
                (0..N_STATE).map(|k| gh[k] * g[k][i]).sum()
            }));
        }
        Self { base, slope }
    }

    fn margin(&self, b: usize, u: &ControlArray) -> f64 {
        self.base[b] + self.slope[b].iter().zip(u).map(|(s, x)| s * x).sum::<f64>()
    }
}

/// One backoff applied while repairing a barrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backoff {
    pub barrier: usize,
    pub label: String,
    /// Factor applied to the offending coordinates.
    pub scale: f64,
    pub margin_before: f64,
    pub margin_after: f64,
}

/// What the filter did to one proposed control.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Intervention {
    pub raw: ControlArray,
    pub filtered: ControlArray,
    /// Coordinates moved by the `[0, κ_i]` clamp.
    pub clamped: Vec<usize>,
    pub backoffs: Vec<Backoff>,
    pub budget_cutoff: bool,
    /// Repair gave up and returned zero control.
    pub fallback_zero: bool,
}

impl Intervention {
    pub fn is_active(&self) -> bool {
        !self.clamped.is_empty()
            || !self.backoffs.is_empty()
            || self.budget_cutoff
            || self.fallback_zero
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub control: ControlVector,
    pub record: Intervention,
}

/// Minimal modification of a proposed control so that it respects the
/// one-sided control bounds, every state barrier, and the budget cap.
///
/// 1. each `u_i` is clamped into `[0, κ_i]`;
/// 2. if the budget is exhausted the control is zero;
/// 3. otherwise, for each violated state barrier, the coordinates that push
///    its margin down are scaled by a common factor found by bisection.
///
/// Zero control satisfies every state barrier on the box, so the filter is
/// total.
pub fn safety_filter(
    state: &SystemState,
    u_raw: &ControlArray,
    barriers: &BarrierSet,
    params: &HpvParameters,
) -> FilterOutcome {
    let upper = params.control_upper();
    let mut record = Intervention {
        raw: *u_raw,
        ..Intervention::default()
    };
    let mut u: ControlArray = [0.0; N_CONTROL];
    for i in 0..N_CONTROL {
        u[i] = if u_raw[i].is_nan() {
            0.0
        } else {
            u_raw[i].clamp(0.0, upper[i])
        };
        if u[i] != u_raw[i] {
            record.clamped.push(i);
        }
    }

    let budget_exhausted = barriers
        .barriers
        .iter()
        .any(|b| b.is_budget() && b.eval(state) <= 0.0);
    if budget_exhausted {
        record.budget_cutoff = true;
        record.filtered = [0.0; N_CONTROL];
        return FilterOutcome {
            control: ControlVector::ZERO,
            record,
        };
    }

    let model = MarginModel::new(state, barriers, params);
    let state_barriers: Vec<usize> = (0..barriers.barriers.len())
        .filter(|&b| !barriers.barriers[b].is_budget())
        .collect();

    let mut settled = false;
    for _ in 0..MAX_PASSES {
        let mut changed = false;
        for &b in &state_barriers {
            let before = model.margin(b, &u);
            if before >= 0.0 {
                continue;
            }
            let offending: Vec<usize> = (0..N_CONTROL)
                .filter(|&i| model.slope[b][i] < 0.0 && u[i] > 0.0)
                .collect();
            if offending.is_empty() {
                continue;
            }
            let scaled = |lambda: f64| {
                let mut v = u;
                for &i in &offending {
                    v[i] *= lambda;
                }
                v
            };
            // keep `lo` feasible; if even zero fails, take zero
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..BISECTION_ROUNDS {
                let mid = 0.5 * (lo + hi);
                if model.margin(b, &scaled(mid)) >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            u = scaled(lo);
            changed = true;
            record.backoffs.push(Backoff {
                barrier: b,
                label: barriers.barriers[b].label(),
                scale: lo,
                margin_before: before,
                margin_after: model.margin(b, &u),
            });
        }
        if !changed {
            settled = true;
            break;
        }
    }
    if !settled {
        u = [0.0; N_CONTROL];
        record.fallback_zero = true;
    }

    record.filtered = u;
    FilterOutcome {
        control: ControlVector::from_array(u),
        record,
    }
}
