//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's numerics.
#![allow(dead_code, clippy::needless_range_loop)]

use sodacer::dynamics::HpvParameters;

/// Right-hand side of the HPV model plus the budget ODE, written out term
/// by term. State order `(U_f, I_f, V_f, I_m, V_m, J)`, controls
/// `(w1, w2, u1, u2, alpha)`.
pub fn oracle_rhs(z: &[f64; 6], c: &[f64; 5], p: &HpvParameters) -> [f64; 6] {
    let [uf, i_f, vf, im, vm, _] = *z;
    let [w1, w2, u1, u2, al] = *c;
    let sf = 1.0 - uf - i_f - vf;
    let sm = 1.0 - im - vm;
    let exposure_f = (sf + p.epsilon * vf) * p.beta_m * im;
    let force_m = p.beta_f * uf + p.beta_f_tilde * i_f;
    [
        exposure_f * (1.0 - p.p) - (p.gamma_f + al + p.mu_f) * uf,
        exposure_f * p.p + al * uf - (p.gamma_f + p.mu_f) * i_f,
        w1 * p.mu_f + u1 * sf - p.epsilon * p.beta_m * vf * im - (p.mu_f + p.theta) * vf,
        force_m * (sm + p.epsilon * vm) - (p.gamma_m + p.mu_m) * im,
        w2 * p.mu_m - force_m * p.epsilon * vm + u2 * sm - (p.mu_m + p.theta) * vm,
        0.5 * (p.a1_over_a0 * (w1 * w1 + w2 * w2)
            + p.a2_over_a0 * (u1 * u1 + u2 * u2)
            + p.a3_over_a0 * al * al),
    ]
}

/// Forward Euler with step `h`, sampled every `every` steps (the first
/// sample is the initial state).
pub fn euler_path(
    z0: [f64; 6],
    c: &[f64; 5],
    p: &HpvParameters,
    h: f64,
    steps: usize,
    every: usize,
) -> Vec<[f64; 6]> {
    let mut z = z0;
    let mut out = vec![z];
    for k in 1..=steps {
        let d = oracle_rhs(&z, c, p);
        for i in 0..6 {
            z[i] += h * d[i];
        }
        if k % every == 0 {
            out.push(z);
        }
    }
    out
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 60)
}

/// Straight-line bias-corrected moment optimizer over a scripted gradient
/// sequence; returns the weights after every step.
pub fn reference_optimizer(
    w0: &[f64],
    grads: &[Vec<f64>],
    beta1: f64,
    beta2: f64,
    eta: f64,
    eps0: f64,
) -> Vec<Vec<f64>> {
    let n = w0.len();
    let mut w = w0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut b1t = 1.0;
    let mut b2t = 1.0;
    let mut out = Vec::with_capacity(grads.len());
    for g in grads {
        b1t *= beta1;
        b2t *= beta2;
        for i in 0..n {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1t);
            let vh = v[i] / (1.0 - b2t);
            w[i] -= eta * mh / (vh.sqrt() + eps0);
        }
        out.push(w.clone());
    }
    out
}

/// Cluster memory that keeps every member and recomputes everything from
/// scratch on each insertion.
#[derive(Debug, Default)]
pub struct NaiveClusters {
    pub members: Vec<Vec<[f64; 10]>>,
}

impl NaiveClusters {
    pub fn center(&self, k: usize) -> [f64; 10] {
        let mem = &self.members[k];
        let mut c = [0.0; 10];
        for p in mem {
            for d in 0..10 {
                c[d] += p[d];
            }
        }
        c.map(|v| v / mem.len() as f64)
    }

    pub fn sigma(&self, k: usize, sigma0: f64, beta: f64) -> f64 {
        let mut s = sigma0;
        for _ in 1..self.members[k].len() {
            s *= 1.0 + beta;
        }
        s
    }

    /// Returns `true` when the point joined an existing cluster.
    pub fn insert(&mut self, p: [f64; 10], sigma0: f64, beta: f64, gamma_th: f64) -> bool {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..self.members.len() {
            let c = self.center(k);
            let s = self.sigma(k, sigma0, beta);
            let d2: f64 = (0..10).map(|d| (p[d] - c[d]).powi(2)).sum();
            let mu = (-d2 / (2.0 * s * s)).exp();
            if best.is_none_or(|(_, b)| mu > b) {
                best = Some((k, mu));
            }
        }
        match best {
            Some((k, mu)) if mu > gamma_th => {
                self.members[k].push(p);
                true
            }
            _ => {
                self.members.push(vec![p]);
                false
            }
        }
    }
}

/// Relative error `‖a − b‖∞ / max(‖b‖∞, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(floor, f64::max);
    num / den
}
