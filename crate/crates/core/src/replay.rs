//! Experience replay.
//!
//! [`FastBuffer`] is a short FIFO of the most recent samples. [`SlowBuffer`]
//! is the long-term memory: samples leaving the fast buffer are absorbed into
//! Gaussian clusters whose spreads grow when they absorb, shrink under
//! periodic forgetting, and which are pruned when too narrow or merged when
//! they overlap. [`RerBuffer`] is the uniform-replay baseline; the static
//! clustering baseline reuses [`SlowBuffer`] through [`SlowBuffer::absorb_static`].

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlArray, StateVec, N_CONTROL, N_STATE};

/// Dimension of a sample viewed as a point: state followed by control.
pub const POINT_DIM: usize = N_STATE + N_CONTROL;
pub type Point = [f64; POINT_DIM];

/// Time tag carried by samples synthesised from cluster statistics.
pub const SYNTHETIC_TIME: f64 = -1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("slow buffer would exceed {0} clusters")]
    ClusterCapacityExceeded(usize),
    #[error("cannot build a mini-batch from empty replay buffers")]
    EmptyReplay,
    #[error("invalid replay setting `{name}`: {reason}")]
    InvalidConfig { name: &'static str, reason: String },
}

/// One `(state, control)` experience.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: StateVec,
    pub u: ControlArray,
    pub t: f64,
    pub run_id: u64,
}

impl Sample {
    pub fn point(&self) -> Point {
        let mut p = [0.0; POINT_DIM];
        p[..N_STATE].copy_from_slice(&self.x);
        p[N_STATE..].copy_from_slice(&self.u);
        p
    }

    pub fn synthetic(p: &Point) -> Self {
        Self {
            x: std::array::from_fn(|k| p[k]),
            u: std::array::from_fn(|i| p[N_STATE + i]),
            t: SYNTHETIC_TIME,
            run_id: 0,
        }
    }
}

/// Box that synthetic samples are clamped into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBounds {
    pub lower: Point,
    pub upper: Point,
}

impl SampleBounds {
    /// Unit box for the state and `[0, upper]` for the controls.
    pub fn new(control_upper: ControlArray) -> Self {
        let mut upper = [1.0; POINT_DIM];
        upper[N_STATE..].copy_from_slice(&control_upper);
        Self {
            lower: [0.0; POINT_DIM],
            upper,
        }
    }

    pub fn clamp(&self, p: &mut Point) {
        for ((v, lo), hi) in p.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

impl Default for SampleBounds {
    fn default() -> Self {
        Self::new([1.0, 1.0, 3.0, 3.0, 3.0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub fast_capacity: usize,
    /// Membership threshold `Γ_th`; a sample at or below it starts a new cluster.
    pub gamma_th: f64,
    /// Spread of a freshly created cluster.
    pub sigma0: f64,
    /// Amplification factor applied to the absorbing cluster's spread.
    pub beta: f64,
    /// Forgetting scale.
    pub rho: f64,
    /// Clusters with spread at or below this are pruned.
    pub sigma_th: f64,
    /// Merge coefficient `γ`.
    pub gamma_merge: f64,
    /// Outer steps between forgetting passes.
    pub forget_every: usize,
    /// Random intra-cluster draws per mini-batch.
    pub batch_extra: usize,
    pub max_clusters: usize,
    /// Capacity of the uniform-replay baseline buffer.
    pub rer_capacity: usize,
    /// Mini-batch size for the uniform-replay baseline.
    pub rer_batch: usize,
    pub bounds: SampleBounds,
}

/// `γ = √(−2 ln γ̄)`: the centre distance, in units of the wider spread, at
/// which a cluster centre still has membership `γ̄` in its neighbour.
pub fn merge_coefficient(overlap: f64) -> f64 {
    (-2.0 * overlap.ln()).sqrt()
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            fast_capacity: 32,
            gamma_th: 0.5,
            sigma0: 0.02,
            beta: 0.05,
            rho: 0.02,
            sigma_th: 0.005,
            gamma_merge: merge_coefficient(0.95),
            forget_every: 50,
            batch_extra: 16,
            max_clusters: 4096,
            rer_capacity: 1024,
            rer_batch: 48,
            bounds: SampleBounds::default(),
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<(), ReplayError> {
        let bad = |name, reason: String| Err(ReplayError::InvalidConfig { name, reason });
        if !(self.gamma_th > 0.0 && self.gamma_th < 1.0) {
            return bad(
                "gamma_th",
                format!("must lie in (0, 1), got {}", self.gamma_th),
            );
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad("sigma0", format!("must be > 0, got {}", self.sigma0));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta", format!("must be > 0, got {}", self.beta));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho", format!("must be > 0, got {}", self.rho));
        }
        if !(self.sigma_th > 0.0 && self.sigma_th < self.sigma0) {
            return bad(
                "sigma_th",
                format!("must lie in (0, sigma0), got {}", self.sigma_th),
            );
        }
        if !(self.gamma_merge > 0.0 && self.gamma_merge.is_finite()) {
            return bad(
                "gamma_merge",
                format!("must be > 0, got {}", self.gamma_merge),
            );
        }
        if self.fast_capacity == 0 {
            return bad("fast_capacity", "must be >= 1".into());
        }
        if self.forget_every == 0 {
            return bad("forget_every", "must be >= 1".into());
        }
        if self.max_clusters == 0 {
            return bad("max_clusters", "must be >= 1".into());
        }
        if self.rer_capacity == 0 || self.rer_batch == 0 {
            return bad("rer_capacity", "RER capacity and batch must be >= 1".into());
        }
        if self
            .bounds
            .lower
            .iter()
            .zip(&self.bounds.upper)
            .any(|(lo, hi)| !(lo <= hi))
        {
            return bad(
                "bounds",
                "every lower bound must be <= its upper bound".into(),
            );
        }
        Ok(())
    }
}

/// Gaussian cluster in the joint state–control space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: u64,
    pub center: Point,
    pub sigma: f64,
    pub count: u64,
}

fn squared_distance(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(−‖p − c‖² / (2σ²))`.
pub fn membership_of(p: &Point, cluster: &Cluster) -> f64 {
    let d2 = squared_distance(p, &cluster.center);
    if d2 == 0.0 {
        return 1.0;
    }
    (-d2 / (2.0 * cluster.sigma * cluster.sigma)).exp()
}

pub fn membership(sample: &Sample, cluster: &Cluster) -> f64 {
    membership_of(&sample.point(), cluster)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Absorption {
    NewCluster(u64),
    Joined(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub kept: u64,
    pub absorbed: u64,
    pub distance: f64,
}

/// FIFO of recent samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FastBuffer {
    samples: VecDeque<Sample>,
}

impl FastBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, s: Sample) {
        self.samples.push_back(s);
    }

    pub fn pop_oldest(&mut self) -> Option<Sample> {
        self.samples.pop_front()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter()
    }
}

/// Clustered long-term memory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlowBuffer {
    clusters: Vec<Cluster>,
    next_id: u64,
    /// Sample mass discarded by pruning.
    forgotten_mass: u64,
}

impl SlowBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn total_count(&self) -> u64 {
        self.clusters.iter().map(|c| c.count).sum()
    }

    pub fn forgotten_mass(&self) -> u64 {
        self.forgotten_mass
    }

    /// Inserts a cluster as-is. Intended for tests and for restoring snapshots.
    pub fn insert_cluster(&mut self, center: Point, sigma: f64, count: u64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.clusters.push(Cluster {
            id,
            center,
            sigma,
            count,
        });
        id
    }

    /// Index and value of the strongest membership; ties go to the older cluster.
    fn best_match(&self, p: &Point) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.clusters.iter().enumerate() {
            let m = membership_of(p, c);
            if best.is_none_or(|(_, bm)| m > bm) {
                best = Some((i, m));
            }
        }
        best
    }

    fn absorb_point(
        &mut self,
        p: &Point,
        cfg: &ReplayConfig,
        amplify: bool,
    ) -> Result<Absorption, ReplayError> {
        match self.best_match(p) {
            Some((j, m)) if m > cfg.gamma_th => {
                let c = &mut self.clusters[j];
                let n = c.count as f64;
                for (ck, pk) in c.center.iter_mut().zip(p) {
                    *ck = (n * *ck + pk) / (n + 1.0);
                }
                c.count += 1;
                if amplify {
                    c.sigma *= 1.0 + cfg.beta;
                }
                Ok(Absorption::Joined(c.id))
            }
            _ => {
                if self.clusters.len() >= cfg.max_clusters {
                    return Err(ReplayError::ClusterCapacityExceeded(cfg.max_clusters));
                }
                Ok(Absorption::NewCluster(
                    self.insert_cluster(*p, cfg.sigma0, 1),
                ))
            }
        }
    }

    /// Self-organising absorption: join the best-matching cluster (moving
    /// its centre to the running mean and widening it by `1 + β`) or start a
    /// new cluster at the sample.
    pub fn absorb(&mut self, s: &Sample, cfg: &ReplayConfig) -> Result<Absorption, ReplayError> {
        self.absorb_point(&s.point(), cfg, true)
    }

    /// Static clustering baseline: same assignment rule, spreads never change.
    pub fn absorb_static(
        &mut self,
        s: &Sample,
        cfg: &ReplayConfig,
    ) -> Result<Absorption, ReplayError> {
        self.absorb_point(&s.point(), cfg, false)
    }

    /// Scales every spread by `σ₀/ρ · (1 − N_k/ΣN)`.
    pub fn apply_forgetting(&mut self, cfg: &ReplayConfig) {
        let total = self.total_count() as f64;
        if total == 0.0 {
            return;
        }
        let scale = cfg.sigma0 / cfg.rho;
        for c in &mut self.clusters {
            c.sigma *= scale * (1.0 - c.count as f64 / total);
        }
    }

    /// Removes clusters with `σ ≤ σ_th`, returning their ids.
    pub fn prune_narrow(&mut self, cfg: &ReplayConfig) -> Vec<u64> {
        let mut removed = Vec::new();
        let mut forgotten = 0;
        self.clusters.retain(|c| {
            let narrow = c.sigma <= cfg.sigma_th;
            if narrow {
                removed.push(c.id);
                forgotten += c.count;
            }
            !narrow
        });
        self.forgotten_mass += forgotten;
        removed
    }

    /// Merges overlapping clusters, closest pair first, until no pair
    /// satisfies `‖c_i − c_j‖ < γ·max(σ_i, σ_j)`.
    ///
    /// The wider cluster keeps its id and spread; the centre becomes the
    /// count-weighted mean and counts add.
    pub fn merge_similar(&mut self, cfg: &ReplayConfig) -> Vec<MergeEvent> {
        let mut events = Vec::new();
        loop {
            let mut best: Option<(f64, (u64, u64), usize, usize)> = None;
            for i in 0..self.clusters.len() {
                for j in (i + 1)..self.clusters.len() {
                    let (a, b) = (&self.clusters[i], &self.clusters[j]);
                    let d = squared_distance(&a.center, &b.center).sqrt();
                    if !(d < cfg.gamma_merge * a.sigma.max(b.sigma)) {
                        continue;
                    }
                    let key = (a.id.min(b.id), a.id.max(b.id));
                    let better = match best {
                        None => true,
                        Some((bd, bkey, _, _)) => d < bd || (d == bd && key < bkey),
                    };
                    if better {
                        best = Some((d, key, i, j));
                    }
                }
            }
            let Some((distance, _, i, j)) = best else {
                break;
            };
            let (a, b) = (self.clusters[i], self.clusters[j]);
            let (keep, drop) = if b.sigma > a.sigma || (b.sigma == a.sigma && b.id < a.id) {
                (j, i)
            } else {
                (i, j)
            };
            let (na, nb) = (a.count as f64, b.count as f64);
            let merged = Cluster {
                id: self.clusters[keep].id,
                center: std::array::from_fn(|k| (na * a.center[k] + nb * b.center[k]) / (na + nb)),
                sigma: a.sigma.max(b.sigma),
                count: a.count + b.count,
            };
            events.push(MergeEvent {
                kept: merged.id,
                absorbed: self.clusters[drop].id,
                distance,
            });
            self.clusters[keep] = merged;
            self.clusters.remove(drop);
        }
        events
    }
}

/// Mini-batch: every fast-buffer sample, every cluster centre, and
/// `batch_extra` Gaussian draws from clusters picked with probability
/// proportional to their counts.
pub fn make_minibatch<R: Rng + ?Sized>(
    fast: &FastBuffer,
    slow: &SlowBuffer,
    cfg: &ReplayConfig,
    rng: &mut R,
) -> Result<Vec<Sample>, ReplayError> {
    if fast.is_empty() && slow.is_empty() {
        return Err(ReplayError::EmptyReplay);
    }
    let mut batch: Vec<Sample> = fast.iter().copied().collect();
    batch.extend(slow.clusters().iter().map(|c| Sample::synthetic(&c.center)));
    if !slow.is_empty() && cfg.batch_extra > 0 {
        let picker = WeightedIndex::new(slow.clusters().iter().map(|c| c.count))
            .expect("cluster counts are positive");
        for _ in 0..cfg.batch_extra {
            let c = &slow.clusters()[picker.sample(rng)];
            let mut p = c.center;
            for v in p.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += c.sigma * z;
            }
            cfg.bounds.clamp(&mut p);
            batch.push(Sample::synthetic(&p));
        }
    }
    Ok(batch)
}

/// Uniform experience replay over a bounded FIFO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerBuffer {
    ring: VecDeque<Sample>,
    capacity: usize,
    evicted: u64,
}

impl RerBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            ring: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
            evicted: 0,
        }
    }

    pub fn push(&mut self, s: Sample) {
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
            self.evicted += 1;
        }
        self.ring.push_back(s);
    }

    /// `k` draws, uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<Sample>, ReplayError> {
        if self.ring.is_empty() {
            return Err(ReplayError::EmptyReplay);
        }
        Ok((0..k)
            .map(|_| self.ring[rng.random_range(0..self.ring.len())])
            .collect())
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.ring.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_sample(p: Point) -> Sample {
        Sample::synthetic(&p)
    }

    fn at(v: f64) -> Point {
        [v; POINT_DIM]
    }

    /// A point whose distance from the origin is `d`.
    fn along_first_axis(d: f64) -> Point {
        let mut p = [0.0; POINT_DIM];
        p[0] = d;
        p
    }

    #[test]
    fn membership_examples() {
        let c = Cluster {
            id: 0,
            center: [0.0; POINT_DIM],
            sigma: 0.1,
            count: 1,
        };
        assert_eq!(membership_of(&c.center, &c), 1.0);
        assert!((membership_of(&along_first_axis(0.1), &c) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((membership_of(&along_first_axis(0.3), &c) - (-4.5f64).exp()).abs() < 1e-15);
        assert!((membership_of(&along_first_axis(0.3), &c) - 0.01111).abs() < 1e-5);
    }

    #[test]
    fn first_absorb_creates_cluster() {
        let cfg = ReplayConfig::default();
        let mut b = SlowBuffer::new();
        let s = point_sample(at(0.3));
        assert_eq!(b.absorb(&s, &cfg).unwrap(), Absorption::NewCluster(0));
        assert_eq!(b.clusters()[0].center, s.point());
        assert_eq!(b.clusters()[0].sigma, 0.02);
        assert_eq!(b.clusters()[0].count, 1);
    }

    #[test]
    fn absorbing_the_centre_amplifies() {
        let cfg = ReplayConfig::default();
        let mut b = SlowBuffer::new();
        let s = point_sample(at(0.3));
        b.absorb(&s, &cfg).unwrap();
        assert_eq!(b.absorb(&s, &cfg).unwrap(), Absorption::Joined(0));
        let c = b.clusters()[0];
        assert_eq!(c.count, 2);
        assert_eq!(c.center, s.point());
        assert!((c.sigma - 0.02 * 1.05).abs() < 1e-16);
    }

    #[test]
    fn centroid_update_is_running_mean() {
        let cfg = ReplayConfig::default();
        let mut b = SlowBuffer::new();
        b.insert_cluster(along_first_axis(0.5), 1.0, 1);
        b.absorb(&point_sample(along_first_axis(1.0)), &cfg)
            .unwrap();
        let c = b.clusters()[0];
        assert_eq!(c.center[0], 0.75);
        assert_eq!(c.count, 2);
    }

    #[test]
    fn absorb_respects_capacity() {
        let cfg = ReplayConfig {
            max_clusters: 2,
            ..ReplayConfig::default()
        };
        let mut b = SlowBuffer::new();
        b.absorb(&point_sample(at(0.0)), &cfg).unwrap();
        b.absorb(&point_sample(at(0.5)), &cfg).unwrap();
        assert_eq!(
            b.absorb(&point_sample(at(1.0)), &cfg),
            Err(ReplayError::ClusterCapacityExceeded(2))
        );
    }

    #[test]
    fn forgetting_examples() {
        let cfg = ReplayConfig::default();
        let mut b = SlowBuffer::new();
        b.insert_cluster(at(0.0), 0.1, 3);
        b.insert_cluster(at(1.0), 0.1, 3);
        b.apply_forgetting(&cfg);
        assert!((b.clusters()[0].sigma - 0.05).abs() < 1e-16);

        let mut single = SlowBuffer::new();
        single.insert_cluster(at(0.0), 0.1, 4);
        single.apply_forgetting(&cfg);
        assert_eq!(single.clusters()[0].sigma, 0.0);
        assert_eq!(single.prune_narrow(&cfg), vec![0]);
        assert_eq!(single.forgotten_mass(), 4);

        // a cluster holding a vanishing share keeps its spread
        let mut many = SlowBuffer::new();
        many.insert_cluster(at(0.0), 0.1, 1);
        many.insert_cluster(at(1.0), 0.1, 1_000_000);
        many.apply_forgetting(&cfg);
        assert!((many.clusters()[0].sigma - 0.1).abs() < 1e-6);
    }

    #[test]
    fn prune_examples() {
        let cfg = ReplayConfig::default();
        let mut b = SlowBuffer::new();
        assert!(b.prune_narrow(&cfg).is_empty());
        b.insert_cluster(at(0.0), 0.004, 1);
        b.insert_cluster(at(1.0), 0.02, 1);
        assert_eq!(b.prune_narrow(&cfg), vec![0]);
        assert_eq!(b.len(), 1);
        assert_eq!(b.clusters()[0].id, 1);
    }

    #[test]
    fn merge_coefficient_value() {
        assert!((merge_coefficient(0.95) - 0.3203).abs() < 5e-4);
    }

    #[test]
    fn merge_examples() {
        let cfg = ReplayConfig::default();
        assert!((cfg.gamma_merge * 0.1 - 0.03203).abs() < 1e-5);
        let mut b = SlowBuffer::new();
        b.insert_cluster([0.0; POINT_DIM], 0.1, 1);
        b.insert_cluster(along_first_axis(0.03), 0.05, 1);
        let ev = b.merge_similar(&cfg);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kept, 0);
        assert_eq!(b.len(), 1);
        assert_eq!(b.clusters()[0].sigma, 0.1);

        let mut eq = SlowBuffer::new();
        eq.insert_cluster(at(0.0), 10.0, 2);
        eq.insert_cluster(at(1.0), 10.0, 2);
        eq.merge_similar(&cfg);
        assert_eq!(eq.clusters()[0].center, at(0.5));
        assert_eq!(eq.clusters()[0].count, 4);

        let mut far = SlowBuffer::new();
        far.insert_cluster([0.0; POINT_DIM], 0.1, 1);
        far.insert_cluster(along_first_axis(1.0), 0.1, 1);
        assert!(far.merge_similar(&cfg).is_empty());
        assert_eq!(far.len(), 2);
    }

    #[test]
    fn minibatch_from_fast_only() {
        let cfg = ReplayConfig {
            batch_extra: 0,
            ..ReplayConfig::default()
        };
        let mut fast = FastBuffer::new();
        for v in [0.1, 0.2, 0.3] {
            fast.push(point_sample(at(v)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = make_minibatch(&fast, &SlowBuffer::new(), &cfg, &mut rng).unwrap();
        assert_eq!(batch, fast.iter().copied().collect::<Vec<_>>());
    }

    #[test]
    fn minibatch_from_single_cluster() {
        let cfg = ReplayConfig {
            batch_extra: 0,
            ..ReplayConfig::default()
        };
        let mut slow = SlowBuffer::new();
        slow.insert_cluster(at(0.25), 0.02, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = make_minibatch(&FastBuffer::new(), &slow, &cfg, &mut rng).unwrap();
        assert_eq!(batch, vec![Sample::synthetic(&at(0.25))]);
    }

    #[test]
    fn minibatch_needs_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            make_minibatch(
                &FastBuffer::new(),
                &SlowBuffer::new(),
                &ReplayConfig::default(),
                &mut rng
            ),
            Err(ReplayError::EmptyReplay)
        );
    }

    #[test]
    fn minibatch_draws_follow_cluster_size() {
        let cfg = ReplayConfig {
            batch_extra: 1000,
            ..ReplayConfig::default()
        };
        let mut slow = SlowBuffer::new();
        slow.insert_cluster(at(0.2), 0.001, 9);
        slow.insert_cluster(at(0.8), 0.001, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let batch = make_minibatch(&FastBuffer::new(), &slow, &cfg, &mut rng).unwrap();
        let draws = &batch[2..];
        assert_eq!(draws.len(), 1000);
        let first = draws.iter().filter(|s| s.x[0] < 0.5).count() as f64;
        // binomial(1000, 0.9): sd = sqrt(90) ≈ 9.5
        let sd = (1000.0f64 * 0.9 * 0.1).sqrt();
        assert!((first - 900.0).abs() <= 3.0 * sd, "{first}");
        for s in draws {
            assert!(s
                .point()
                .iter()
                .zip(&cfg.bounds.upper)
                .all(|(v, hi)| *v >= 0.0 && v <= hi));
        }
    }

    #[test]
    fn rer_fifo_and_sampling() {
        let mut b = RerBuffer::new(2);
        for v in [0.1, 0.2, 0.3] {
            b.push(point_sample(at(v)));
        }
        let held: Vec<f64> = b.iter().map(|s| s.x[0]).collect();
        assert_eq!(held, vec![0.2, 0.3]);
        assert_eq!(b.evicted(), 1);

        let mut one = RerBuffer::new(4);
        one.push(point_sample(at(0.7)));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(one
            .sample(20, &mut rng)
            .unwrap()
            .iter()
            .all(|s| s.x[0] == 0.7));
        assert_eq!(
            RerBuffer::new(3).sample(1, &mut rng),
            Err(ReplayError::EmptyReplay)
        );
    }

    #[test]
    fn rer_draws_are_uniform() {
        let mut b = RerBuffer::new(10);
        for k in 0..10 {
            let mut s = point_sample(at(0.0));
            s.run_id = k;
            b.push(s);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut freq = [0usize; 10];
        for s in b.sample(10_000, &mut rng).unwrap() {
            freq[s.run_id as usize] += 1;
        }
        let sd = (10_000.0f64 * 0.1 * 0.9).sqrt();
        for f in freq {
            assert!((f as f64 - 1000.0).abs() <= 3.0 * sd, "{freq:?}");
        }
    }

    #[test]
    fn static_clustering_matches_lifecycle_free_sodacer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg_no_amp = ReplayConfig {
            beta: f64::MIN_POSITIVE,
            ..ReplayConfig::default()
        };
        let mut sod = SlowBuffer::new();
        let mut stat = SlowBuffer::new();
        for _ in 0..200 {
            let p: Point = std::array::from_fn(|_| 0.3 + 0.02 * rng.random::<f64>());
            let s = point_sample(p);
            assert_eq!(
                sod.absorb(&s, &cfg_no_amp).unwrap(),
                stat.absorb_static(&s, &cfg_no_amp).unwrap()
            );
        }
        for (a, b) in sod.clusters().iter().zip(stat.clusters()) {
            assert_eq!(a.center, b.center);
            assert_eq!(a.count, b.count);
        }
        assert!(stat.clusters().iter().all(|c| c.sigma == 0.02));
    }

    proptest! {
        #[test]
        fn membership_in_unit_interval(
            p in proptest::array::uniform10(-1.0..1.0f64),
            c in proptest::array::uniform10(-1.0..1.0f64),
            sigma in 0.01..2.0f64,
        ) {
            let cl = Cluster { id: 0, center: c, sigma, count: 1 };
            let m = membership_of(&p, &cl);
            prop_assert!((0.0..=1.0).contains(&m));
            if p == c {
                prop_assert_eq!(m, 1.0);
            } else {
                prop_assert!(m < 1.0);
            }
        }

        #[test]
        fn merge_conserves_mass_and_separates(
            centers in proptest::collection::vec(proptest::array::uniform10(0.0..0.2f64), 1..20),
            sigmas in proptest::collection::vec(0.005..0.2f64, 20),
            counts in proptest::collection::vec(1u64..50, 20),
        ) {
            let cfg = ReplayConfig::default();
            let mut b = SlowBuffer::new();
            for (i, c) in centers.iter().enumerate() {
                b.insert_cluster(*c, sigmas[i], counts[i]);
            }
            let before_len = b.len();
            let before_mass = b.total_count();
            let events = b.merge_similar(&cfg);
            prop_assert_eq!(b.len(), before_len - events.len());
            prop_assert_eq!(b.total_count(), before_mass);
            for i in 0..b.len() {
                for j in (i + 1)..b.len() {
                    let (x, y) = (&b.clusters()[i], &b.clusters()[j]);
                    let d = squared_distance(&x.center, &y.center).sqrt();
                    prop_assert!(!(d < cfg.gamma_merge * x.sigma.max(y.sigma)));
                }
            }
        }
    }
}
