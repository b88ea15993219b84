//! Continuous stand-ins for discrete mapping decisions.
//!
//! Each tiling slot keeps a positive real `T` (stored as `ln T`). A Gumbel
//! softmax over the logits `-α (T - d_j)²` of the dimension's divisors turns
//! it into a distribution whose mean is differentiable in `T`. The forward
//! pass uses the arg-max divisor and the backward pass the mean (straight
//! through). Fusion edges carry an unconstrained logit squashed into `(0, 1)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Context, Real};
use crate::config::{AcceleratorConfig, Dim, Edge, WorkloadGraph};
use crate::cost::Factors;

/// All divisors of `n` in ascending order.
pub fn divisors_of(n: u64) -> Vec<u64> {
    assert!(n >= 1, "divisors_of(0)");
    let mut low = Vec::new();
    let mut high = Vec::new();
    let mut i = 1u64;
    while i <= n / i {
        if n % i == 0 {
            low.push(i);
            if i != n / i {
                high.push(n / i);
            }
        }
        i += 1;
    }
    low.extend(high.into_iter().rev());
    low
}

/// How a divisor choice enters the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Relaxation {
    /// Hard arg-max divisor forward, expected-divisor gradient backward.
    #[default]
    StraightThrough,
    /// Expected divisor in both passes. Smooth, used for gradient checks.
    Soft,
}

/// Softmax over a dimension's divisors driven by one continuous value.
#[derive(Debug, Clone, PartialEq)]
pub struct DivisorChoice {
    pub dim_size: u64,
    pub divisors: Vec<u64>,
    pub alpha: f64,
    /// Gumbel samples for the current step, one per divisor.
    pub noise: Vec<f64>,
}

impl DivisorChoice {
    pub fn new(dim_size: u64, alpha: f64) -> Self {
        assert!(alpha > 0.0, "alpha must be positive");
        let divisors = divisors_of(dim_size);
        let noise = vec![0.0; divisors.len()];
        Self { dim_size, divisors, alpha, noise }
    }

    pub fn logits<R: Real>(&self, t: R) -> Vec<R> {
        logits(t, &self.divisors, self.alpha)
    }

    pub fn probabilities<R: Real>(&self, t: R, tau: f64) -> Vec<R> {
        gumbel_softmax(&self.logits(t), &self.noise, tau)
    }

    /// Index of the arg-max of `l_j + g_j`; ties go to the larger divisor.
    pub fn hard_index(&self, t: f64) -> usize {
        let l = self.logits(t);
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (j, (&lj, &gj)) in l.iter().zip(&self.noise).enumerate() {
            let v = lj + gj;
            if v >= best_v {
                best = j;
                best_v = v;
            }
        }
        best
    }

    pub fn select<R: Real>(&self, t: R, tau: f64, mode: Relaxation) -> R {
        let p = self.probabilities(t, tau);
        let soft = expected_divisor(&p, &self.divisors);
        match mode {
            Relaxation::Soft => soft,
            Relaxation::StraightThrough => soft.straight_through(self.divisors[self.hard_index(t.value())] as f64),
        }
    }

    /// Fresh Gumbel samples multiplied by `scale`.
    pub fn resample(&mut self, rng: &mut impl Rng, scale: f64) {
        for g in &mut self.noise {
            *g = scale * sample_gumbel(rng);
        }
    }

    pub fn clear_noise(&mut self) {
        self.noise.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// `l_j = -α (t - d_j)²`.
pub fn logits<R: Real>(t: R, divisors: &[u64], alpha: f64) -> Vec<R> {
    divisors
        .iter()
        .map(|&d| {
            let diff = t - d as f64;
            diff * diff * (-alpha)
        })
        .collect()
}

/// `softmax((l + g) / τ)`, shifted by the maximum for stability.
pub fn gumbel_softmax<R: Real>(logits: &[R], noise: &[f64], tau: f64) -> Vec<R> {
    assert_eq!(logits.len(), noise.len(), "noise length must match logits");
    assert!(tau > 0.0, "temperature must be positive");
    let scaled: Vec<R> = logits.iter().zip(noise).map(|(&l, &g)| (l + g) * (1.0 / tau)).collect();
    let shift = scaled.iter().map(|y| y.value()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<R> = scaled.iter().map(|&y| (y - shift).exp()).collect();
    let mut total = e[0];
    for &x in &e[1..] {
        total = total + x;
    }
    e.into_iter().map(|x| x / total).collect()
}

/// `Σ p_j d_j`.
pub fn expected_divisor<R: Real>(p: &[R], divisors: &[u64]) -> R {
    let mut acc = p[0] * divisors[0] as f64;
    for (&pj, &d) in p.iter().zip(divisors).skip(1) {
        acc = acc + pj * d as f64;
    }
    acc
}

/// Straight-through selection for `choice` at `t`.
pub fn straight_through_select<R: Real>(choice: &DivisorChoice, t: R, tau: f64) -> R {
    choice.select(t, tau, Relaxation::StraightThrough)
}

/// Exponential temperature decay with a floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anneal {
    pub tau0: f64,
    pub tau_min: f64,
    pub rate: f64,
}

impl Anneal {
    /// Reaches `tau_min` after `fraction` of `steps`.
    pub fn new(tau0: f64, tau_min: f64, steps: usize, fraction: f64) -> Self {
        let horizon = (fraction * steps as f64).max(1.0);
        let rate = if tau0 > tau_min { libm::log(tau0 / tau_min) / horizon } else { 0.0 };
        Self { tau0, tau_min, rate }
    }

    pub fn tau(&self, step: usize) -> f64 {
        let t = self.tau0 * libm::exp(-self.rate * step as f64);
        // The floor also absorbs rounding at the exact crossing step.
        if t <= self.tau_min * (1.0 + 1e-12) {
            self.tau_min
        } else {
            t
        }
    }
}

/// One Gumbel(0, 1) sample via `-ln(-ln u)` with `u` in the open unit interval.
pub fn sample_gumbel(rng: &mut impl Rng) -> f64 {
    let mut u: f64 = rng.random();
    if u <= 0.0 {
        u = f64::MIN_POSITIVE;
    }
    -libm::log(-libm::log(u))
}

/// Generator for the noise of one step of one restart.
pub fn noise_rng(seed: u64, restart: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ restart.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(step);
    rng
}

/// Fusion decision on one eligible edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionVar {
    pub edge: Edge,
    pub raw: f64,
}

impl FusionVar {
    pub fn sigma(&self) -> f64 {
        self.raw.sigmoid()
    }
}

/// Where a tiling slot sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotLevel {
    Temporal(usize),
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotId {
    pub node: usize,
    pub dim: Dim,
    pub level: SlotLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub id: SlotId,
    pub choice: DivisorChoice,
}

/// Trainable state of one optimization run.
///
/// `values` holds `ln T` for every slot followed by the raw logit of every
/// fusion variable. Slots exist for temporal levels below DRAM and for the
/// accelerator's spatial dimensions, and only where the extent exceeds 1. The
/// DRAM factor is derived as the extent divided by the inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingParams {
    pub slots: Vec<Slot>,
    pub fusion: Vec<FusionVar>,
    pub values: Vec<f64>,
    pub tau: f64,
    pub step: usize,
    /// `lookup[node][dim][level]`, with the spatial slot stored at `dram`.
    lookup: Vec<[Vec<Option<usize>>; 7]>,
}

/// Factors of every node plus the extra quantities the penalties need.
#[derive(Debug, Clone)]
pub struct RelaxedPoint<R> {
    pub factors: Vec<Factors<R>>,
    /// Continuous slot values `T` and derived DRAM factors; all should be ≥ 1.
    pub continuous: Vec<R>,
    /// `σ` per eligible edge, in [`WorkloadGraph::eligible_edges`] order.
    pub sigma: Vec<R>,
}

impl MappingParams {
    pub fn new(graph: &WorkloadGraph, cfg: &AcceleratorConfig, alpha: f64) -> Self {
        let dram = cfg.dram();
        let mut slots = Vec::new();
        let mut lookup = Vec::with_capacity(graph.len());
        for (ni, node) in graph.nodes().iter().enumerate() {
            let mut per_dim: [Vec<Option<usize>>; 7] = Default::default();
            for d in Dim::ALL {
                let extent = node.dims.get(d);
                let mut row = vec![None; dram + 1];
                if extent > 1 {
                    let levels = (0..dram)
                        .map(SlotLevel::Temporal)
                        .chain(cfg.is_spatial(d).then_some(SlotLevel::Spatial));
                    for level in levels {
                        let at = match level {
                            SlotLevel::Temporal(m) => m,
                            SlotLevel::Spatial => dram,
                        };
                        row[at] = Some(slots.len());
                        slots.push(Slot { id: SlotId { node: ni, dim: d, level }, choice: DivisorChoice::new(extent, alpha) });
                    }
                }
                per_dim[d.index()] = row;
            }
            lookup.push(per_dim);
        }
        let fusion: Vec<FusionVar> = graph.eligible_edges().into_iter().map(|edge| FusionVar { edge, raw: 0.0 }).collect();
        let values = vec![0.0; slots.len() + fusion.len()];
        Self { slots, fusion, values, tau: 1.0, step: 0, lookup }
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_index(&self, node: usize, dim: Dim, level: SlotLevel) -> Option<usize> {
        let row = &self.lookup[node][dim.index()];
        match level {
            SlotLevel::Temporal(m) if m + 1 < row.len() => row[m],
            SlotLevel::Temporal(_) => None,
            SlotLevel::Spatial => row[row.len() - 1],
        }
    }

    /// Continuous value `T` of a slot.
    pub fn t(&self, slot: usize) -> f64 {
        libm::exp(self.values[slot])
    }

    pub fn set_t(&mut self, slot: usize, t: f64) {
        self.values[slot] = libm::log(t);
    }

    pub fn raw_sigma(&self, edge: usize) -> f64 {
        self.values[self.slots.len() + edge]
    }

    pub fn set_raw_sigma(&mut self, edge: usize, raw: f64) {
        let n = self.slots.len();
        self.values[n + edge] = raw;
        self.fusion[edge].raw = raw;
    }

    /// Draw fresh Gumbel noise for every slot, multiplied by `scale`.
    pub fn resample_noise(&mut self, seed: u64, restart: u64, step: u64, scale: f64) {
        let mut rng = noise_rng(seed, restart, step);
        for s in &mut self.slots {
            s.choice.resample(&mut rng, scale);
        }
    }

    pub fn clear_noise(&mut self) {
        for s in &mut self.slots {
            s.choice.clear_noise();
        }
    }

    /// Arg-max divisor of a slot under the current noise.
    pub fn hard_divisor(&self, slot: usize) -> u64 {
        let c = &self.slots[slot].choice;
        c.divisors[c.hard_index(self.t(slot))]
    }

    /// Leaves for the current values: trainable on a tape, plain otherwise.
    pub fn leaves<C: Context>(&self, ctx: &C) -> Vec<C::R> {
        self.values.iter().map(|&v| ctx.variable(v)).collect()
    }

    /// Build every node's factors from `leaves` (see [`MappingParams::leaves`]).
    pub fn relaxed<C: Context>(
        &self,
        ctx: &C,
        leaves: &[C::R],
        graph: &WorkloadGraph,
        cfg: &AcceleratorConfig,
        tau: f64,
        mode: Relaxation,
    ) -> RelaxedPoint<C::R> {
        assert_eq!(leaves.len(), self.values.len(), "one leaf per parameter");
        let dram = cfg.dram();
        let one = ctx.constant(1.0);
        let mut continuous = Vec::with_capacity(self.slots.len() + 7 * graph.len());
        let mut chosen: Vec<Option<C::R>> = vec![None; self.slots.len()];
        for (i, slot) in self.slots.iter().enumerate() {
            let t = leaves[i].exp();
            continuous.push(t);
            chosen[i] = Some(slot.choice.select(t, tau, mode));
        }
        let mut factors = Vec::with_capacity(graph.len());
        for (ni, node) in graph.nodes().iter().enumerate() {
            let mut f = Factors::ones(one, dram + 1);
            for d in Dim::ALL {
                let di = d.index();
                let row = &self.lookup[ni][di];
                let mut inner: Option<C::R> = None;
                for (at, slot) in row.iter().enumerate() {
                    let Some(s) = *slot else { continue };
                    let v = chosen[s].expect("every slot selected");
                    if at == dram {
                        f.spatial[di] = v;
                    } else {
                        f.temporal[at][di] = v;
                    }
                    inner = Some(match inner {
                        Some(acc) => acc * v,
                        None => v,
                    });
                }
                let extent = node.dims.get(d) as f64;
                f.temporal[dram][di] = match inner {
                    Some(p) => {
                        let q = ctx.constant(extent) / p;
                        continuous.push(q);
                        q
                    }
                    None => ctx.constant(extent),
                };
            }
            factors.push(f);
        }
        let sigma = leaves[self.slots.len()..].iter().map(|&r| r.sigmoid()).collect();
        RelaxedPoint { factors, continuous, sigma }
    }
}
