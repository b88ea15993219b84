//! Hardware constraints as quadratic hinge penalties, and the training loss.
//!
//! Fusion is continuous during optimization, so buffer residency is charged
//! per candidate group: every contiguous segment of an eligible chain is a
//! possible group, weighted by the product of `σ` on its inner edges and
//! `1 - σ` on the edges that cut it off. At `σ ∈ {0, 1}` exactly the decoded
//! groups carry weight one.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Context, Real};
use crate::config::{AcceleratorConfig, Dim, Role, WorkloadGraph};
use crate::cost::{tile_extent, tile_size, CostBreakdown, Factors};
use crate::relax::RelaxedPoint;

fn add_opt<R: Real>(acc: Option<R>, x: R) -> Option<R> {
    Some(match acc {
        Some(a) => a + x,
        None => x,
    })
}

fn mul_opt<R: Real>(acc: Option<R>, x: R) -> Option<R> {
    Some(match acc {
        Some(a) => a * x,
        None => x,
    })
}

/// `Σ max(0, 1 - T)²`.
pub fn p_valid<C: Context>(ctx: &C, values: &[C::R]) -> C::R {
    values.iter().fold(ctx.constant(0.0), |acc, &t| {
        if t.value() < 1.0 {
            acc + (-t + 1.0).relu_sq()
        } else {
            acc
        }
    })
}

/// `max(0, ∏ spatial - N_PE)²`.
pub fn p_spatial<C: Context>(ctx: &C, f: &Factors<C::R>, cfg: &AcceleratorConfig) -> C::R {
    let pes = crate::cost::pes_effective(ctx, f);
    (pes - cfg.pe_count() as f64).relu_sq()
}

/// Words a node keeps resident at `level`: the tiles of every role charged
/// against that level's capacity. `None` when no role is charged there.
pub fn footprint<C: Context>(ctx: &C, f: &Factors<C::R>, level: usize, cfg: &AcceleratorConfig) -> Option<C::R> {
    cfg.capacity_roles(level).fold(None, |acc, role| add_opt(acc, tile_size(ctx, f, level, role, cfg)))
}

/// Index into the eligible-edge list of every consecutive pair of each chain.
fn chain_edges(graph: &WorkloadGraph) -> Vec<(Vec<usize>, Vec<usize>)> {
    let eligible = graph.eligible_edges();
    graph
        .fusion_chains()
        .into_iter()
        .map(|chain| {
            let edges = chain
                .windows(2)
                .map(|w| {
                    eligible
                        .iter()
                        .position(|e| e.producer == w[0] && e.consumer == w[1])
                        .expect("chain links are eligible edges")
                })
                .collect();
            (chain, edges)
        })
        .collect()
}

/// Capacity penalty over all candidate groups.
pub fn p_mem<C: Context>(
    ctx: &C,
    graph: &WorkloadGraph,
    factors: &[Factors<C::R>],
    sigma: &[C::R],
    cfg: &AcceleratorConfig,
) -> C::R {
    let mut total = ctx.constant(0.0);
    let levels: Vec<usize> = cfg.bounded_levels().collect();
    for (chain, edges) in chain_edges(graph) {
        for &level in &levels {
            let cap = cfg.capacity(level).expect("bounded") as f64;
            let fp: Vec<Option<C::R>> = chain.iter().map(|&v| footprint(ctx, &factors[v], level, cfg)).collect();
            for a in 0..chain.len() {
                let mut size: Option<C::R> = None;
                let mut inner: Option<C::R> = None;
                for b in a..chain.len() {
                    if b > a {
                        inner = mul_opt(inner, sigma[edges[b - 1]]);
                    }
                    if let Some(x) = fp[b] {
                        size = add_opt(size, x);
                    }
                    let Some(s) = size else { continue };
                    // An inactive hinge has zero value and zero gradient.
                    if s.value() <= cap {
                        continue;
                    }
                    let mut w = inner;
                    if a > 0 {
                        w = mul_opt(w, -sigma[edges[a - 1]] + 1.0);
                    }
                    if b + 1 < chain.len() {
                        w = mul_opt(w, -sigma[edges[b]] + 1.0);
                    }
                    let hinge = (s - cap).relu_sq();
                    total = total + w.map_or(hinge, |w| w * hinge);
                }
            }
        }
    }
    total
}

/// `(P, Q, K)` extents of the output tile in the output's on-chip buffer.
pub fn output_tile_shape<C: Context>(ctx: &C, f: &Factors<C::R>, cfg: &AcceleratorConfig) -> [C::R; 3] {
    let lvl = cfg.outer_level(Role::O);
    let sl = cfg.spatial_level();
    [Dim::P, Dim::Q, Dim::K].map(|d| tile_extent(ctx, f, d, lvl, sl))
}

/// `(P, Q, C)` extents of the input tile in the input's outer on-chip buffer.
pub fn input_tile_shape<C: Context>(ctx: &C, f: &Factors<C::R>, cfg: &AcceleratorConfig) -> [C::R; 3] {
    let lvl = cfg.outer_level(Role::I);
    let sl = cfg.spatial_level();
    [Dim::P, Dim::Q, Dim::C].map(|d| tile_extent(ctx, f, d, lvl, sl))
}

/// `Σ σ ‖ln out(producer) - ln in(consumer)‖²` over eligible edges.
pub fn p_align<C: Context>(
    ctx: &C,
    graph: &WorkloadGraph,
    factors: &[Factors<C::R>],
    sigma: &[C::R],
    cfg: &AcceleratorConfig,
) -> C::R {
    let mut total = ctx.constant(0.0);
    for (e, &s) in graph.eligible_edges().iter().zip(sigma) {
        let o = output_tile_shape(ctx, &factors[e.producer], cfg);
        let i = input_tile_shape(ctx, &factors[e.consumer], cfg);
        let mut dist: Option<C::R> = None;
        for k in 0..3 {
            if o[k].value() != i[k].value() {
                let diff = o[k].ln() - i[k].ln();
                dist = add_opt(dist, diff * diff);
            }
        }
        if let Some(d) = dist {
            total = total + d * s;
        }
    }
    total
}

/// Linear ramp from `lambda0` to `lambda_max`, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSchedule {
    pub lambda0: f64,
    pub lambda_max: f64,
    pub ramp_steps: f64,
}

impl LambdaSchedule {
    pub fn new(lambda0: f64, lambda_max: f64, steps: usize, ramp_fraction: f64) -> Self {
        Self { lambda0, lambda_max, ramp_steps: (ramp_fraction * steps as f64).max(1.0) }
    }

    pub fn at(&self, step: usize) -> f64 {
        let t = (step as f64 / self.ramp_steps).min(1.0);
        self.lambda0 + (self.lambda_max - self.lambda0) * t
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms<R> {
    pub edp: R,
    pub edp_normalized: R,
    pub p_map: R,
    pub p_mem: R,
    pub p_align: R,
    pub lambda: f64,
    pub loss: R,
}

impl<R: Real> LossTerms<R> {
    pub fn values(&self) -> LossTerms<f64> {
        LossTerms {
            edp: self.edp.value(),
            edp_normalized: self.edp_normalized.value(),
            p_map: self.p_map.value(),
            p_mem: self.p_mem.value(),
            p_align: self.p_align.value(),
            lambda: self.lambda,
            loss: self.loss.value(),
        }
    }

    pub fn penalty(&self) -> f64 {
        self.p_map.value() + self.p_mem.value() + self.p_align.value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    /// EDP of the starting point.
    pub edp0: f64,
    pub lambda: f64,
    /// Treat `σ` as a constant inside `P_align`, so alignment pressure moves
    /// tiles toward each other rather than pushing the edge apart.
    pub detach_align_sigma: bool,
}

/// `ln(EDP / EDP₀) + λ (P_valid + P_spatial + P_mem + P_align)`.
pub fn augmented_loss<C: Context>(
    ctx: &C,
    breakdown: &CostBreakdown<C::R>,
    point: &RelaxedPoint<C::R>,
    graph: &WorkloadGraph,
    cfg: &AcceleratorConfig,
    settings: LossSettings,
) -> LossTerms<C::R> {
    let LossSettings { edp0, lambda, detach_align_sigma } = settings;
    let mut p_map = p_valid(ctx, &point.continuous);
    for f in &point.factors {
        if f.spatial.iter().map(|x| x.value()).product::<f64>() > cfg.pe_count() as f64 {
            p_map = p_map + p_spatial(ctx, f, cfg);
        }
    }
    let p_mem = p_mem(ctx, graph, &point.factors, &point.sigma, cfg);
    let p_align = if detach_align_sigma {
        let sigma: Vec<C::R> = point.sigma.iter().map(|s| ctx.constant(s.value())).collect();
        p_align(ctx, graph, &point.factors, &sigma, cfg)
    } else {
        p_align(ctx, graph, &point.factors, &point.sigma, cfg)
    };
    let edp_normalized = (breakdown.edp / edp0).ln();
    let loss = edp_normalized + (p_map + p_mem + p_align) * lambda;
    LossTerms { edp: breakdown.edp, edp_normalized, p_map, p_mem, p_align, lambda, loss }
}

/// Partition of the nodes into fusion groups implied by per-edge decisions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionGroups {
    pub groups: Vec<Vec<usize>>,
}

impl FusionGroups {
    /// `fused` follows [`WorkloadGraph::eligible_edges`]. Groups are maximal
    /// runs of fused edges along each chain, in topological order.
    pub fn from_decisions(graph: &WorkloadGraph, fused: &[bool]) -> Self {
        let mut groups = Vec::new();
        for (chain, edges) in chain_edges(graph) {
            let mut cur = vec![chain[0]];
            for (k, &e) in edges.iter().enumerate() {
                if fused[e] {
                    cur.push(chain[k + 1]);
                } else {
                    groups.push(core::mem::replace(&mut cur, vec![chain[k + 1]]));
                }
            }
            groups.push(cur);
        }
        Self { groups }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}
