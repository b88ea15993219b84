//! Analytical traffic, latency and energy model.
//!
//! Every function is generic over [`Real`], so the same code produces exact
//! `f64` numbers for decoded strategies and differentiable tape expressions
//! during optimization.
//!
//! Traffic follows per-tensor reuse: a tile of tensor `T` held at level `i`
//! spans the factors of `dims(T)` at levels `0..=i` (spatial factors only at the
//! spatial level) and is brought in once per iteration of the temporal loops of
//! `dims(T)` above `i`. Loops over dimensions that do not index `T` reuse the
//! resident tile. Outputs accumulate in place, so they leave a level once per
//! completed tile and are never refilled.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{hard_max, Context, Real};
use crate::config::{tensor_dims, AcceleratorConfig, Dim, LayerDims, Role, WorkloadGraph};

/// Tiling factors of one node. `temporal[m][d]` for levels `0..=dram`,
/// `spatial[d]` applied at the accelerator's spatial level.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors<R> {
    pub temporal: Vec<[R; 7]>,
    pub spatial: [R; 7],
}

impl<R: Copy> Factors<R> {
    pub fn ones(one: R, levels: usize) -> Self {
        Self { temporal: vec![[one; 7]; levels], spatial: [one; 7] }
    }
}

impl<R: Real> Factors<R> {
    pub fn values(&self) -> Factors<f64> {
        Factors {
            temporal: self.temporal.iter().map(|row| row.map(|x| x.value())).collect(),
            spatial: self.spatial.map(|x| x.value()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficKind {
    Fill,
    Read,
    #[serde(rename = "writeback")]
    WriteBack,
    Copy,
}

impl TrafficKind {
    pub const ALL: [TrafficKind; 4] = [TrafficKind::Fill, TrafficKind::Read, TrafficKind::WriteBack, TrafficKind::Copy];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn name(self) -> &'static str {
        match self {
            TrafficKind::Fill => "fill",
            TrafficKind::Read => "read",
            TrafficKind::WriteBack => "writeback",
            TrafficKind::Copy => "copy",
        }
    }
}

impl fmt::Display for TrafficKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Word counts per `(level, role, kind)`. Absent entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTable<R> {
    entries: Vec<[[Option<R>; 4]; 3]>,
}

impl<R: Real> TrafficTable<R> {
    pub fn new(levels: usize) -> Self {
        Self { entries: vec![[[None; 4]; 3]; levels] }
    }

    pub fn num_levels(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, level: usize, role: Role, kind: TrafficKind) -> Option<R> {
        self.entries[level][role.index()][kind.index()]
    }

    /// Numeric value of an entry, zero when absent.
    pub fn value(&self, level: usize, role: Role, kind: TrafficKind) -> f64 {
        self.get(level, role, kind).map_or(0.0, |x| x.value())
    }

    pub fn set(&mut self, level: usize, role: Role, kind: TrafficKind, v: R) {
        self.entries[level][role.index()][kind.index()] = Some(v);
    }

    pub fn add(&mut self, level: usize, role: Role, kind: TrafficKind, v: R) {
        let slot = &mut self.entries[level][role.index()][kind.index()];
        *slot = Some(match *slot {
            Some(x) => x + v,
            None => v,
        });
    }

    /// Total words moved at a level, every role and kind. `None` when idle.
    pub fn access(&self, level: usize) -> Option<R> {
        sum(self.entries[level].iter().flatten().flatten().copied())
    }

    pub fn access_value(&self, level: usize) -> f64 {
        self.access(level).map_or(0.0, |x| x.value())
    }

    /// Numeric copy of the table.
    pub fn values(&self) -> TrafficTable<f64> {
        TrafficTable { entries: self.entries.iter().map(|l| l.map(|r| r.map(|k| k.map(|x| x.value())))).collect() }
    }
}

fn sum<R: Real>(mut it: impl Iterator<Item = R>) -> Option<R> {
    let first = it.next()?;
    Some(it.fold(first, |a, b| a + b))
}

fn product<C: Context>(ctx: &C, mut it: impl Iterator<Item = C::R>) -> C::R {
    match it.next() {
        Some(first) => it.fold(first, |a, b| a * b),
        None => ctx.constant(1.0),
    }
}

/// Extent of dimension `d` covered by a tile held at `level`.
pub fn tile_extent<C: Context>(ctx: &C, f: &Factors<C::R>, d: Dim, level: usize, spatial_level: usize) -> C::R {
    let di = d.index();
    let sp = (spatial_level <= level).then_some(f.spatial[di]);
    product(ctx, f.temporal[..=level].iter().map(|row| row[di]).chain(sp))
}

/// Words in the tile of `role` held at `level`.
pub fn tile_size<C: Context>(ctx: &C, f: &Factors<C::R>, level: usize, role: Role, cfg: &AcceleratorConfig) -> C::R {
    let sl = cfg.spatial_level();
    product(ctx, tensor_dims(role).iter().map(|&d| tile_extent(ctx, f, d, level, sl)))
}

/// Number of times a tile of `role` at `level` is brought in: the temporal
/// factors of `dims(role)` strictly above `level`.
pub fn fetch_count<C: Context>(ctx: &C, f: &Factors<C::R>, level: usize, role: Role) -> C::R {
    let outer = &f.temporal[level + 1..];
    let it = tensor_dims(role).iter().flat_map(|&d| outer.iter().map(move |row| row[d.index()]));
    product(ctx, it)
}

/// Completed output tiles leaving `level`. Reduction loops above the level
/// revisit the same tile, so only the output's own dimensions count.
pub fn write_count<C: Context>(ctx: &C, f: &Factors<C::R>, level: usize) -> C::R {
    fetch_count(ctx, f, level, Role::O)
}

/// Spatial factors of the dimensions that do not index `role`: the broadcast
/// group of an operand, or the reduction group of the output.
pub fn bcast_or_reduce_factor<C: Context>(ctx: &C, f: &Factors<C::R>, role: Role) -> C::R {
    let dims = tensor_dims(role);
    product(ctx, Dim::ALL.iter().filter(|d| !dims.contains(d)).map(|d| f.spatial[d.index()]))
}

/// Operand words delivered from the innermost level to the PE array.
pub fn read_pe<C: Context>(ctx: &C, f: &Factors<C::R>, role: Role, ops: f64) -> C::R {
    ctx.constant(ops) / bcast_or_reduce_factor(ctx, f, role)
}

/// Partial sums pushed from the PE array into the accumulator.
pub fn writeback_accum<C: Context>(ctx: &C, f: &Factors<C::R>, ops: f64) -> C::R {
    ctx.constant(ops) / bcast_or_reduce_factor(ctx, f, Role::O)
}

/// Active PEs: the product of all spatial factors.
pub fn pes_effective<C: Context>(ctx: &C, f: &Factors<C::R>) -> C::R {
    product(ctx, f.spatial.iter().copied())
}

/// Unfused traffic of one node.
pub fn node_traffic<C: Context>(ctx: &C, dims: &LayerDims, f: &Factors<C::R>, cfg: &AcceleratorConfig) -> TrafficTable<C::R> {
    let dram = cfg.dram();
    let ops = dims.ops() as f64;
    let mut t = TrafficTable::new(dram + 1);
    for role in [Role::I, Role::W] {
        let chain = cfg.resident_levels(role);
        for (j, &lvl) in chain.iter().enumerate() {
            let parent = chain.get(j + 1).copied().unwrap_or(dram);
            let words = tile_size(ctx, f, lvl, role, cfg) * fetch_count(ctx, f, lvl, role);
            t.add(lvl, role, TrafficKind::Fill, words);
            t.add(parent, role, TrafficKind::Read, words);
        }
        t.add(chain[0], role, TrafficKind::Read, read_pe(ctx, f, role, ops));
    }
    let chain = cfg.resident_levels(Role::O);
    t.add(chain[0], Role::O, TrafficKind::WriteBack, writeback_accum(ctx, f, ops));
    for (j, &lvl) in chain.iter().enumerate() {
        let parent = chain.get(j + 1).copied().unwrap_or(dram);
        let words = tile_size(ctx, f, lvl, Role::O, cfg) * write_count(ctx, f, lvl);
        t.add(parent, Role::O, TrafficKind::WriteBack, words);
    }
    t
}

/// Producer side of a fusion boundary: the DRAM write-back of the output
/// shrinks by `1 - σ` and the remainder becomes an on-chip copy, charged at
/// the output's buffer and at the input buffer of the consumer.
pub fn apply_producer_boundary<R: Real>(t: &mut TrafficTable<R>, sigma: R, cfg: &AcceleratorConfig) {
    let dram = cfg.dram();
    let Some(wb0) = t.get(dram, Role::O, TrafficKind::WriteBack) else { return };
    t.set(dram, Role::O, TrafficKind::WriteBack, wb0 * (-sigma + 1.0));
    let copy = sigma * wb0;
    t.add(cfg.outer_level(Role::O), Role::O, TrafficKind::Copy, copy);
    t.add(cfg.outer_level(Role::I), Role::O, TrafficKind::Copy, copy);
}

/// Consumer side: the input buffer is no longer filled from DRAM, so both its
/// fill and the matching DRAM read shrink by `1 - σ`.
pub fn apply_consumer_boundary<R: Real>(t: &mut TrafficTable<R>, sigma: R, cfg: &AcceleratorConfig) {
    let dram = cfg.dram();
    let outer = cfg.outer_level(Role::I);
    let keep = -sigma + 1.0;
    if let Some(fill) = t.get(outer, Role::I, TrafficKind::Fill) {
        t.set(outer, Role::I, TrafficKind::Fill, fill * keep);
    }
    if let Some(read) = t.get(dram, Role::I, TrafficKind::Read) {
        t.set(dram, Role::I, TrafficKind::Read, read * keep);
    }
}

pub fn apply_fusion_boundary<R: Real>(
    producer: &mut TrafficTable<R>,
    consumer: &mut TrafficTable<R>,
    sigma: R,
    cfg: &AcceleratorConfig,
) {
    apply_producer_boundary(producer, sigma, cfg);
    apply_consumer_boundary(consumer, sigma, cfg);
}

/// Roofline latency: the slower of compute and every level's transfers.
pub fn latency<C: Context>(ctx: &C, t: &TrafficTable<C::R>, f: &Factors<C::R>, ops: f64, cfg: &AcceleratorConfig) -> C::R {
    let mut terms = vec![ctx.constant(ops) / pes_effective(ctx, f)];
    for (i, level) in cfg.levels().iter().enumerate() {
        if let Some(a) = t.access(i) {
            terms.push(a / level.bandwidth_words_per_cycle);
        }
    }
    hard_max(&terms).expect("compute term always present")
}

pub fn energy<C: Context>(ctx: &C, t: &TrafficTable<C::R>, ops: f64, cfg: &AcceleratorConfig) -> C::R {
    let mut e = ctx.constant(ops * cfg.energy_per_op_pj());
    for (i, level) in cfg.levels().iter().enumerate() {
        if let Some(a) = t.access(i) {
            e = e + a * level.epa_pj_per_word;
        }
    }
    e
}

#[derive(Debug, Clone)]
pub struct NodeCost<R> {
    pub traffic: TrafficTable<R>,
    pub ops: f64,
    pub compute_cycles: R,
    pub latency: R,
    pub energy: R,
}

#[derive(Debug, Clone)]
pub struct CostBreakdown<R> {
    pub nodes: Vec<NodeCost<R>>,
    pub ops: f64,
    pub latency: R,
    pub energy: R,
    pub edp: R,
}

/// Traffic of every node with all fusion boundaries applied. `sigma` follows
/// [`WorkloadGraph::eligible_edges`].
pub fn graph_traffic<C: Context>(
    ctx: &C,
    graph: &WorkloadGraph,
    factors: &[Factors<C::R>],
    sigma: &[C::R],
    cfg: &AcceleratorConfig,
) -> Vec<TrafficTable<C::R>> {
    assert_eq!(factors.len(), graph.len(), "one factor set per node");
    let mut tables: Vec<_> =
        graph.nodes().iter().zip(factors).map(|(n, f)| node_traffic(ctx, &n.dims, f, cfg)).collect();
    let eligible = graph.eligible_edges();
    assert_eq!(sigma.len(), eligible.len(), "one fusion value per eligible edge");
    for (e, &s) in eligible.iter().zip(sigma) {
        apply_producer_boundary(&mut tables[e.producer], s, cfg);
        apply_consumer_boundary(&mut tables[e.consumer], s, cfg);
    }
    tables
}

/// Whole-graph cost: latencies and energies add up, EDP is their product.
pub fn graph_edp<C: Context>(
    ctx: &C,
    graph: &WorkloadGraph,
    factors: &[Factors<C::R>],
    sigma: &[C::R],
    cfg: &AcceleratorConfig,
) -> CostBreakdown<C::R> {
    let tables = graph_traffic(ctx, graph, factors, sigma, cfg);
    let mut nodes = Vec::with_capacity(tables.len());
    for ((node, f), traffic) in graph.nodes().iter().zip(factors).zip(tables) {
        let ops = node.dims.ops() as f64;
        let compute_cycles = ctx.constant(ops) / pes_effective(ctx, f);
        let latency = latency(ctx, &traffic, f, ops, cfg);
        let energy = energy(ctx, &traffic, ops, cfg);
        nodes.push(NodeCost { traffic, ops, compute_cycles, latency, energy });
    }
    let latency = sum(nodes.iter().map(|n| n.latency)).expect("non-empty graph");
    let energy = sum(nodes.iter().map(|n| n.energy)).expect("non-empty graph");
    let ops = nodes.iter().map(|n| n.ops).sum();
    CostBreakdown { nodes, ops, latency, energy, edp: energy * latency }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub fill: f64,
    pub read: f64,
    pub writeback: f64,
    pub copy: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficEntry {
    pub level: usize,
    pub role: Role,
    pub kind: TrafficKind,
    pub words: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: String,
    pub ops: f64,
    pub compute_cycles: f64,
    pub latency_cycles: f64,
    pub energy_pj: f64,
    /// `"compute"` or `"L<i>"`, whichever term sets the latency.
    pub bound_by: String,
    pub levels: Vec<LevelReport>,
    pub traffic: Vec<TrafficEntry>,
}

/// Serializable summary of a [`CostBreakdown`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub ops: f64,
    pub latency_cycles: f64,
    pub energy_pj: f64,
    pub edp: f64,
    pub levels: Vec<LevelReport>,
    pub nodes: Vec<NodeReport>,
}

fn level_reports(tables: &[&TrafficTable<f64>]) -> Vec<LevelReport> {
    let levels = tables.first().map_or(0, |t| t.num_levels());
    (0..levels)
        .map(|level| {
            let kind = |k: TrafficKind| -> f64 {
                tables.iter().map(|t| Role::ALL.iter().map(|&r| t.value(level, r, k)).sum::<f64>()).sum()
            };
            let (fill, read, writeback, copy) =
                (kind(TrafficKind::Fill), kind(TrafficKind::Read), kind(TrafficKind::WriteBack), kind(TrafficKind::Copy));
            LevelReport { level, fill, read, writeback, copy, total: fill + read + writeback + copy }
        })
        .collect()
}

impl<R: Real> CostBreakdown<R> {
    pub fn report(&self, graph: &WorkloadGraph, cfg: &AcceleratorConfig) -> CostReport {
        let tables: Vec<TrafficTable<f64>> = self.nodes.iter().map(|n| n.traffic.values()).collect();
        let nodes = self
            .nodes
            .iter()
            .zip(&tables)
            .zip(graph.nodes())
            .map(|((n, t), layer)| {
                let mut bound_by = "compute".to_string();
                let mut worst = n.compute_cycles.value();
                for (i, level) in cfg.levels().iter().enumerate() {
                    let cycles = t.access_value(i) / level.bandwidth_words_per_cycle;
                    if cycles > worst {
                        worst = cycles;
                        bound_by = alloc::format!("L{i}");
                    }
                }
                let mut traffic = Vec::new();
                for level in 0..t.num_levels() {
                    for role in Role::ALL {
                        for kind in TrafficKind::ALL {
                            if let Some(words) = t.get(level, role, kind) {
                                traffic.push(TrafficEntry { level, role, kind, words });
                            }
                        }
                    }
                }
                NodeReport {
                    id: layer.id.clone(),
                    ops: n.ops,
                    compute_cycles: n.compute_cycles.value(),
                    latency_cycles: n.latency.value(),
                    energy_pj: n.energy.value(),
                    bound_by,
                    levels: level_reports(&[t]),
                    traffic,
                }
            })
            .collect();
        CostReport {
            ops: self.ops,
            latency_cycles: self.latency.value(),
            energy_pj: self.energy.value(),
            edp: self.edp.value(),
            levels: level_reports(&tables.iter().collect::<Vec<_>>()),
            nodes,
        }
    }
}
