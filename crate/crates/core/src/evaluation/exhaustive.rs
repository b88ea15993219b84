//! Exact minimum-EDP search by enumeration.
//!
//! The decoded strategy space is enumerated per node: for every dimension,
//! every assignment of divisors to the inner slots whose product stays within
//! the extent, with the DRAM factor as the ceiling quotient. Graph EDP is
//! `(Σ E)(Σ L)`, monotone in each node's energy and latency, so a node choice
//! that is no better in energy, latency and buffer footprint than another
//! with the same fusion interface can never be part of a unique optimum.
//! Keeping only Pareto-optimal partial solutions therefore returns the exact
//! optimum of the full joint space while visiting far fewer combinations.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Plain;
use crate::config::{tensor_dims, AcceleratorConfig, Dim, LayerDims, LayerNode, Role, WorkloadGraph};
use crate::cost::{apply_consumer_boundary, apply_producer_boundary, energy, latency, node_traffic};
use crate::error::EvalError;
use crate::optimizer::{exact_cost, DeploymentStrategy, NodeMapping};
use crate::penalty::FusionGroups;

/// Default cap on the number of per-node candidates enumerated.
pub const SPACE_LIMIT: u64 = 10_000_000;
const MAX_LEVELS: usize = 8;

/// Divisor tuples for the inner slots of one dimension, product ≤ extent.
pub fn dim_tuples(extent: u64, slots: usize) -> Vec<Vec<u64>> {
    let divs = crate::relax::divisors_of(extent);
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(slots);
    fn rec(divs: &[u64], extent: u64, slots: usize, prod: u64, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if cur.len() == slots {
            out.push(cur.clone());
            return;
        }
        for &d in divs {
            if prod * d > extent {
                break;
            }
            cur.push(d);
            rec(divs, extent, slots, prod * d, cur, out);
            cur.pop();
        }
    }
    rec(&divs, extent, slots, 1, &mut cur, &mut out);
    out
}

/// Enumerated decode space of one node.
#[derive(Debug, Clone)]
pub struct NodeSpace {
    tuples: Vec<Vec<Vec<u64>>>,
    dram: usize,
    spatial: [bool; 7],
}

impl NodeSpace {
    pub fn new(layer: &LayerDims, cfg: &AcceleratorConfig) -> Self {
        let dram = cfg.dram();
        let spatial = Dim::ALL.map(|d| cfg.is_spatial(d));
        let tuples = Dim::ALL.iter().map(|&d| dim_tuples(layer.get(d), dram + spatial[d.index()] as usize)).collect();
        Self { tuples, dram, spatial }
    }

    pub fn size(&self) -> u128 {
        self.tuples.iter().map(|t| t.len() as u128).product()
    }

    /// Mapping number `code` (mixed radix over the per-dimension tuples).
    pub fn mapping(&self, id: &str, dims: &LayerDims, mut code: u64) -> NodeMapping {
        let mut m = NodeMapping::untiled(id, &LayerDims::ONES, self.dram + 1);
        for d in Dim::ALL {
            let list = &self.tuples[d.index()];
            let t = &list[(code % list.len() as u64) as usize];
            code /= list.len() as u64;
            for lvl in 0..self.dram {
                m.temporal[lvl].set(d, t[lvl]);
            }
            if self.spatial[d.index()] {
                m.spatial.set(d, t[self.dram]);
            }
            let inner = m.inner(d) as u64;
            m.temporal[self.dram].set(d, dims.get(d).div_ceil(inner));
        }
        m
    }
}

/// Per-candidate data for one node.
#[derive(Debug, Clone, Copy)]
struct Cand {
    code: u64,
    /// Energy and latency per boundary variant `fused_in | fused_out << 1`.
    e: [f64; 4],
    l: [f64; 4],
    fp: [u64; MAX_LEVELS],
    out_key: [u64; 3],
    in_key: [u64; 3],
}

fn variant(fused_in: bool, fused_out: bool) -> usize {
    fused_in as usize | (fused_out as usize) << 1
}

fn enumerate(layer: &LayerNode, cfg: &AcceleratorConfig, variants: &[usize], levels: &[usize]) -> Vec<Cand> {
    let space = NodeSpace::new(&layer.dims, cfg);
    let sl = cfg.spatial_level();
    let ops = layer.dims.ops() as f64;
    let (lo, li) = (cfg.outer_level(Role::O), cfg.outer_level(Role::I));
    let mut out = Vec::new();
    'cand: for code in 0..space.size() as u64 {
        let m = space.mapping(&layer.id, &layer.dims, code);
        let used: u128 = m.spatial.to_array().iter().map(|&x| x as u128).product();
        if used > cfg.pe_count() as u128 {
            continue;
        }
        let mut fp = [0u64; MAX_LEVELS];
        for (slot, &lvl) in levels.iter().enumerate() {
            let words: u128 = cfg
                .capacity_roles(lvl)
                .map(|r| tensor_dims(r).iter().map(|&d| m.extent_at(d, lvl, sl)).product::<u128>())
                .sum();
            if words > cfg.capacity(lvl).expect("bounded") as u128 {
                continue 'cand;
            }
            fp[slot] = words as u64;
        }
        let f = m.factors();
        let base = node_traffic(&Plain, &layer.dims, &f, cfg);
        let mut e = [f64::NAN; 4];
        let mut l = [f64::NAN; 4];
        for &v in variants {
            let mut t = base.clone();
            if v & 1 != 0 {
                apply_consumer_boundary(&mut t, 1.0, cfg);
            }
            if v & 2 != 0 {
                apply_producer_boundary(&mut t, 1.0, cfg);
            }
            e[v] = energy(&Plain, &t, ops, cfg);
            l[v] = latency(&Plain, &t, &f, ops, cfg);
        }
        let out_key = [Dim::P, Dim::Q, Dim::K].map(|d| m.extent_at(d, lo, sl) as u64);
        let in_key = [Dim::P, Dim::Q, Dim::C].map(|d| m.extent_at(d, li, sl) as u64);
        out.push(Cand { code, e, l, fp, out_key, in_key });
    }
    out
}

/// Partial solution: accumulated cost and the choices that produced it.
#[derive(Debug, Clone)]
struct State {
    e: f64,
    l: f64,
    fp: [u64; MAX_LEVELS],
    codes: Vec<u64>,
}

fn dominates(a: &State, b: &State, nfp: usize) -> bool {
    a.e <= b.e && a.l <= b.l && a.fp[..nfp].iter().zip(&b.fp[..nfp]).all(|(x, y)| x <= y)
}

/// Non-dominated subset over energy, latency and the first `nfp` footprints.
fn pareto(mut states: Vec<State>, nfp: usize) -> Vec<State> {
    states.sort_by(|a, b| a.e.total_cmp(&b.e).then(a.l.total_cmp(&b.l)));
    if nfp == 0 {
        let mut kept: Vec<State> = Vec::new();
        for s in states {
            if kept.last().is_none_or(|k| s.l < k.l) {
                kept.push(s);
            }
        }
        return kept;
    }
    let mut kept: Vec<State> = Vec::new();
    for s in states {
        if !kept.iter().any(|k| dominates(k, &s, nfp)) {
            kept.push(s);
        }
    }
    kept
}

/// Pareto front of one fusion group (a path of fused nodes).
fn group_front(group: &[usize], cands: &[Vec<Cand>], caps: &[u64], nfp: usize) -> Vec<State> {
    let k = group.len();
    let var = |pos: usize| variant(pos > 0, pos + 1 < k);
    let fits = |fp: &[u64; MAX_LEVELS]| fp[..nfp].iter().zip(caps).all(|(a, c)| a <= c);
    // States keyed by the output tile shape of the last node placed.
    let mut frontier: BTreeMap<[u64; 3], Vec<State>> = BTreeMap::new();
    for c in &cands[group[0]] {
        let v = var(0);
        let s = State { e: c.e[v], l: c.l[v], fp: c.fp, codes: vec![c.code] };
        let key = if k > 1 { c.out_key } else { [0; 3] };
        frontier.entry(key).or_default().push(s);
    }
    let keep_fp = if k > 1 { nfp } else { 0 };
    for states in frontier.values_mut() {
        *states = pareto(core::mem::take(states), keep_fp);
    }
    for pos in 1..k {
        let v = var(pos);
        let last = pos + 1 == k;
        let mut next: BTreeMap<[u64; 3], Vec<State>> = BTreeMap::new();
        for c in &cands[group[pos]] {
            let Some(prev) = frontier.get(&c.in_key) else { continue };
            for p in prev {
                let mut fp = p.fp;
                for i in 0..nfp {
                    fp[i] += c.fp[i];
                }
                if !fits(&fp) {
                    continue;
                }
                let mut codes = p.codes.clone();
                codes.push(c.code);
                let key = if last { [0; 3] } else { c.out_key };
                next.entry(key).or_default().push(State { e: p.e + c.e[v], l: p.l + c.l[v], fp, codes });
            }
        }
        let keep_fp = if last { 0 } else { nfp };
        for states in next.values_mut() {
            *states = pareto(core::mem::take(states), keep_fp);
        }
        frontier = next;
    }
    frontier.into_values().next().unwrap_or_default()
}

/// Result of [`exhaustive_best`].
#[derive(Debug, Clone)]
pub struct ExhaustiveResult {
    pub strategy: DeploymentStrategy,
    pub edp: f64,
    /// Per-node candidates enumerated, summed over nodes.
    pub candidates: u128,
    /// Size of the joint strategy space the result is optimal over.
    pub joint_size: u128,
}

/// Total per-node candidates and joint space size of a graph.
pub fn space_size(graph: &WorkloadGraph, cfg: &AcceleratorConfig) -> (u128, u128) {
    let sizes: Vec<u128> = graph.nodes().iter().map(|n| NodeSpace::new(&n.dims, cfg).size()).collect();
    let fusion = 1u128 << graph.eligible_edges().len().min(100);
    (sizes.iter().sum(), sizes.iter().fold(fusion, |a, &b| a.saturating_mul(b)))
}

/// Minimum exact EDP over every decodable, feasible strategy, including every
/// fusion assignment of the eligible edges.
pub fn exhaustive_best(graph: &WorkloadGraph, cfg: &AcceleratorConfig, limit: u64) -> Result<ExhaustiveResult, EvalError> {
    assert!(cfg.num_levels() <= MAX_LEVELS, "too many memory levels");
    let (candidates, joint_size) = space_size(graph, cfg);
    let eligible = graph.eligible_edges();
    if candidates > limit as u128 || eligible.len() > 20 {
        return Err(EvalError::SpaceTooLarge { size: candidates.max(joint_size), limit });
    }
    let levels: Vec<usize> = cfg.bounded_levels().filter(|&l| cfg.capacity_roles(l).next().is_some()).collect();
    let caps: Vec<u64> = levels.iter().map(|&l| cfg.capacity(l).expect("bounded")).collect();
    let nfp = levels.len();

    let mut has_in = vec![false; graph.len()];
    let mut has_out = vec![false; graph.len()];
    for e in &eligible {
        has_out[e.producer] = true;
        has_in[e.consumer] = true;
    }
    let cands: Vec<Vec<Cand>> = graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mut vs = Vec::new();
            for fi in [false, true] {
                for fo in [false, true] {
                    if (!fi || has_in[i]) && (!fo || has_out[i]) {
                        vs.push(variant(fi, fo));
                    }
                }
            }
            enumerate(n, cfg, &vs, &levels)
        })
        .collect();

    let mut cache: BTreeMap<Vec<usize>, Vec<State>> = BTreeMap::new();
    let mut best: Option<(f64, Vec<bool>, Vec<Vec<usize>>, Vec<Vec<u64>>)> = None;
    for mask in 0u64..(1u64 << eligible.len()) {
        let fused: Vec<bool> = (0..eligible.len()).map(|i| mask >> i & 1 == 1).collect();
        let groups = FusionGroups::from_decisions(graph, &fused).groups;
        // Combine group fronts; each combined state keeps one code list per group.
        let mut acc: Vec<(f64, f64, Vec<usize>)> = vec![(0.0, 0.0, Vec::new())];
        let mut feasible = true;
        for g in &groups {
            let front = cache.entry(g.clone()).or_insert_with(|| group_front(g, &cands, &caps, nfp));
            if front.is_empty() {
                feasible = false;
                break;
            }
            let mut merged: Vec<State> = Vec::with_capacity(acc.len() * front.len());
            for (ai, a) in acc.iter().enumerate() {
                for (fi, f) in front.iter().enumerate() {
                    merged.push(State { e: a.0 + f.e, l: a.1 + f.l, fp: [0; MAX_LEVELS], codes: vec![ai as u64, fi as u64] });
                }
            }
            let merged = pareto(merged, 0);
            acc = merged
                .into_iter()
                .map(|s| {
                    let mut picks = acc[s.codes[0] as usize].2.clone();
                    picks.push(s.codes[1] as usize);
                    (s.e, s.l, picks)
                })
                .collect();
        }
        if !feasible {
            continue;
        }
        for (e, l, picks) in acc {
            let edp = e * l;
            if best.as_ref().is_none_or(|b| edp < b.0) {
                let codes = groups.iter().zip(&picks).map(|(g, &p)| cache[g][p].codes.clone()).collect();
                best = Some((edp, fused.clone(), groups.clone(), codes));
            }
        }
    }
    let (_, fused, groups, codes) = best.ok_or(EvalError::NoFeasibleStrategy)?;
    let mut chosen = vec![0u64; graph.len()];
    for (g, cs) in groups.iter().zip(&codes) {
        for (&v, &c) in g.iter().zip(cs) {
            chosen[v] = c;
        }
    }
    let nodes = graph
        .nodes()
        .iter()
        .zip(&chosen)
        .map(|(n, &c)| NodeSpace::new(&n.dims, cfg).mapping(&n.id, &n.dims, c))
        .collect();
    let strategy = DeploymentStrategy::new(graph, cfg, nodes, &fused, &[]);
    debug_assert!(strategy.is_feasible(), "{:?}", strategy.validity);
    let edp = exact_cost(&strategy, graph, cfg).edp;
    Ok(ExhaustiveResult { strategy, edp, candidates, joint_size })
}
