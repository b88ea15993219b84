//! Element-level access counter.
//!
//! Walks every MAC of a tiled loop nest, works out which tensor elements each
//! level must hold, and counts distinct `(tile visit, element)` pairs. A tile
//! visit of tensor `T` at level `ℓ` is identified by the temporal loop indices
//! of `dims(T)` above `ℓ`. Uses index arithmetic only.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::{tensor_dims, AcceleratorConfig, Dim, LayerNode, Role, WorkloadGraph};
use crate::cost::TrafficKind;
use crate::error::EvalError;
use crate::optimizer::{DeploymentStrategy, NodeMapping};

/// Refuse layers with more MACs than this.
pub const MAC_LIMIT: u64 = 1_000_000_000;

/// Exact integer access counts per `(level, role, kind)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleCounts {
    pub macs: u64,
    counts: Vec<[[u64; 4]; 3]>,
}

impl OracleCounts {
    fn new(levels: usize) -> Self {
        Self { macs: 0, counts: vec![[[0; 4]; 3]; levels] }
    }

    pub fn num_levels(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, level: usize, role: Role, kind: TrafficKind) -> u64 {
        self.counts[level][role.index()][kind.index()]
    }

    fn add(&mut self, level: usize, role: Role, kind: TrafficKind, n: u64) {
        self.counts[level][role.index()][kind.index()] += n;
    }

    fn take(&mut self, level: usize, role: Role, kind: TrafficKind) -> u64 {
        core::mem::take(&mut self.counts[level][role.index()][kind.index()])
    }
}

/// Whether the node's input arrives from, or its output goes to, a fused
/// neighbour instead of DRAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Boundary {
    pub fused_in: bool,
    pub fused_out: bool,
}

/// Set of distinct `u64` ids below a known bound.
enum Distinct {
    Bits(Vec<u64>),
    List(Vec<u64>),
}

impl Distinct {
    fn new(bound: u128) -> Self {
        if bound <= 1 << 28 {
            Distinct::Bits(vec![0; (bound as usize).div_ceil(64)])
        } else {
            Distinct::List(Vec::new())
        }
    }

    fn insert(&mut self, id: u64) {
        match self {
            Distinct::Bits(b) => b[(id / 64) as usize] |= 1 << (id % 64),
            Distinct::List(l) => l.push(id),
        }
    }

    fn count(self) -> u64 {
        match self {
            Distinct::Bits(b) => b.iter().map(|w| w.count_ones() as u64).sum(),
            Distinct::List(mut l) => {
                l.sort_unstable();
                l.dedup();
                l.len() as u64
            }
        }
    }
}

/// Loop digits of one dimension, outermost first: temporal indices from DRAM
/// down, with the spatial digit slotted in at the spatial level.
struct DimLoops {
    /// `(radix, level)`; `level = None` marks the spatial digit.
    digits: Vec<(u64, Option<usize>)>,
}

impl DimLoops {
    fn new(m: &NodeMapping, d: Dim, spatial_level: usize) -> Self {
        let dram = m.temporal.len() - 1;
        let mut digits = Vec::with_capacity(dram + 2);
        for lvl in (0..=dram).rev() {
            digits.push((m.temporal[lvl].get(d), Some(lvl)));
            if lvl == spatial_level {
                digits.push((m.spatial.get(d), None));
            }
        }
        Self { digits }
    }
}

/// A visit counter: distinct `(outer indices of dims(T) above level, element)`.
struct TileCounter {
    role: Role,
    level: usize,
    set: Distinct,
    /// For each dim of the role: radices of temporal digits above `level`.
    key_radix: u64,
}

/// Count the traffic of one layer under `mapping`.
pub fn loopnest_count(
    mapping: &NodeMapping,
    layer: &LayerNode,
    cfg: &AcceleratorConfig,
    boundary: Boundary,
) -> Result<OracleCounts, EvalError> {
    let dram = cfg.dram();
    let sl = cfg.spatial_level();
    let macs = layer.dims.ops();
    if macs > MAC_LIMIT {
        return Err(EvalError::OracleTooLarge { node: layer.id.clone(), macs: macs as u128, limit: MAC_LIMIT });
    }
    assert_eq!(mapping.temporal.len(), dram + 1, "mapping levels must match the accelerator");
    for d in Dim::ALL {
        let product = mapping.inner(d) * mapping.temporal[dram].get(d) as u128;
        if product != layer.dims.get(d) as u128 {
            return Err(EvalError::InexactTiling {
                node: layer.id.clone(),
                dim: d,
                product: product.min(u64::MAX as u128) as u64,
                extent: layer.dims.get(d),
            });
        }
    }
    let loops: Vec<DimLoops> = Dim::ALL.iter().map(|&d| DimLoops::new(mapping, d, sl)).collect();

    // Temporal digits of all dims form the outer odometer, spatial digits the
    // inner one. Every combination is one MAC.
    let temporal: Vec<(usize, usize)> = (0..7)
        .flat_map(|di| loops[di].digits.iter().enumerate().filter(|(_, x)| x.1.is_some()).map(move |(k, _)| (di, k)))
        .collect();
    let spatial: Vec<usize> = (0..7).collect();
    let spatial_pos: Vec<usize> =
        loops.iter().map(|l| l.digits.iter().position(|x| x.1.is_none()).expect("spatial digit")).collect();

    let mut idx: Vec<Vec<u64>> = loops.iter().map(|l| vec![0; l.digits.len()]).collect();
    let coord = |idx: &Vec<Vec<u64>>, di: usize| -> u64 {
        loops[di].digits.iter().zip(&idx[di]).fold(0, |acc, (&(r, _), &i)| acc * r + i)
    };
    let element = |x: &[u64; 7], role: Role| -> u64 {
        tensor_dims(role).iter().fold(0, |acc, &d| acc * layer.dims.get(d) + x[d.index()])
    };
    // Mixed-radix id of the temporal digits of dims(role) strictly above `level`.
    let key = |idx: &Vec<Vec<u64>>, role: Role, level: usize| -> u64 {
        let mut acc = 0;
        for &d in tensor_dims(role) {
            for (k, &(r, l)) in loops[d.index()].digits.iter().enumerate() {
                if matches!(l, Some(l) if l > level) {
                    acc = acc * r + idx[d.index()][k];
                }
            }
        }
        acc
    };

    let mut counters = Vec::new();
    for role in [Role::I, Role::W] {
        for &level in cfg.resident_levels(role) {
            counters.push((role, level));
        }
    }
    counters.extend(cfg.resident_levels(Role::O).iter().map(|&l| (Role::O, l)));
    let mut tiles: Vec<TileCounter> = counters
        .into_iter()
        .map(|(role, level)| {
            let key_radix: u64 = tensor_dims(role)
                .iter()
                .flat_map(|&d| loops[d.index()].digits.iter().filter(move |x| matches!(x.1, Some(l) if l > level)))
                .map(|x| x.0)
                .product();
            let bound = key_radix as u128 * layer.dims.tensor_size(role) as u128;
            TileCounter { role, level, set: Distinct::new(bound), key_radix }
        })
        .collect();

    let mut out = OracleCounts::new(dram + 1);
    out.macs = macs;
    let mut scratch: [Vec<u64>; 3] = Default::default();
    loop {
        // One temporal point: sweep the PE array.
        for s in &mut scratch {
            s.clear();
        }
        let keys: Vec<u64> = tiles.iter().map(|t| key(&idx, t.role, t.level)).collect();
        loop {
            let x: [u64; 7] = core::array::from_fn(|di| coord(&idx, di));
            for role in Role::ALL {
                scratch[role.index()].push(element(&x, role));
            }
            for (t, &k) in tiles.iter_mut().zip(&keys) {
                debug_assert!(k < t.key_radix.max(1));
                let e = element(&x, t.role);
                t.set.insert(k * layer.dims.tensor_size(t.role) + e);
            }
            out.macs -= 1;
            if !advance(&mut idx, &loops, spatial.iter().map(|&di| (di, spatial_pos[di]))) {
                break;
            }
        }
        for role in Role::ALL {
            let s = &mut scratch[role.index()];
            s.sort_unstable();
            s.dedup();
        }
        let i0 = cfg.inner_level(Role::I);
        let w0 = cfg.inner_level(Role::W);
        let o0 = cfg.inner_level(Role::O);
        out.add(i0, Role::I, TrafficKind::Read, scratch[Role::I.index()].len() as u64);
        out.add(w0, Role::W, TrafficKind::Read, scratch[Role::W.index()].len() as u64);
        out.add(o0, Role::O, TrafficKind::WriteBack, scratch[Role::O.index()].len() as u64);
        if !advance(&mut idx, &loops, temporal.iter().rev().copied()) {
            break;
        }
    }
    debug_assert_eq!(out.macs, 0);
    out.macs = macs;

    for t in tiles {
        let n = t.set.count();
        let chain = cfg.resident_levels(t.role);
        let pos = chain.iter().position(|&l| l == t.level).expect("resident");
        let parent = chain.get(pos + 1).copied().unwrap_or(dram);
        match t.role {
            Role::I | Role::W => {
                out.add(t.level, t.role, TrafficKind::Fill, n);
                out.add(parent, t.role, TrafficKind::Read, n);
            }
            Role::O => out.add(parent, Role::O, TrafficKind::WriteBack, n),
        }
    }

    if boundary.fused_out {
        let n = out.take(dram, Role::O, TrafficKind::WriteBack);
        out.add(cfg.outer_level(Role::O), Role::O, TrafficKind::Copy, n);
        out.add(cfg.outer_level(Role::I), Role::O, TrafficKind::Copy, n);
    }
    if boundary.fused_in {
        out.take(cfg.outer_level(Role::I), Role::I, TrafficKind::Fill);
        out.take(dram, Role::I, TrafficKind::Read);
    }
    Ok(out)
}

/// Increment an odometer over the given `(dim, digit)` positions, last one
/// fastest. Returns `false` after wrapping around completely.
fn advance(idx: &mut [Vec<u64>], loops: &[DimLoops], order: impl DoubleEndedIterator<Item = (usize, usize)>) -> bool {
    for (di, k) in order.rev() {
        let radix = loops[di].digits[k].0;
        idx[di][k] += 1;
        if idx[di][k] < radix {
            return true;
        }
        idx[di][k] = 0;
    }
    false
}

/// Oracle counts for every node of a strategy, fusion boundaries included.
pub fn strategy_counts(
    strategy: &DeploymentStrategy,
    graph: &WorkloadGraph,
    cfg: &AcceleratorConfig,
) -> Result<Vec<OracleCounts>, EvalError> {
    let fused = strategy.fused_bits(graph);
    let mut bounds = vec![Boundary::default(); graph.len()];
    for (e, &f) in graph.eligible_edges().iter().zip(&fused) {
        if f {
            bounds[e.producer].fused_out = true;
            bounds[e.consumer].fused_in = true;
        }
    }
    strategy.nodes.iter().zip(graph.nodes()).zip(bounds).map(|((m, layer), b)| loopnest_count(m, layer, cfg, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{gemmini_large, LayerDims};

    #[test]
    fn identity_tiling_fills_each_tensor_once() {
        let cfg = gemmini_large();
        let layer = LayerNode::conv("x", [2, 3, 4, 2, 2, 3, 1]);
        let m = NodeMapping::untiled("x", &layer.dims, 4);
        let c = loopnest_count(&m, &layer, &cfg, Boundary::default()).unwrap();
        assert_eq!(c.macs, layer.dims.ops());
        for role in [Role::I, Role::W] {
            assert_eq!(c.get(2, role, TrafficKind::Fill), layer.dims.tensor_size(role));
            assert_eq!(c.get(3, role, TrafficKind::Read), layer.dims.tensor_size(role));
            assert_eq!(c.get(0, role, TrafficKind::Read), layer.dims.ops());
        }
        assert_eq!(c.get(3, Role::O, TrafficKind::WriteBack), layer.dims.tensor_size(Role::O));
    }

    #[test]
    fn mac_count() {
        let cfg = gemmini_large();
        let layer = LayerNode::conv("x", [2, 3, 4, 5, 1, 1, 1]);
        let m = NodeMapping::untiled("x", &layer.dims, 4);
        assert_eq!(loopnest_count(&m, &layer, &cfg, Boundary::default()).unwrap().macs, 120);
    }

    #[test]
    fn spatial_broadcast_and_reduction() {
        let cfg = gemmini_large();
        let layer = LayerNode::conv("x", [1, 4, 4, 1, 1, 1, 1]);
        let mut m = NodeMapping::untiled("x", &LayerDims::ONES, 4);
        m.spatial.k = 4;
        m.spatial.c = 4;
        let c = loopnest_count(&m, &layer, &cfg, Boundary::default()).unwrap();
        // One temporal point: 4 distinct inputs, 16 weights, 4 outputs.
        assert_eq!(c.get(0, Role::I, TrafficKind::Read), 4);
        assert_eq!(c.get(0, Role::W, TrafficKind::Read), 16);
        assert_eq!(c.get(1, Role::O, TrafficKind::WriteBack), 4);
    }

    #[test]
    fn guards() {
        let cfg = gemmini_large();
        let layer = LayerNode::conv("x", [1, 6, 1, 1, 1, 1, 1]);
        let mut m = NodeMapping::untiled("x", &layer.dims, 4);
        m.temporal[3].k = 2;
        m.temporal[0].k = 4;
        assert!(matches!(
            loopnest_count(&m, &layer, &cfg, Boundary::default()),
            Err(EvalError::InexactTiling { product: 8, extent: 6, .. })
        ));
        let huge = LayerNode::conv("h", [64, 64, 64, 64, 64, 1, 1]);
        let m = NodeMapping::untiled("h", &huge.dims, 4);
        assert!(matches!(loopnest_count(&m, &huge, &cfg, Boundary::default()), Err(EvalError::OracleTooLarge { .. })));
    }

    #[test]
    fn fused_boundary_relabels() {
        let cfg = gemmini_large();
        let layer = LayerNode::conv("x", [1, 2, 2, 2, 2, 1, 1]);
        let m = NodeMapping::untiled("x", &layer.dims, 4);
        let c = loopnest_count(&m, &layer, &cfg, Boundary { fused_in: true, fused_out: true }).unwrap();
        assert_eq!(c.get(3, Role::O, TrafficKind::WriteBack), 0);
        assert_eq!(c.get(1, Role::O, TrafficKind::Copy), 8);
        assert_eq!(c.get(2, Role::O, TrafficKind::Copy), 8);
        assert_eq!(c.get(2, Role::I, TrafficKind::Fill), 0);
        assert_eq!(c.get(3, Role::I, TrafficKind::Read), 0);
        assert_eq!(c.get(3, Role::W, TrafficKind::Read), 4);
    }
}
