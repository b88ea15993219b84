//! Workload graphs and accelerator descriptions.
//!
//! Everything downstream (cost model, penalties, optimizer, oracles) speaks the
//! vocabulary defined here: the seven problem dimensions, the three tensor roles,
//! layer nodes, and the memory hierarchy of the target array.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// One of the seven loop dimensions of a CONV/GEMM layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dim {
    N,
    K,
    C,
    P,
    Q,
    R,
    S,
}

impl Dim {
    pub const ALL: [Dim; 7] = [Dim::N, Dim::K, Dim::C, Dim::P, Dim::Q, Dim::R, Dim::S];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn name(self) -> &'static str {
        match self {
            Dim::N => "n",
            Dim::K => "k",
            Dim::C => "c",
            Dim::P => "p",
            Dim::Q => "q",
            Dim::R => "r",
            Dim::S => "s",
        }
    }

    /// Dimensions summed over when forming an output element.
    pub const fn is_reduction(self) -> bool {
        matches!(self, Dim::C | Dim::R | Dim::S)
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tensor role: input activations, weights, or outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    I,
    W,
    O,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::I, Role::W, Role::O];

    pub const fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::I => "I",
            Role::W => "W",
            Role::O => "O",
        })
    }
}

/// Problem dimensions that index a tensor of the given role.
///
/// Inputs are indexed by `{N, C, P, Q}`: the sliding-window halo contributed by
/// `R` and `S` is not modeled, so every tile footprint is a pure product.
pub const fn tensor_dims(role: Role) -> &'static [Dim] {
    match role {
        Role::I => &[Dim::N, Dim::C, Dim::P, Dim::Q],
        Role::W => &[Dim::K, Dim::C, Dim::R, Dim::S],
        Role::O => &[Dim::N, Dim::K, Dim::P, Dim::Q],
    }
}

pub fn indexes(role: Role, dim: Dim) -> bool {
    tensor_dims(role).contains(&dim)
}

/// Extents of the seven problem dimensions. Also used for per-dimension
/// tiling factors, which share the same shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerDims {
    pub n: u64,
    pub k: u64,
    pub c: u64,
    pub p: u64,
    pub q: u64,
    pub r: u64,
    pub s: u64,
}

/// Per-dimension integer tiling factors.
pub type DimFactors = LayerDims;

impl LayerDims {
    pub const ONES: LayerDims = LayerDims { n: 1, k: 1, c: 1, p: 1, q: 1, r: 1, s: 1 };

    pub fn from_array(a: [u64; 7]) -> Self {
        LayerDims { n: a[0], k: a[1], c: a[2], p: a[3], q: a[4], r: a[5], s: a[6] }
    }

    pub fn to_array(self) -> [u64; 7] {
        [self.n, self.k, self.c, self.p, self.q, self.r, self.s]
    }

    pub fn get(&self, d: Dim) -> u64 {
        self.to_array()[d.index()]
    }

    pub fn set(&mut self, d: Dim, v: u64) {
        let mut a = self.to_array();
        a[d.index()] = v;
        *self = Self::from_array(a);
    }

    /// Total multiply-accumulate count `n·k·c·p·q·r·s`.
    pub fn ops(&self) -> u64 {
        self.to_array().iter().product()
    }

    /// Number of elements of the tensor with the given role.
    pub fn tensor_size(&self, role: Role) -> u64 {
        tensor_dims(role).iter().map(|&d| self.get(d)).product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "CONV")]
    Conv,
    #[serde(rename = "GEMM")]
    Gemm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: String,
    pub kind: LayerKind,
    pub dims: LayerDims,
}

/// Serialized form of a workload: nodes plus `[producer, consumer]` id pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub nodes: Vec<LayerNode>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
}

/// A producer/consumer dependency between two nodes, by node index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub producer: usize,
    pub consumer: usize,
}

/// Validated DAG of layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadGraph {
    nodes: Vec<LayerNode>,
    edges: Vec<Edge>,
    order: Vec<usize>,
}

impl WorkloadGraph {
    pub fn from_spec(spec: WorkloadSpec) -> Result<Self, ConfigError> {
        let WorkloadSpec { nodes, edges: named } = spec;
        if nodes.is_empty() {
            return Err(ConfigError::EmptyWorkload);
        }
        let mut index = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(ConfigError::DuplicateNode(node.id.clone()));
            }
            for d in Dim::ALL {
                if node.dims.get(d) == 0 {
                    return Err(ConfigError::NonPositiveExtent { node: node.id.clone(), dim: d });
                }
            }
            if node.kind == LayerKind::Gemm {
                let d = node.dims;
                if d.p != 1 || d.q != 1 || d.r != 1 || d.s != 1 {
                    return Err(ConfigError::GemmSpatialDims(node.id.clone()));
                }
            }
        }

        let mut edges = Vec::with_capacity(named.len());
        for (src, dst) in &named {
            let lookup = |id: &String| {
                index.get(id).copied().ok_or_else(|| ConfigError::DanglingEdge {
                    producer: src.clone(),
                    consumer: dst.clone(),
                    missing: id.clone(),
                })
            };
            let edge = Edge { producer: lookup(src)?, consumer: lookup(dst)? };
            if edges.contains(&edge) {
                return Err(ConfigError::DuplicateEdge { producer: src.clone(), consumer: dst.clone() });
            }
            edges.push(edge);
        }

        let order = topological_order(nodes.len(), &edges)
            .map_err(|i| ConfigError::CycleDetected { node: nodes[i].id.clone() })?;
        Ok(WorkloadGraph { nodes, edges, order })
    }

    pub fn to_spec(&self) -> WorkloadSpec {
        WorkloadSpec {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| (self.nodes[e.producer].id.clone(), self.nodes[e.consumer].id.clone()))
                .collect(),
        }
    }

    /// Convenience constructor for a graph with no edges.
    pub fn single(node: LayerNode) -> Result<Self, ConfigError> {
        Self::from_spec(WorkloadSpec { nodes: vec![node], edges: Vec::new() })
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &LayerNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Node indices in topological order (input order breaks ties).
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Edges that may carry a fusion variable: the producer has exactly one
    /// consumer and the consumer exactly one producer. All other edges are
    /// permanently unfused.
    pub fn eligible_edges(&self) -> Vec<Edge> {
        let mut out_deg = vec![0usize; self.nodes.len()];
        let mut in_deg = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            out_deg[e.producer] += 1;
            in_deg[e.consumer] += 1;
        }
        let mut eligible: Vec<Edge> = self
            .edges
            .iter()
            .copied()
            .filter(|e| out_deg[e.producer] == 1 && in_deg[e.consumer] == 1)
            .collect();
        let pos = self.order_positions();
        eligible.sort_by_key(|e| pos[e.producer]);
        eligible
    }

    /// Maximal paths formed by eligible edges, in topological order. Nodes not
    /// touched by any eligible edge appear as single-node chains.
    pub fn fusion_chains(&self) -> Vec<Vec<usize>> {
        let eligible = self.eligible_edges();
        let mut next = vec![None; self.nodes.len()];
        let mut has_prev = vec![false; self.nodes.len()];
        for e in &eligible {
            next[e.producer] = Some(e.consumer);
            has_prev[e.consumer] = true;
        }
        let mut chains = Vec::new();
        for &start in &self.order {
            if has_prev[start] {
                continue;
            }
            let mut chain = vec![start];
            let mut cur = start;
            while let Some(n) = next[cur] {
                chain.push(n);
                cur = n;
            }
            chains.push(chain);
        }
        chains
    }

    fn order_positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.nodes.len()];
        for (p, &i) in self.order.iter().enumerate() {
            pos[i] = p;
        }
        pos
    }
}

/// Kahn's algorithm. On failure returns a node that sits on a cycle.
fn topological_order(n: usize, edges: &[Edge]) -> Result<Vec<usize>, usize> {
    let mut indeg = vec![0usize; n];
    for e in edges {
        indeg[e.consumer] += 1;
    }
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let Some(next) = (0..n).find(|&i| !done[i] && indeg[i] == 0) else {
            let stuck = (0..n).find(|&i| !done[i]).unwrap_or(0);
            return Err(stuck);
        };
        done[next] = true;
        order.push(next);
        for e in edges.iter().filter(|e| e.producer == next) {
            indeg[e.consumer] -= 1;
        }
    }
    Ok(order)
}

/// One level of the memory hierarchy. Level 0 is the PE register file, the
/// highest index is DRAM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryLevel {
    pub index: usize,
    /// `None` means unbounded (only meaningful for DRAM).
    #[serde(default)]
    pub capacity_words: Option<u64>,
    pub bandwidth_words_per_cycle: f64,
    pub epa_pj_per_word: f64,
    pub resident_roles: Vec<Role>,
}

impl MemoryLevel {
    pub fn holds(&self, role: Role) -> bool {
        self.resident_roles.contains(&role)
    }
}

fn default_spatial_dims() -> Vec<Dim> {
    vec![Dim::K, Dim::C]
}

/// Serialized form of an accelerator; see [`AcceleratorConfig::from_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorSpec {
    pub pe_count: u64,
    pub energy_per_op_pj: f64,
    pub spatial_level: usize,
    pub levels: Vec<MemoryLevel>,
    /// Dimensions that may be unrolled across the PE array. Defaults to the
    /// weight-stationary pair `K, C`.
    #[serde(default = "default_spatial_dims")]
    pub spatial_dims: Vec<Dim>,
    /// Also charge output tiles against the capacity of the levels that hold
    /// outputs. Off by default.
    #[serde(default)]
    pub count_output_residency: bool,
}

/// Validated accelerator description.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceleratorConfig {
    spec: AcceleratorSpec,
    /// Per role, the non-DRAM levels holding it, innermost first.
    chains: [Vec<usize>; 3],
}

impl AcceleratorConfig {
    pub fn from_spec(mut spec: AcceleratorSpec) -> Result<Self, ConfigError> {
        spec.levels.sort_by_key(|l| l.index);
        if spec.levels.len() < 2 {
            return Err(ConfigError::MissingLevel(spec.levels.len()));
        }
        for (i, l) in spec.levels.iter().enumerate() {
            if l.index != i {
                return Err(ConfigError::MissingLevel(i));
            }
            if !(l.bandwidth_words_per_cycle.is_finite() && l.bandwidth_words_per_cycle > 0.0) {
                return Err(ConfigError::NonPositiveLevelField { level: i, field: "bandwidth_words_per_cycle" });
            }
            if !(l.epa_pj_per_word.is_finite() && l.epa_pj_per_word > 0.0) {
                return Err(ConfigError::NonPositiveLevelField { level: i, field: "epa_pj_per_word" });
            }
            if l.capacity_words == Some(0) {
                return Err(ConfigError::NonPositiveLevelField { level: i, field: "capacity_words" });
            }
        }
        let dram = spec.levels.len() - 1;
        for w in spec.levels.windows(2) {
            let ordered = match (w[0].capacity_words, w[1].capacity_words) {
                (None, _) => false,
                (Some(_), None) => true,
                (Some(a), Some(b)) => a <= b,
            };
            if !ordered {
                return Err(ConfigError::CapacityOrdering { level: w[0].index, next: w[1].index });
            }
        }
        if spec.pe_count == 0 {
            return Err(ConfigError::NonPositivePeCount);
        }
        if !(spec.energy_per_op_pj.is_finite() && spec.energy_per_op_pj > 0.0) {
            return Err(ConfigError::NonPositiveEnergyPerOp);
        }
        if spec.spatial_level >= dram {
            return Err(ConfigError::SpatialLevel { level: spec.spatial_level, dram });
        }
        let mut chains: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for role in Role::ALL {
            chains[role.index()] = (0..dram).filter(|&i| spec.levels[i].holds(role)).collect();
            match chains[role.index()].first() {
                None => return Err(ConfigError::RoleNotResident(role)),
                Some(&lowest) if lowest < spec.spatial_level => {
                    return Err(ConfigError::ResidentBelowSpatial { role, level: lowest })
                }
                _ => {}
            }
        }
        let mut seen = [false; 7];
        for d in &spec.spatial_dims {
            if core::mem::replace(&mut seen[d.index()], true) {
                return Err(ConfigError::DuplicateSpatialDim(*d));
            }
        }
        Ok(AcceleratorConfig { spec, chains })
    }

    pub fn spec(&self) -> &AcceleratorSpec {
        &self.spec
    }

    pub fn levels(&self) -> &[MemoryLevel] {
        &self.spec.levels
    }

    pub fn level(&self, i: usize) -> &MemoryLevel {
        &self.spec.levels[i]
    }

    pub fn num_levels(&self) -> usize {
        self.spec.levels.len()
    }

    /// Index of the outermost level (DRAM).
    pub fn dram(&self) -> usize {
        self.spec.levels.len() - 1
    }

    pub fn pe_count(&self) -> u64 {
        self.spec.pe_count
    }

    pub fn energy_per_op_pj(&self) -> f64 {
        self.spec.energy_per_op_pj
    }

    pub fn spatial_level(&self) -> usize {
        self.spec.spatial_level
    }

    pub fn spatial_dims(&self) -> &[Dim] {
        &self.spec.spatial_dims
    }

    pub fn is_spatial(&self, d: Dim) -> bool {
        self.spec.spatial_dims.contains(&d)
    }

    pub fn count_output_residency(&self) -> bool {
        self.spec.count_output_residency
    }

    pub fn capacity(&self, level: usize) -> Option<u64> {
        self.spec.levels[level].capacity_words
    }

    /// Non-DRAM levels holding `role`, innermost first. Never empty.
    pub fn resident_levels(&self, role: Role) -> &[usize] {
        &self.chains[role.index()]
    }

    /// Outermost on-chip level holding `role` (the level adjacent to DRAM in
    /// that role's data path).
    pub fn outer_level(&self, role: Role) -> usize {
        *self.chains[role.index()].last().expect("validated non-empty")
    }

    /// Innermost level holding `role` (the level feeding or fed by the PEs).
    pub fn inner_level(&self, role: Role) -> usize {
        self.chains[role.index()][0]
    }

    /// Roles whose tiles are charged against the capacity of `level`.
    pub fn capacity_roles(&self, level: usize) -> impl Iterator<Item = Role> + '_ {
        let count_o = self.spec.count_output_residency;
        Role::ALL
            .into_iter()
            .filter(move |&r| (r != Role::O || count_o) && self.spec.levels[level].holds(r))
    }

    /// On-chip levels with a finite capacity.
    pub fn bounded_levels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dram()).filter(|&i| self.spec.levels[i].capacity_words.is_some())
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "gemmini-large" => Some(gemmini_large()),
            "gemmini-small" => Some(gemmini_small()),
            _ => None,
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["gemmini-large", "gemmini-small"]
    }
}

impl fmt::Display for AcceleratorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} PEs, {} levels", self.spec.pe_count, self.spec.levels.len())
    }
}

const KIB: u64 = 1024;

fn level(
    index: usize,
    capacity_words: Option<u64>,
    bw: f64,
    epa: f64,
    roles: &[Role],
) -> MemoryLevel {
    MemoryLevel {
        index,
        capacity_words,
        bandwidth_words_per_cycle: bw,
        epa_pj_per_word: epa,
        resident_roles: roles.to_vec(),
    }
}

/// Capacity in words of a buffer of `kib` KiB holding `word_bytes`-byte words.
pub fn kib_to_words(kib: u64, word_bytes: u64) -> u64 {
    kib * KIB / word_bytes
}

/// 32×32 array, 64 KiB accumulator (4-byte words), 512 KiB scratchpad
/// (1-byte words).
pub fn gemmini_large() -> AcceleratorConfig {
    let pe = 32 * 32;
    AcceleratorConfig::from_spec(AcceleratorSpec {
        pe_count: pe,
        energy_per_op_pj: 0.25,
        spatial_level: 0,
        levels: vec![
            level(0, Some(2 * pe), (2 * pe) as f64, 0.02, &[Role::I, Role::W]),
            level(1, Some(kib_to_words(64, 4)), 32.0, 1.6, &[Role::O]),
            level(2, Some(kib_to_words(512, 1)), 32.0, 3.2, &[Role::I, Role::W]),
            level(3, None, 8.0, 64.0, &[Role::I, Role::W, Role::O]),
        ],
        spatial_dims: default_spatial_dims(),
        count_output_residency: false,
    })
    .expect("preset is valid")
}

/// 16×16 array, 8 KiB accumulator and 8 KiB scratchpad.
pub fn gemmini_small() -> AcceleratorConfig {
    let pe = 16 * 16;
    AcceleratorConfig::from_spec(AcceleratorSpec {
        pe_count: pe,
        energy_per_op_pj: 0.25,
        spatial_level: 0,
        levels: vec![
            level(0, Some(2 * pe), (2 * pe) as f64, 0.02, &[Role::I, Role::W]),
            level(1, Some(kib_to_words(8, 4)), 16.0, 0.9, &[Role::O]),
            level(2, Some(kib_to_words(8, 1)), 16.0, 1.1, &[Role::I, Role::W]),
            level(3, None, 8.0, 64.0, &[Role::I, Role::W, Role::O]),
        ],
        spatial_dims: default_spatial_dims(),
        count_output_residency: false,
    })
    .expect("preset is valid")
}

impl LayerNode {
    pub fn conv(id: &str, dims: [u64; 7]) -> Self {
        LayerNode { id: id.to_string(), kind: LayerKind::Conv, dims: LayerDims::from_array(dims) }
    }

    /// GEMM `out[n][k] = Σ_c in[n][c]·w[k][c]`.
    pub fn gemm(id: &str, n: u64, k: u64, c: u64) -> Self {
        LayerNode {
            id: id.to_string(),
            kind: LayerKind::Gemm,
            dims: LayerDims { n, k, c, p: 1, q: 1, r: 1, s: 1 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(ids: &[&str], edges: &[(&str, &str)]) -> Result<WorkloadGraph, ConfigError> {
        WorkloadGraph::from_spec(WorkloadSpec {
            nodes: ids.iter().map(|id| LayerNode::conv(id, [1, 4, 4, 4, 4, 3, 3])).collect(),
            edges: edges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        })
    }

    #[test]
    fn minimal_graph() {
        let g = WorkloadGraph::single(LayerNode::gemm("fc", 1, 16, 16)).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn chain_order() {
        let g = chain(&["C", "A", "B"], &[("A", "B"), ("B", "C")]).unwrap();
        let ids: Vec<_> = g.topological_order().iter().map(|&i| g.node(i).id.as_str()).collect();
        assert_eq!(ids, ["A", "B", "C"]);
    }

    #[test]
    fn self_loop_is_cycle() {
        let err = chain(&["A"], &[("A", "A")]).unwrap_err();
        assert!(matches!(err, ConfigError::CycleDetected { ref node } if node == "A"));
        assert!(err.to_string().contains("cycle detected"));
    }

    #[test]
    fn longer_cycle_and_dangling_edge() {
        assert!(matches!(
            chain(&["A", "B", "C"], &[("A", "B"), ("B", "C"), ("C", "B")]),
            Err(ConfigError::CycleDetected { .. })
        ));
        let err = chain(&["A"], &[("A", "Z")]).unwrap_err();
        assert!(err.to_string().contains('Z'));
    }

    #[test]
    fn zero_extent_rejected() {
        let mut node = LayerNode::conv("x", [1, 4, 4, 4, 4, 3, 3]);
        node.dims.p = 0;
        let err = WorkloadGraph::single(node).unwrap_err();
        assert_eq!(err, ConfigError::NonPositiveExtent { node: "x".into(), dim: Dim::P });
    }

    #[test]
    fn gemm_must_be_flat() {
        let mut node = LayerNode::gemm("fc", 1, 8, 8);
        node.dims.r = 3;
        assert!(matches!(WorkloadGraph::single(node), Err(ConfigError::GemmSpatialDims(_))));
    }

    #[test]
    fn eligibility_skips_branches() {
        // Residual a -> c: `a` has two consumers and `c` two producers.
        let g = chain(&["a", "b", "c", "d"], &[("a", "b"), ("b", "c"), ("a", "c"), ("c", "d")]).unwrap();
        let eligible: Vec<_> = g
            .eligible_edges()
            .iter()
            .map(|e| (g.node(e.producer).id.clone(), g.node(e.consumer).id.clone()))
            .collect();
        assert_eq!(eligible, [("c".to_string(), "d".to_string())]);
        let chains = g.fusion_chains();
        assert_eq!(chains, vec![vec![0], vec![1], vec![2, 3]]);
    }

    #[test]
    fn tensor_dims_table() {
        assert_eq!(tensor_dims(Role::W), &[Dim::K, Dim::C, Dim::R, Dim::S]);
        assert_eq!(tensor_dims(Role::O), &[Dim::N, Dim::K, Dim::P, Dim::Q]);
        assert_eq!(tensor_dims(Role::I), &[Dim::N, Dim::C, Dim::P, Dim::Q]);
        for d in Dim::ALL {
            assert_eq!(indexes(Role::O, d), !d.is_reduction());
        }
    }

    #[test]
    fn presets_match_published_sizes() {
        let large = gemmini_large();
        assert_eq!(large.pe_count(), 1024);
        assert_eq!(large.num_levels(), 4);
        assert_eq!(large.capacity(1), Some(64 * 1024 / 4));
        assert_eq!(large.capacity(2), Some(512 * 1024));
        let small = gemmini_small();
        assert_eq!(small.pe_count(), 256);
        assert_eq!(small.capacity(1), Some(8 * 1024 / 4));
        assert_eq!(small.capacity(2), Some(8 * 1024));
        assert_eq!(large.resident_levels(Role::O), &[1]);
        assert_eq!(large.resident_levels(Role::W), &[0, 2]);
    }

    #[test]
    fn capacity_ordering_enforced() {
        let mut spec = gemmini_large().spec().clone();
        spec.levels[1].capacity_words = Some(10 * spec.levels[2].capacity_words.unwrap());
        assert_eq!(
            AcceleratorConfig::from_spec(spec).unwrap_err(),
            ConfigError::CapacityOrdering { level: 1, next: 2 }
        );
    }

    #[test]
    fn bad_levels_rejected() {
        let mut spec = gemmini_large().spec().clone();
        spec.levels[2].bandwidth_words_per_cycle = 0.0;
        assert!(matches!(
            AcceleratorConfig::from_spec(spec),
            Err(ConfigError::NonPositiveLevelField { level: 2, .. })
        ));
        let mut spec = gemmini_large().spec().clone();
        spec.levels.remove(1);
        assert_eq!(AcceleratorConfig::from_spec(spec).unwrap_err(), ConfigError::MissingLevel(1));
        let mut spec = gemmini_large().spec().clone();
        spec.spatial_level = 3;
        assert!(matches!(AcceleratorConfig::from_spec(spec), Err(ConfigError::SpatialLevel { .. })));
        let mut spec = gemmini_large().spec().clone();
        spec.levels[1].resident_roles.clear();
        assert_eq!(AcceleratorConfig::from_spec(spec).unwrap_err(), ConfigError::RoleNotResident(Role::O));
    }

    #[test]
    fn ops_is_product() {
        assert_eq!(LayerDims::from_array([2, 3, 4, 5, 1, 1, 1]).ops(), 120);
    }
}
