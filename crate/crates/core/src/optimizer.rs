//! Gradient search over the relaxed mapping, and the discrete artifacts it
//! produces.
//!
//! Each restart owns its parameters, tape and noise stream. After the last
//! step the parameters are decoded with noise off: every slot takes its
//! nearest divisor, the DRAM factor becomes `ceil(extent / inner)`, and an edge
//! is fused when `σ` exceeds the threshold. Restarts are ranked by exact
//! discrete EDP.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Plain, Real, Tape};
use crate::config::{AcceleratorConfig, Dim, DimFactors, LayerDims, WorkloadGraph};
use crate::cost::{graph_edp, CostBreakdown, Factors};
use crate::error::{AdError, OptimizeError};
use crate::penalty::{augmented_loss, p_align, LossSettings, p_mem, p_spatial, p_valid, FusionGroups, LambdaSchedule};
use crate::relax::{Anneal, MappingParams, Relaxation, SlotLevel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub steps: usize,
    pub restarts: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub alpha: f64,
    pub tau0: f64,
    pub tau_min: f64,
    /// Fraction of `steps` after which `τ` sits at `tau_min`.
    pub anneal_fraction: f64,
    /// Scale the Gumbel noise by `τ / tau0`, so the hard forward selection
    /// settles on the nearest divisor as `τ` falls. Off keeps unit noise.
    pub noise_anneal: bool,
    pub lambda0: f64,
    pub lambda_max: f64,
    /// Fraction of `steps` over which `λ` ramps up.
    pub lambda_ramp_fraction: f64,
    pub sigma_threshold: f64,
    /// Hold `σ` constant inside the alignment penalty.
    pub detach_align_sigma: bool,
    /// Half-width of the log-uniform perturbation of the initial split.
    pub init_jitter: f64,
    /// Also decode every this many steps and keep the best decode. 0 decodes
    /// only after the last step.
    pub decode_interval: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            restarts: 8,
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            alpha: 2.0,
            tau0: 5.0,
            tau_min: 0.05,
            anneal_fraction: 0.8,
            noise_anneal: true,
            lambda0: 1.0,
            lambda_max: 3.0,
            lambda_ramp_fraction: 0.5,
            sigma_threshold: 0.5,
            detach_align_sigma: true,
            init_jitter: 0.2,
            decode_interval: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        let unit = |x: f64| x.is_finite() && x > 0.0 && x <= 1.0;
        if self.steps == 0 {
            return Err(OptimizeError::BadConfig("steps must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(OptimizeError::BadConfig("restarts must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(OptimizeError::BadConfig("learning_rate must be finite and non-negative"));
        }
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0 && self.beta2 >= 0.0 && self.beta2 < 1.0) {
            return Err(OptimizeError::BadConfig("beta1 and beta2 must lie in [0, 1)"));
        }
        if !pos(self.epsilon) || !pos(self.alpha) {
            return Err(OptimizeError::BadConfig("epsilon and alpha must be positive"));
        }
        if !pos(self.tau_min) || !(self.tau0.is_finite() && self.tau0 >= self.tau_min) {
            return Err(OptimizeError::BadConfig("need 0 < tau_min <= tau0"));
        }
        if !unit(self.anneal_fraction) || !unit(self.lambda_ramp_fraction) {
            return Err(OptimizeError::BadConfig("schedule fractions must lie in (0, 1]"));
        }
        if !(self.lambda0.is_finite() && self.lambda0 >= 0.0 && self.lambda_max.is_finite() && self.lambda_max >= 0.0) {
            return Err(OptimizeError::BadConfig("lambda endpoints must be finite and non-negative"));
        }
        if !(self.sigma_threshold > 0.0 && self.sigma_threshold < 1.0) {
            return Err(OptimizeError::BadConfig("sigma_threshold must lie in (0, 1)"));
        }
        if !(self.init_jitter.is_finite() && self.init_jitter >= 0.0 && self.init_jitter < 1.0) {
            return Err(OptimizeError::BadConfig("init_jitter must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Integer factors of one node: `temporal[m]` for levels `0..=dram`, and the
/// spatial factors at the spatial level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMapping {
    pub id: String,
    pub temporal: Vec<DimFactors>,
    pub spatial: DimFactors,
}

impl NodeMapping {
    /// Everything in the DRAM loop: the untiled mapping.
    pub fn untiled(id: &str, dims: &LayerDims, levels: usize) -> Self {
        let mut temporal = vec![LayerDims::ONES; levels];
        temporal[levels - 1] = *dims;
        Self { id: id.into(), temporal, spatial: LayerDims::ONES }
    }

    pub fn factors(&self) -> Factors<f64> {
        Factors {
            temporal: self.temporal.iter().map(|t| t.to_array().map(|x| x as f64)).collect(),
            spatial: self.spatial.to_array().map(|x| x as f64),
        }
    }

    /// Product of the factors of `d` below DRAM, spatial included.
    pub fn inner(&self, d: Dim) -> u128 {
        let dram = self.temporal.len() - 1;
        self.temporal[..dram].iter().map(|t| t.get(d) as u128).product::<u128>() * self.spatial.get(d) as u128
    }

    /// Extent of `d` covered by the tile held at `level`.
    pub fn extent_at(&self, d: Dim, level: usize, spatial_level: usize) -> u128 {
        let t: u128 = self.temporal[..=level].iter().map(|t| t.get(d) as u128).product();
        if spatial_level <= level {
            t * self.spatial.get(d) as u128
        } else {
            t
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionDecision {
    pub producer: String,
    pub consumer: String,
    pub sigma: f64,
    pub fused: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Shape { node: String, detail: String },
    NonPositiveFactor { node: String, dim: Dim },
    NotDivisor { node: String, dim: Dim, factor: u64, extent: u64 },
    InnerExceedsExtent {
        node: String,
        dim: Dim,
        #[serde(with = "wide")]
        inner: u128,
        extent: u64,
    },
    Coverage {
        node: String,
        dim: Dim,
        #[serde(with = "wide")]
        total: u128,
        extent: u64,
    },
    NonSpatialDim { node: String, dim: Dim, factor: u64 },
    PeBound {
        node: String,
        #[serde(with = "wide")]
        used: u128,
        available: u64,
    },
    Capacity {
        group: Vec<String>,
        level: usize,
        #[serde(with = "wide")]
        required: u128,
        capacity: u64,
    },
    Alignment {
        producer: String,
        consumer: String,
        #[serde(with = "wide3")]
        output: [u128; 3],
        #[serde(with = "wide3")]
        input: [u128; 3],
    },
    IneligibleFusion { producer: String, consumer: String },
}

impl Violation {
    /// Violations the relaxed encoding cannot express, and hence no penalty
    /// can register.
    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            Violation::Shape { .. }
                | Violation::NotDivisor { .. }
                | Violation::NonSpatialDim { .. }
                | Violation::IneligibleFusion { .. }
        )
    }
}

/// `u128` counts as JSON `u64`, saturating. Tagged enums cannot carry
/// 128-bit integers through serde.
mod wide {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(u64::try_from(*v).unwrap_or(u64::MAX))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        u64::deserialize(d).map(u128::from)
    }
}

mod wide3 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[u128; 3], s: S) -> Result<S::Ok, S::Error> {
        v.map(|x| u64::try_from(x).unwrap_or(u64::MAX)).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u128; 3], D::Error> {
        <[u64; 3]>::deserialize(d).map(|a| a.map(u128::from))
    }
}

fn shape(s: &[u128; 3]) -> String {
    format!("({}, {}, {})", s[0], s[1], s[2])
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { node, detail } => write!(f, "shape: node `{node}`: {detail}"),
            Violation::NonPositiveFactor { node, dim } => write!(f, "factor: node `{node}` has a zero factor on {dim}"),
            Violation::NotDivisor { node, dim, factor, extent } => {
                write!(f, "divisor: node `{node}` {dim} factor {factor} does not divide {extent}")
            }
            Violation::InnerExceedsExtent { node, dim, inner, extent } => {
                write!(f, "coverage: node `{node}` {dim} inner factors multiply to {inner} > extent {extent}")
            }
            Violation::Coverage { node, dim, total, extent } => {
                write!(f, "coverage: node `{node}` {dim} factors multiply to {total} < extent {extent}")
            }
            Violation::NonSpatialDim { node, dim, factor } => {
                write!(f, "spatial: node `{node}` unrolls {dim} by {factor} but {dim} is not a spatial dimension")
            }
            Violation::PeBound { node, used, available } => {
                write!(f, "PE bound: node `{node}` uses {used} PEs, the array has {available}")
            }
            Violation::Capacity { group, level, required, capacity } => {
                write!(f, "capacity: group [{}] needs {required} words at L{level}, capacity {capacity}", group.join(", "))
            }
            Violation::Alignment { producer, consumer, output, input } => write!(
                f,
                "alignment: `{producer}` output tile {} differs from `{consumer}` input tile {}",
                shape(output),
                shape(input)
            ),
            Violation::IneligibleFusion { producer, consumer } => {
                write!(f, "fusion: edge {producer} -> {consumer} cannot be fused")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentStrategy {
    pub nodes: Vec<NodeMapping>,
    /// One entry per eligible edge.
    pub fusion: Vec<FusionDecision>,
    pub groups: Vec<Vec<String>>,
    pub validity: ValidityReport,
}

impl DeploymentStrategy {
    /// Assemble a strategy from mappings and per-edge fusion bits (in
    /// eligible-edge order), then derive groups and validity.
    pub fn new(graph: &WorkloadGraph, cfg: &AcceleratorConfig, nodes: Vec<NodeMapping>, fused: &[bool], sigma: &[f64]) -> Self {
        let fusion = graph
            .eligible_edges()
            .iter()
            .enumerate()
            .map(|(i, e)| FusionDecision {
                producer: graph.node(e.producer).id.clone(),
                consumer: graph.node(e.consumer).id.clone(),
                sigma: sigma.get(i).copied().unwrap_or(if fused[i] { 1.0 } else { 0.0 }),
                fused: fused[i],
            })
            .collect();
        let groups = FusionGroups::from_decisions(graph, fused)
            .groups
            .into_iter()
            .map(|g| g.into_iter().map(|v| graph.node(v).id.clone()).collect())
            .collect();
        let mut s = Self { nodes, fusion, groups, validity: ValidityReport::default() };
        s.validity = validate(&s, graph, cfg);
        s
    }

    pub fn untiled(graph: &WorkloadGraph, cfg: &AcceleratorConfig) -> Self {
        let nodes = graph.nodes().iter().map(|n| NodeMapping::untiled(&n.id, &n.dims, cfg.num_levels())).collect();
        let fused = vec![false; graph.eligible_edges().len()];
        Self::new(graph, cfg, nodes, &fused, &[])
    }

    pub fn is_feasible(&self) -> bool {
        self.validity.feasible
    }

    /// Fusion bits in eligible-edge order. Edges without a decision are unfused.
    pub fn fused_bits(&self, graph: &WorkloadGraph) -> Vec<bool> {
        graph
            .eligible_edges()
            .iter()
            .map(|e| {
                let (p, c) = (&graph.node(e.producer).id, &graph.node(e.consumer).id);
                self.fusion.iter().any(|d| d.fused && &d.producer == p && &d.consumer == c)
            })
            .collect()
    }

    pub fn factors(&self) -> Vec<Factors<f64>> {
        self.nodes.iter().map(NodeMapping::factors).collect()
    }
}

/// Check a strategy with integer arithmetic only.
pub fn validate(strategy: &DeploymentStrategy, graph: &WorkloadGraph, cfg: &AcceleratorConfig) -> ValidityReport {
    let mut v = Vec::new();
    let dram = cfg.dram();
    let sl = cfg.spatial_level();
    if strategy.nodes.len() != graph.len() {
        v.push(Violation::Shape {
            node: String::from("*"),
            detail: format!("expected {} node mappings, found {}", graph.len(), strategy.nodes.len()),
        });
        return ValidityReport { feasible: false, violations: v };
    }
    let mut shape_ok = true;
    for (m, layer) in strategy.nodes.iter().zip(graph.nodes()) {
        if m.id != layer.id {
            v.push(Violation::Shape { node: m.id.clone(), detail: format!("expected mapping for `{}`", layer.id) });
            shape_ok = false;
            continue;
        }
        if m.temporal.len() != dram + 1 {
            v.push(Violation::Shape {
                node: m.id.clone(),
                detail: format!("expected {} temporal levels, found {}", dram + 1, m.temporal.len()),
            });
            shape_ok = false;
            continue;
        }
        for d in Dim::ALL {
            let extent = layer.dims.get(d);
            let spatial = m.spatial.get(d);
            let inner_factors = m.temporal[..dram].iter().map(|t| t.get(d)).chain([spatial]);
            if inner_factors.clone().chain([m.temporal[dram].get(d)]).any(|f| f == 0) {
                v.push(Violation::NonPositiveFactor { node: m.id.clone(), dim: d });
                continue;
            }
            if spatial != 1 && !cfg.is_spatial(d) {
                v.push(Violation::NonSpatialDim { node: m.id.clone(), dim: d, factor: spatial });
            }
            if let Some(factor) = inner_factors.clone().find(|&f| extent % f != 0) {
                v.push(Violation::NotDivisor { node: m.id.clone(), dim: d, factor, extent });
            }
            let inner = m.inner(d);
            if inner > extent as u128 {
                v.push(Violation::InnerExceedsExtent { node: m.id.clone(), dim: d, inner, extent });
            }
            let total = inner * m.temporal[dram].get(d) as u128;
            if total < extent as u128 {
                v.push(Violation::Coverage { node: m.id.clone(), dim: d, total, extent });
            }
        }
        let used: u128 = m.spatial.to_array().iter().map(|&x| x as u128).product();
        if used > cfg.pe_count() as u128 {
            v.push(Violation::PeBound { node: m.id.clone(), used, available: cfg.pe_count() });
        }
    }
    let eligible = graph.eligible_edges();
    for d in strategy.fusion.iter().filter(|d| d.fused) {
        let ok = eligible.iter().any(|e| graph.node(e.producer).id == d.producer && graph.node(e.consumer).id == d.consumer);
        if !ok {
            v.push(Violation::IneligibleFusion { producer: d.producer.clone(), consumer: d.consumer.clone() });
        }
    }
    if shape_ok {
        let fused = strategy.fused_bits(graph);
        for group in FusionGroups::from_decisions(graph, &fused).groups {
            for level in cfg.bounded_levels() {
                let cap = cfg.capacity(level).expect("bounded");
                let required: u128 = group
                    .iter()
                    .flat_map(|&n| {
                        let m = &strategy.nodes[n];
                        cfg.capacity_roles(level).map(move |role| {
                            crate::config::tensor_dims(role).iter().map(|&d| m.extent_at(d, level, sl)).product::<u128>()
                        })
                    })
                    .sum();
                if required > cap as u128 {
                    v.push(Violation::Capacity {
                        group: group.iter().map(|&n| graph.node(n).id.clone()).collect(),
                        level,
                        required,
                        capacity: cap,
                    });
                }
            }
        }
        let (lo, li) = (cfg.outer_level(crate::config::Role::O), cfg.outer_level(crate::config::Role::I));
        for (e, _) in eligible.iter().zip(&fused).filter(|(_, &f)| f) {
            let (p, c) = (&strategy.nodes[e.producer], &strategy.nodes[e.consumer]);
            let output = [Dim::P, Dim::Q, Dim::K].map(|d| p.extent_at(d, lo, sl));
            let input = [Dim::P, Dim::Q, Dim::C].map(|d| c.extent_at(d, li, sl));
            if output != input {
                v.push(Violation::Alignment { producer: p.id.clone(), consumer: c.id.clone(), output, input });
            }
        }
    }
    ValidityReport { feasible: v.is_empty(), violations: v }
}

/// Exact cost with the discrete factors and `σ ∈ {0, 1}`.
pub fn exact_cost(strategy: &DeploymentStrategy, graph: &WorkloadGraph, cfg: &AcceleratorConfig) -> CostBreakdown<f64> {
    let sigma: Vec<f64> = strategy.fused_bits(graph).iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    graph_edp(&Plain, graph, &strategy.factors(), &sigma, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Penalties {
    pub p_map: f64,
    pub p_mem: f64,
    pub p_align: f64,
}

impl Penalties {
    pub fn total(&self) -> f64 {
        self.p_map + self.p_mem + self.p_align
    }
}

/// Penalties of a strategy's relaxed encoding: every factor as a continuous
/// value, the DRAM quotient `extent / inner`, the coverage ratio, and `σ`
/// equal to the fusion bit.
pub fn strategy_penalties(strategy: &DeploymentStrategy, graph: &WorkloadGraph, cfg: &AcceleratorConfig) -> Penalties {
    let factors = strategy.factors();
    let mut continuous = Vec::new();
    for (m, layer) in strategy.nodes.iter().zip(graph.nodes()) {
        let dram = m.temporal.len() - 1;
        for d in Dim::ALL {
            let extent = layer.dims.get(d) as f64;
            continuous.extend(m.temporal.iter().map(|t| t.get(d) as f64));
            continuous.push(m.spatial.get(d) as f64);
            let inner = m.inner(d) as f64;
            if inner > 0.0 {
                continuous.push(extent / inner);
                continuous.push(inner * m.temporal[dram].get(d) as f64 / extent);
            }
        }
    }
    let mut p_map = p_valid(&Plain, &continuous);
    for f in &factors {
        p_map += p_spatial(&Plain, f, cfg);
    }
    let sigma: Vec<f64> = strategy.fused_bits(graph).iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Penalties {
        p_map,
        p_mem: p_mem(&Plain, graph, &factors, &sigma, cfg),
        p_align: p_align(&Plain, graph, &factors, &sigma, cfg),
    }
}

/// Geometric split of every extent over its slots and the DRAM factor,
/// perturbed log-uniformly by up to `±init_jitter`. Fusion logits start at 0.
pub fn init_params(graph: &WorkloadGraph, cfg: &AcceleratorConfig, opt: &OptimizerConfig, restart: usize) -> MappingParams {
    let mut p = MappingParams::new(graph, cfg, opt.alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    rng.set_stream(u64::MAX - restart as u64);
    let jitter = libm::log(1.0 + opt.init_jitter);
    for (ni, node) in graph.nodes().iter().enumerate() {
        for d in Dim::ALL {
            let levels = (0..cfg.dram()).map(SlotLevel::Temporal).chain([SlotLevel::Spatial]);
            let slots: Vec<usize> = levels.filter_map(|l| p.slot_index(ni, d, l)).collect();
            if slots.is_empty() {
                continue;
            }
            let base = libm::log(node.dims.get(d) as f64) / (slots.len() + 1) as f64;
            for s in slots {
                let eps = if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
                p.values[s] = base + eps;
            }
        }
    }
    p
}

/// Adam on a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn update(&mut self, values: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..values.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            values[i] -= self.lr * mh / (libm::sqrt(vh) + self.eps);
        }
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub restart: usize,
    pub step: usize,
    pub edp: f64,
    pub p_map: f64,
    pub p_mem: f64,
    pub p_align: f64,
    pub tau: f64,
    pub lambda: f64,
    pub loss: f64,
}

/// A single optimization run.
#[derive(Debug, Clone)]
pub struct Optimizer<'a> {
    graph: &'a WorkloadGraph,
    cfg: &'a AcceleratorConfig,
    opt: &'a OptimizerConfig,
    restart: usize,
    params: MappingParams,
    adam: Adam,
    anneal: Anneal,
    lambda: LambdaSchedule,
    edp0: Option<f64>,
    step: usize,
}

impl<'a> Optimizer<'a> {
    pub fn new(graph: &'a WorkloadGraph, cfg: &'a AcceleratorConfig, opt: &'a OptimizerConfig, restart: usize) -> Self {
        let params = init_params(graph, cfg, opt, restart);
        let adam = Adam::new(params.values.len(), opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon);
        Self {
            graph,
            cfg,
            opt,
            restart,
            params,
            adam,
            anneal: Anneal::new(opt.tau0, opt.tau_min, opt.steps, opt.anneal_fraction),
            lambda: LambdaSchedule::new(opt.lambda0, opt.lambda_max, opt.steps, opt.lambda_ramp_fraction),
            edp0: None,
            step: 0,
        }
    }

    pub fn params(&self) -> &MappingParams {
        &self.params
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Forward with fresh noise, backward, one Adam update.
    pub fn step(&mut self) -> Result<StepRecord, OptimizeError> {
        let (restart, step) = (self.restart, self.step);
        let fail = |source: AdError| OptimizeError::NonFinite { restart, step, source };
        let tau = self.anneal.tau(step);
        let lambda = self.lambda.at(step);
        let scale = if self.opt.noise_anneal { tau / self.opt.tau0 } else { 1.0 };
        self.params.resample_noise(self.opt.seed, restart as u64, step as u64, scale);
        self.params.tau = tau;
        let tape = Tape::new();
        let ctx = &tape;
        let leaves = self.params.leaves(&ctx);
        let point = self.params.relaxed(&ctx, &leaves, self.graph, self.cfg, tau, Relaxation::StraightThrough);
        let bd = graph_edp(&ctx, self.graph, &point.factors, &point.sigma, self.cfg);
        let edp0 = *self.edp0.get_or_insert(bd.edp.value());
        if !(edp0.is_finite() && edp0 > 0.0) {
            return Err(OptimizeError::Diverged { restart, step, what: "initial EDP" });
        }
        let settings = LossSettings { edp0, lambda, detach_align_sigma: self.opt.detach_align_sigma };
        let terms = augmented_loss(&ctx, &bd, &point, self.graph, self.cfg, settings);
        tape.check().map_err(fail)?;
        if !terms.loss.value().is_finite() {
            return Err(OptimizeError::Diverged { restart, step, what: "loss" });
        }
        let grads = tape.backward(terms.loss);
        let g: Vec<f64> = leaves.iter().map(|&l| grads.get(l)).collect();
        if g.iter().any(|x| !x.is_finite()) {
            return Err(OptimizeError::Diverged { restart, step, what: "gradient" });
        }
        self.adam.update(&mut self.params.values, &g);
        let n = self.params.num_slots();
        for (e, f) in self.params.fusion.iter_mut().enumerate() {
            f.raw = self.params.values[n + e];
        }
        self.step += 1;
        self.params.step = self.step;
        let t = terms.values();
        Ok(StepRecord {
            restart,
            step,
            edp: t.edp,
            p_map: t.p_map,
            p_mem: t.p_mem,
            p_align: t.p_align,
            tau,
            lambda,
            loss: t.loss,
        })
    }

    pub fn decode(&self) -> DeploymentStrategy {
        decode(&self.params, self.graph, self.cfg, self.opt.sigma_threshold)
    }

    /// Clear the noise and move every slot onto the divisor it decodes to.
    /// Slots left on a boundary between two divisors would otherwise keep a
    /// split distribution at any temperature.
    pub fn commit(&mut self) {
        self.params.clear_noise();
        for s in 0..self.params.num_slots() {
            let d = self.params.hard_divisor(s);
            self.params.set_t(s, d as f64);
        }
        self.params.tau = self.anneal.tau(self.step);
    }

    pub fn into_params(self) -> MappingParams {
        self.params
    }
}

/// Discrete strategy from continuous parameters; noise is ignored.
pub fn decode(params: &MappingParams, graph: &WorkloadGraph, cfg: &AcceleratorConfig, threshold: f64) -> DeploymentStrategy {
    let mut p = params.clone();
    p.clear_noise();
    let dram = cfg.dram();
    let mut nodes = Vec::with_capacity(graph.len());
    for (ni, layer) in graph.nodes().iter().enumerate() {
        let mut m = NodeMapping { id: layer.id.clone(), temporal: vec![LayerDims::ONES; dram + 1], spatial: LayerDims::ONES };
        for d in Dim::ALL {
            for lvl in 0..dram {
                if let Some(s) = p.slot_index(ni, d, SlotLevel::Temporal(lvl)) {
                    m.temporal[lvl].set(d, p.hard_divisor(s));
                }
            }
            if let Some(s) = p.slot_index(ni, d, SlotLevel::Spatial) {
                m.spatial.set(d, p.hard_divisor(s));
            }
            let inner = m.inner(d) as u64;
            m.temporal[dram].set(d, layer.dims.get(d).div_ceil(inner));
        }
        nodes.push(m);
    }
    let n = p.num_slots();
    let sigma: Vec<f64> = (0..p.fusion.len()).map(|e| p.values[n + e].sigmoid()).collect();
    let fused: Vec<bool> = sigma.iter().map(|&s| s > threshold).collect();
    DeploymentStrategy::new(graph, cfg, nodes, &fused, &sigma)
}

/// Result of one restart.
#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub restart: usize,
    pub strategy: DeploymentStrategy,
    pub edp: f64,
    pub trace: Vec<StepRecord>,
    /// Parameters after [`Optimizer::commit`].
    pub params: MappingParams,
    /// Set when the run stopped early; the strategy is then decoded from the
    /// last finite parameters.
    pub error: Option<OptimizeError>,
}

impl RestartOutcome {
    fn rank(&self) -> (bool, usize, f64) {
        (!self.strategy.is_feasible(), self.strategy.validity.violations.len(), self.edp)
    }
}

fn better(a: &(DeploymentStrategy, f64), b: &(DeploymentStrategy, f64)) -> bool {
    let key = |x: &(DeploymentStrategy, f64)| (!x.0.is_feasible(), x.0.validity.violations.len(), x.1);
    let (ka, kb) = (key(a), key(b));
    (ka.0, ka.1) < (kb.0, kb.1) || ((ka.0, ka.1) == (kb.0, kb.1) && ka.2 < kb.2)
}

/// Run one restart to completion.
pub fn run_restart(graph: &WorkloadGraph, cfg: &AcceleratorConfig, opt: &OptimizerConfig, restart: usize) -> RestartOutcome {
    let mut o = Optimizer::new(graph, cfg, opt, restart);
    let mut trace = Vec::with_capacity(opt.steps);
    let mut error = None;
    let mut best: Option<(DeploymentStrategy, f64)> = None;
    let mut consider = |s: DeploymentStrategy| {
        let edp = exact_cost(&s, graph, cfg).edp;
        let cand = (s, edp);
        if best.as_ref().is_none_or(|b| better(&cand, b)) {
            best = Some(cand);
        }
    };
    for i in 0..opt.steps {
        match o.step() {
            Ok(r) => trace.push(r),
            Err(e) => {
                error = Some(e);
                break;
            }
        }
        if opt.decode_interval > 0 && (i + 1) % opt.decode_interval == 0 && i + 1 < opt.steps {
            consider(o.decode());
        }
    }
    consider(o.decode());
    o.commit();
    let (strategy, edp) = best.expect("at least one decode");
    RestartOutcome { restart, strategy, edp, trace, params: o.into_params(), error }
}

/// Outcome of [`optimize`].
#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub strategy: DeploymentStrategy,
    pub cost: CostBreakdown<f64>,
    pub best_restart: usize,
    pub restarts: Vec<RestartOutcome>,
}

impl OptimizeResult {
    pub fn trace(&self) -> impl Iterator<Item = &StepRecord> {
        self.restarts.iter().flat_map(|r| r.trace.iter())
    }
}

/// Pick the feasible restart with the lowest exact EDP; when none is
/// feasible, the one with the fewest violations. Ties go to the lower index.
pub fn select_best(graph: &WorkloadGraph, cfg: &AcceleratorConfig, mut restarts: Vec<RestartOutcome>) -> OptimizeResult {
    assert!(!restarts.is_empty(), "at least one restart");
    restarts.sort_by_key(|r| r.restart);
    let mut best = 0;
    for (i, r) in restarts.iter().enumerate().skip(1) {
        let (a, b) = (r.rank(), restarts[best].rank());
        if (a.0, a.1) < (b.0, b.1) || ((a.0, a.1) == (b.0, b.1) && a.2 < b.2) {
            best = i;
        }
    }
    let strategy = restarts[best].strategy.clone();
    let cost = exact_cost(&strategy, graph, cfg);
    OptimizeResult { strategy, cost, best_restart: restarts[best].restart, restarts }
}

/// All restarts, sequentially.
pub fn optimize(graph: &WorkloadGraph, cfg: &AcceleratorConfig, opt: &OptimizerConfig) -> Result<OptimizeResult, OptimizeError> {
    opt.validate()?;
    let runs = (0..opt.restarts).map(|r| run_restart(graph, cfg, opt, r)).collect();
    Ok(select_best(graph, cfg, runs))
}
