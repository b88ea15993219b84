//! Search baselines under a shared budget of cost-model evaluations.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AcceleratorConfig, Dim, LayerDims, WorkloadGraph};
use crate::error::EvalError;
use crate::optimizer::{exact_cost, DeploymentStrategy, NodeMapping, Optimizer, OptimizerConfig};
use crate::relax::{divisors_of, SlotLevel};

use super::exhaustive::dim_tuples;

/// Added to the EDP once per validator violation.
pub const VIOLATION_PENALTY: f64 = 1e50;

/// Fixed genetic-algorithm settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism: usize,
}

impl Default for GaParams {
    fn default() -> Self {
        Self { population: 64, tournament: 3, crossover_rate: 0.8, mutation_rate: 0.05, elitism: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Grad,
    Ga,
    Random,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Grad, Method::Ga, Method::Random];

    pub fn name(self) -> &'static str {
        match self {
            Method::Grad => "grad",
            Method::Ga => "ga",
            Method::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub method: Method,
    pub best: DeploymentStrategy,
    /// Exact EDP of `best`, without violation penalties.
    pub best_edp: f64,
    pub evaluations_used: u64,
    pub feasible: bool,
    /// `(evaluation index, best-so-far fitness)`, one row per improvement;
    /// the index is 1-based.
    pub trace: Vec<(u64, f64)>,
}

impl SearchResult {
    /// Best-so-far fitness after each of `evaluations_used` evaluations.
    pub fn curve(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.evaluations_used as usize);
        let mut it = self.trace.iter().peekable();
        let mut cur = f64::INFINITY;
        for i in 1..=self.evaluations_used {
            while let Some(&&(k, v)) = it.peek() {
                if k > i {
                    break;
                }
                cur = v;
                it.next();
            }
            out.push(cur);
        }
        out
    }
}

/// EDP plus [`VIOLATION_PENALTY`] per violation.
pub fn fitness(strategy: &DeploymentStrategy, graph: &WorkloadGraph, cfg: &AcceleratorConfig) -> (f64, f64) {
    let edp = exact_cost(strategy, graph, cfg).edp;
    (edp + VIOLATION_PENALTY * strategy.validity.violations.len() as f64, edp)
}

#[derive(Debug, Clone)]
struct Gene {
    node: usize,
    dim: Dim,
    level: SlotLevel,
    divisors: Vec<u64>,
}

/// Genome layout: one divisor index per tiling slot, then one bit per
/// eligible edge.
#[derive(Debug, Clone)]
pub struct GenomeSpace {
    genes: Vec<Gene>,
    fusion: usize,
    /// Per node and dimension, the contiguous gene range and the tuples whose
    /// product fits in the extent.
    blocks: Vec<[(usize, Vec<Vec<usize>>); 7]>,
    dram: usize,
}

pub type Genome = Vec<usize>;

impl GenomeSpace {
    pub fn new(graph: &WorkloadGraph, cfg: &AcceleratorConfig) -> Self {
        let dram = cfg.dram();
        let mut genes = Vec::new();
        let mut blocks = Vec::new();
        for (ni, node) in graph.nodes().iter().enumerate() {
            let block = Dim::ALL.map(|d| {
                let extent = node.dims.get(d);
                let start = genes.len();
                if extent == 1 {
                    return (start, vec![Vec::new()]);
                }
                let divisors = divisors_of(extent);
                let levels: Vec<SlotLevel> = (0..dram)
                    .map(SlotLevel::Temporal)
                    .chain(cfg.is_spatial(d).then_some(SlotLevel::Spatial))
                    .collect();
                let tuples = dim_tuples(extent, levels.len())
                    .into_iter()
                    .map(|t| t.iter().map(|x| divisors.binary_search(x).expect("divisor")).collect())
                    .collect();
                for level in levels {
                    genes.push(Gene { node: ni, dim: d, level, divisors: divisors.clone() });
                }
                (start, tuples)
            });
            blocks.push(block);
        }
        Self { genes, fusion: graph.eligible_edges().len(), blocks, dram }
    }

    pub fn len(&self) -> usize {
        self.genes.len() + self.fusion
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Options for gene `i`.
    pub fn arity(&self, i: usize) -> usize {
        self.genes.get(i).map_or(2, |g| g.divisors.len())
    }

    /// Uniform over divisor tuples that fit each extent, uniform fusion bits.
    pub fn sample_valid(&self, rng: &mut impl Rng) -> Genome {
        let mut g = vec![0; self.len()];
        for block in &self.blocks {
            for (start, tuples) in block {
                let t = &tuples[rng.random_range(0..tuples.len())];
                g[*start..*start + t.len()].copy_from_slice(t);
            }
        }
        for i in self.genes.len()..self.len() {
            g[i] = rng.random_range(0..2);
        }
        g
    }

    pub fn strategy(&self, genome: &Genome, graph: &WorkloadGraph, cfg: &AcceleratorConfig) -> DeploymentStrategy {
        let mut nodes: Vec<NodeMapping> =
            graph.nodes().iter().map(|n| NodeMapping::untiled(&n.id, &LayerDims::ONES, self.dram + 1)).collect();
        for (gene, &ix) in self.genes.iter().zip(genome) {
            let m = &mut nodes[gene.node];
            let v = gene.divisors[ix];
            match gene.level {
                SlotLevel::Temporal(l) => m.temporal[l].set(gene.dim, v),
                SlotLevel::Spatial => m.spatial.set(gene.dim, v),
            }
        }
        for (m, layer) in nodes.iter_mut().zip(graph.nodes()) {
            for d in Dim::ALL {
                let inner = m.inner(d).min(u64::MAX as u128) as u64;
                m.temporal[self.dram].set(d, layer.dims.get(d).div_ceil(inner).max(1));
            }
        }
        let fused: Vec<bool> = genome[self.genes.len()..].iter().map(|&b| b == 1).collect();
        DeploymentStrategy::new(graph, cfg, nodes, &fused, &[])
    }
}

/// Keeps the best strategy and the improvement trace.
struct Tracker {
    used: u64,
    best: Option<(f64, f64, DeploymentStrategy)>,
    trace: Vec<(u64, f64)>,
}

impl Tracker {
    fn new() -> Self {
        Self { used: 0, best: None, trace: Vec::new() }
    }

    fn offer(&mut self, strategy: DeploymentStrategy, fit: f64, edp: f64) {
        self.used += 1;
        if self.best.as_ref().is_none_or(|b| fit < b.0) {
            self.trace.push((self.used, fit));
            self.best = Some((fit, edp, strategy));
        }
    }

    fn finish(self, method: Method) -> SearchResult {
        let (_, best_edp, best) = self.best.expect("budget at least one");
        SearchResult { method, feasible: best.is_feasible(), best, best_edp, evaluations_used: self.used, trace: self.trace }
    }
}

fn check_budget(budget: u64) -> Result<(), EvalError> {
    if budget == 0 {
        return Err(EvalError::BudgetTooSmall(budget));
    }
    Ok(())
}

/// Genetic algorithm; every fitness evaluation counts toward `budget`.
pub fn ga_search(
    graph: &WorkloadGraph,
    cfg: &AcceleratorConfig,
    budget: u64,
    seed: u64,
    params: GaParams,
) -> Result<SearchResult, EvalError> {
    check_budget(budget)?;
    let space = GenomeSpace::new(graph, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Tracker::new();
    let eval = |g: &Genome, tr: &mut Tracker| {
        let s = space.strategy(g, graph, cfg);
        let (fit, edp) = fitness(&s, graph, cfg);
        tr.offer(s, fit, edp);
        fit
    };
    let pop_size = params.population.max(1);
    let mut pop: Vec<(Genome, f64)> = Vec::with_capacity(pop_size);
    while pop.len() < pop_size && tr.used < budget {
        let g = space.sample_valid(&mut rng);
        let f = eval(&g, &mut tr);
        pop.push((g, f));
    }
    while tr.used < budget {
        pop.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut next: Vec<(Genome, f64)> = pop.iter().take(params.elitism.min(pop.len())).cloned().collect();
        let pick = |rng: &mut ChaCha8Rng| -> usize {
            (0..params.tournament.max(1)).map(|_| rng.random_range(0..pop.len())).min().expect("nonempty")
        };
        while next.len() < pop_size && tr.used < budget {
            let a = &pop[pick(&mut rng)].0;
            let b = &pop[pick(&mut rng)].0;
            let mut child = a.clone();
            if rng.random_bool(params.crossover_rate) {
                for (c, &y) in child.iter_mut().zip(b) {
                    if rng.random_bool(0.5) {
                        *c = y;
                    }
                }
            }
            for (i, c) in child.iter_mut().enumerate() {
                if rng.random_bool(params.mutation_rate) {
                    *c = rng.random_range(0..space.arity(i));
                }
            }
            let f = eval(&child, &mut tr);
            next.push((child, f));
        }
        pop = next;
    }
    Ok(tr.finish(Method::Ga))
}

/// Uniform sampling over divisor tuples that fit each extent. Strategies the
/// validator rejects only win when nothing feasible was seen.
pub fn random_search(graph: &WorkloadGraph, cfg: &AcceleratorConfig, budget: u64, seed: u64) -> Result<SearchResult, EvalError> {
    check_budget(budget)?;
    let space = GenomeSpace::new(graph, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Tracker::new();
    for _ in 0..budget {
        let s = space.strategy(&space.sample_valid(&mut rng), graph, cfg);
        let (fit, edp) = fitness(&s, graph, cfg);
        tr.offer(s, fit, edp);
    }
    Ok(tr.finish(Method::Random))
}

/// Steps a restart with `share` evaluations can take when every `k`-th step
/// is followed by a decode and one final decode is reserved.
fn plan_steps(share: u64, k: u64) -> u64 {
    let (mut left, mut steps) = (share, 0);
    while left > 1 {
        steps += 1;
        left -= 1;
        if k > 0 && steps % k == 0 && left > 1 {
            left -= 1;
        }
    }
    steps
}

/// The gradient method under the same budget. Each optimization step and
/// each decode is one evaluation. The budget is split evenly over
/// `opt.restarts`; `opt.steps` is replaced by what the share allows.
pub fn gradient_search(
    graph: &WorkloadGraph,
    cfg: &AcceleratorConfig,
    opt: &OptimizerConfig,
    budget: u64,
) -> Result<SearchResult, EvalError> {
    check_budget(budget)?;
    let restarts = (opt.restarts.max(1) as u64).min(budget);
    let k = opt.decode_interval as u64;
    let mut tr = Tracker::new();
    for r in 0..restarts {
        let share = budget / restarts + u64::from(r < budget % restarts);
        let steps = plan_steps(share, k);
        let run_cfg = OptimizerConfig { steps: steps as usize, ..opt.clone() };
        let mut o = Optimizer::new(graph, cfg, &run_cfg, r as usize);
        let mut left = share;
        while left > 1 {
            if o.step().is_err() {
                break;
            }
            tr.used += 1;
            left -= 1;
            if k > 0 && o.steps_done() as u64 % k == 0 && left > 1 {
                let s = o.decode();
                let (fit, edp) = fitness(&s, graph, cfg);
                tr.offer(s, fit, edp);
                left -= 1;
            }
        }
        let s = o.decode();
        let (fit, edp) = fitness(&s, graph, cfg);
        tr.offer(s, fit, edp);
    }
    Ok(tr.finish(Method::Grad))
}
