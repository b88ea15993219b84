use alloc::string::String;

use thiserror::Error;

use crate::config::{Dim, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("workload has no nodes")]
    EmptyWorkload,
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("node `{node}`: extent of dimension {dim} must be positive")]
    NonPositiveExtent { node: String, dim: Dim },
    #[error("node `{0}`: GEMM layers require p = q = r = s = 1")]
    GemmSpatialDims(String),
    #[error("edge {producer} -> {consumer} references unknown node `{missing}`")]
    DanglingEdge { producer: String, consumer: String, missing: String },
    #[error("duplicate edge {producer} -> {consumer}")]
    DuplicateEdge { producer: String, consumer: String },
    #[error("cycle detected through node `{node}`")]
    CycleDetected { node: String },
    #[error("missing memory level {0} (levels must be numbered 0..M with at least two)")]
    MissingLevel(usize),
    #[error("capacity ordering violated: level {level} is larger than level {next}")]
    CapacityOrdering { level: usize, next: usize },
    #[error("level {level}: `{field}` must be positive and finite")]
    NonPositiveLevelField { level: usize, field: &'static str },
    #[error("pe_count must be at least 1")]
    NonPositivePeCount,
    #[error("energy_per_op_pj must be positive and finite")]
    NonPositiveEnergyPerOp,
    #[error("spatial_level {level} must lie strictly below DRAM (level {dram})")]
    SpatialLevel { level: usize, dram: usize },
    #[error("role {0} is not resident at any level below DRAM")]
    RoleNotResident(Role),
    #[error("role {role} is resident at level {level}, below the spatial level")]
    ResidentBelowSpatial { role: Role, level: usize },
    #[error("dimension {0} listed twice in spatial_dims")]
    DuplicateSpatialDim(Dim),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AdError {
    #[error("non-finite leaf value at node {node}")]
    NonFiniteInput { node: u32 },
    #[error("division by zero at node {node}")]
    DivisionByZero { node: u32 },
    #[error("logarithm of a non-positive value at node {node}")]
    LogDomain { node: u32 },
    #[error("non-finite value produced at node {node}")]
    NonFinite { node: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OptimizeError {
    #[error("optimizer config: {0}")]
    BadConfig(&'static str),
    #[error("restart {restart} step {step}: {source}")]
    NonFinite { restart: usize, step: usize, source: AdError },
    #[error("restart {restart} step {step}: non-finite {what}")]
    Diverged { restart: usize, step: usize, what: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("layer `{node}` has {macs} MACs, above the oracle limit of {limit}")]
    OracleTooLarge { node: String, macs: u128, limit: u64 },
    #[error("layer `{node}`: dimension {dim} factors multiply to {product}, extent is {extent}; the oracle needs an exact factorization")]
    InexactTiling { node: String, dim: Dim, product: u64, extent: u64 },
    #[error("search space of {size} mappings exceeds the limit of {limit}")]
    SpaceTooLarge { size: u128, limit: u64 },
    #[error("no strategy satisfies the hardware constraints")]
    NoFeasibleStrategy,
    #[error("budget must be at least {0} evaluations")]
    BudgetTooSmall(u64),
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations, got {0}")]
    TooFewObservations(usize),
}
