//! Multi-threaded drivers over the single-threaded core routines.

use fusetile_core::config::{AcceleratorConfig, WorkloadGraph};
use fusetile_core::error::OptimizeError;
use fusetile_core::optimizer::{run_restart, select_best, OptimizeResult, OptimizerConfig};
use rayon::prelude::*;

/// Same result as [`fusetile_core::optimizer::optimize`], with restarts run
/// concurrently.
pub fn optimize(graph: &WorkloadGraph, cfg: &AcceleratorConfig, opt: &OptimizerConfig) -> Result<OptimizeResult, OptimizeError> {
    opt.validate()?;
    let runs = (0..opt.restarts).into_par_iter().map(|r| run_restart(graph, cfg, opt, r)).collect();
    Ok(select_best(graph, cfg, runs))
}
