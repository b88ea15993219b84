use anyhow::Result;
use fusetile_core::error::EvalError;
use fusetile_core::evaluation::exhaustive_best;
use fusetile_core::optimizer::{exact_cost, DeploymentStrategy};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use super::{manifest, path_string, Inputs, COST_FILE, REFERENCE_FILE, STRATEGY_FILE};
use crate::cli::{Exit, GlobalArgs};
use crate::io;

/// The enumerated optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub workload: String,
    pub hw: String,
    pub edp: f64,
    pub latency_cycles: f64,
    pub energy_pj: f64,
    /// Per-node candidates enumerated.
    pub candidates: u128,
    /// Joint mappings times fusion choices represented.
    pub joint_size: u128,
    pub strategy: DeploymentStrategy,
}

pub fn run(g: &GlobalArgs, limit: u64) -> Result<Exit> {
    let inputs = Inputs::load(g)?;
    let (graph, cfg) = (&inputs.graph, &inputs.cfg);
    let best = match exhaustive_best(graph, cfg, limit) {
        Ok(b) => b,
        Err(EvalError::NoFeasibleStrategy) => {
            eprintln!("error: no strategy satisfies the hardware constraints");
            return Ok(Exit::Infeasible);
        }
        Err(e) => return Err(e.into()),
    };
    let cost = exact_cost(&best.strategy, graph, cfg);
    let reference = Reference {
        workload: path_string(&inputs.workload),
        hw: g.hw.clone(),
        edp: best.edp,
        latency_cycles: cost.latency,
        energy_pj: cost.energy,
        candidates: best.candidates,
        joint_size: best.joint_size,
        strategy: best.strategy.clone(),
    };

    io::create_dir(&g.out)?;
    io::write_json(&g.out.join(REFERENCE_FILE), &reference)?;
    io::write_json(&g.out.join(STRATEGY_FILE), &best.strategy)?;
    io::write_json(&g.out.join(COST_FILE), &cost.report(graph, cfg))?;
    let mut options = Map::new();
    options.insert("limit".into(), json!(limit));
    manifest(g, "exhaustive", g.seed.unwrap_or(0), None, options).write(&g.out)?;

    println!("optimum EDP {:.6e} over {} strategies", best.edp, best.joint_size);
    Ok(Exit::Success)
}
