use std::path::Path;

use anyhow::Result;
use serde_json::Map;

use super::{manifest, Inputs, COST_FILE, STRATEGY_FILE, TRACE_FILE};
use crate::cli::{Exit, GlobalArgs};
use crate::{io, parallel};

pub fn run(g: &GlobalArgs, config: Option<&Path>) -> Result<Exit> {
    let inputs = Inputs::load(g)?;
    let mut opt = io::load_optimizer_config(config)?;
    if let Some(seed) = g.seed {
        opt.seed = seed;
    }
    let result = parallel::optimize(&inputs.graph, &inputs.cfg, &opt)?;

    io::create_dir(&g.out)?;
    io::write_json(&g.out.join(STRATEGY_FILE), &result.strategy)?;
    io::write_json(&g.out.join(COST_FILE), &result.cost.report(&inputs.graph, &inputs.cfg))?;
    io::write_csv(&g.out.join(TRACE_FILE), result.trace())?;
    manifest(g, "optimize", opt.seed, config, Map::new()).write(&g.out)?;

    let feasible = result.strategy.is_feasible();
    let fused = result.strategy.fusion.iter().filter(|f| f.fused).count();
    println!(
        "{}: EDP {:.6e} (restart {}, {fused}/{} edges fused, {})",
        inputs.workload.display(),
        result.cost.edp,
        result.best_restart,
        result.strategy.fusion.len(),
        if feasible { "feasible" } else { "infeasible" }
    );
    if feasible {
        return Ok(Exit::Success);
    }
    for v in &result.strategy.validity.violations {
        eprintln!("violation: {v}");
    }
    Ok(Exit::Infeasible)
}
