//! One module per subcommand.

mod baseline;
mod exhaustive;
mod optimize;
mod oracle_check;
mod report;

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use fusetile_core::config::{AcceleratorConfig, WorkloadGraph};
use serde_json::{Map, Value};

use crate::cli::{Cli, Command, Exit, GlobalArgs};
use crate::io;
use crate::manifest::RunManifest;

pub use baseline::{ComparisonReport, MethodRow, SeedRow};
pub use exhaustive::Reference;
pub use oracle_check::{Mismatch, OracleReport, QuantityRate, SampleRow};
pub use report::ReportRow;

pub const STRATEGY_FILE: &str = "strategy.json";
pub const COST_FILE: &str = "cost.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const ORACLE_FILE: &str = "oracle_report.json";
pub const REFERENCE_FILE: &str = "reference.json";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const COMPARISON_TABLE_FILE: &str = "comparison.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const REPORT_FILE: &str = "report.csv";

pub fn dispatch(cli: &Cli) -> Result<Exit> {
    let g = &cli.global;
    match &cli.command {
        Command::Optimize { config } => optimize::run(g, config.as_deref()),
        Command::OracleCheck { samples, inject_fault } => oracle_check::run(g, *samples, *inject_fault),
        Command::Exhaustive { limit } => exhaustive::run(g, *limit),
        Command::Baseline { methods, budget, repeats, config } => {
            baseline::run(g, methods, *budget, *repeats, config.as_deref())
        }
        Command::Report { runs, zscore } => report::run(g, runs, *zscore),
    }
}

/// Loaded inputs shared by the commands that take a workload.
struct Inputs {
    graph: WorkloadGraph,
    cfg: AcceleratorConfig,
    workload: PathBuf,
}

impl Inputs {
    fn load(g: &GlobalArgs) -> Result<Self> {
        let Some(workload) = &g.workload else {
            bail!("--workload is required for this command");
        };
        let graph = io::load_workload(workload)?;
        let cfg = io::load_hardware(&g.hw)?;
        Ok(Self { graph, cfg, workload: workload.clone() })
    }
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn manifest(g: &GlobalArgs, command: &str, seed: u64, config: Option<&Path>, options: Map<String, Value>) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        workload: g.workload.as_deref().map(path_string),
        hw: g.hw.clone(),
        optimizer_config: config.map(path_string),
        out: path_string(&g.out),
        seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        options,
    }
}
