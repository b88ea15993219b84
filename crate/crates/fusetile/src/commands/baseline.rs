use std::path::Path;

use anyhow::{bail, Result};
use fusetile_core::evaluation::{ga_search, gradient_search, random_search, GaParams, Method, SearchResult};
use fusetile_core::optimizer::exact_cost;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use super::{manifest, path_string, Inputs, COMPARISON_FILE, COMPARISON_TABLE_FILE, CONVERGENCE_FILE};
use crate::cli::{Exit, GlobalArgs};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub best_edp: f64,
    pub evaluations_used: u64,
    pub feasible: bool,
}

/// One method, summarized by its median seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub best_edp: f64,
    pub latency_cycles: f64,
    pub energy_pj: f64,
    pub evaluations_used: u64,
    pub feasible: bool,
    /// Best-so-far curve of the median seed, relative to the run directory.
    pub trace_path: String,
    pub median_seed: u64,
    pub seeds: Vec<SeedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub workload: String,
    pub hw: String,
    pub budget: u64,
    pub budget_unit: String,
    pub ga: GaParams,
    pub methods: Vec<MethodRow>,
}

#[derive(Serialize)]
struct TraceRow {
    evaluation_index: u64,
    best_so_far_edp: f64,
}

#[derive(Serialize)]
struct TableRow<'a> {
    method: &'a str,
    best_edp: f64,
    evaluations_used: u64,
    feasible: bool,
    trace_path: &'a str,
}

pub fn run(g: &GlobalArgs, methods: &[String], budget: u64, repeats: u64, config: Option<&Path>) -> Result<Exit> {
    let mut parsed = Vec::new();
    for name in methods {
        let Some(m) = Method::parse(name.trim()) else {
            bail!("unknown method `{name}` (expected grad, ga or random)");
        };
        if !parsed.contains(&m) {
            parsed.push(m);
        }
    }
    if parsed.is_empty() {
        bail!("--methods is empty");
    }
    if budget == 0 {
        bail!("--budget must be at least 1");
    }
    if repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let inputs = Inputs::load(g)?;
    let (graph, cfg) = (&inputs.graph, &inputs.cfg);
    let opt = io::load_optimizer_config(config)?;
    let base_seed = g.seed.unwrap_or(opt.seed);
    let ga = GaParams::default();

    let jobs: Vec<(Method, u64)> =
        parsed.iter().flat_map(|&m| (0..repeats).map(move |i| (m, base_seed.wrapping_add(i)))).collect();
    let results: Vec<SearchResult> = jobs
        .par_iter()
        .map(|&(m, seed)| match m {
            Method::Grad => {
                let o = fusetile_core::optimizer::OptimizerConfig { seed, ..opt.clone() };
                gradient_search(graph, cfg, &o, budget)
            }
            Method::Ga => ga_search(graph, cfg, budget, seed, ga),
            Method::Random => random_search(graph, cfg, budget, seed),
        })
        .collect::<Result<_, _>>()?;

    io::create_dir(&g.out)?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (mi, &m) in parsed.iter().enumerate() {
        let runs: Vec<(u64, &SearchResult)> =
            (0..repeats as usize).map(|i| (jobs[mi * repeats as usize + i].1, &results[mi * repeats as usize + i])).collect();
        let mut order: Vec<usize> = (0..runs.len()).collect();
        order.sort_by(|&a, &b| runs[a].1.best_edp.total_cmp(&runs[b].1.best_edp).then(a.cmp(&b)));
        let (median_seed, median) = runs[order[(runs.len() - 1) / 2]];
        let curve = median.curve();
        let trace_path = format!("trace_{}.csv", m.name());
        io::write_csv(
            &g.out.join(&trace_path),
            curve.iter().enumerate().map(|(i, &v)| TraceRow { evaluation_index: i as u64 + 1, best_so_far_edp: v }),
        )?;
        let cost = exact_cost(&median.best, graph, cfg);
        rows.push(MethodRow {
            method: m.name().to_string(),
            best_edp: median.best_edp,
            latency_cycles: cost.latency,
            energy_pj: cost.energy,
            evaluations_used: median.evaluations_used,
            feasible: median.feasible,
            trace_path,
            median_seed,
            seeds: runs
                .iter()
                .map(|(seed, r)| SeedRow {
                    seed: *seed,
                    best_edp: r.best_edp,
                    evaluations_used: r.evaluations_used,
                    feasible: r.feasible,
                })
                .collect(),
        });
        curves.push(curve);
    }

    let report = ComparisonReport {
        workload: path_string(&inputs.workload),
        hw: g.hw.clone(),
        budget,
        budget_unit: "cost-model evaluations".into(),
        ga,
        methods: rows,
    };
    io::write_json(&g.out.join(COMPARISON_FILE), &report)?;
    io::write_csv(
        &g.out.join(COMPARISON_TABLE_FILE),
        report.methods.iter().map(|r| TableRow {
            method: &r.method,
            best_edp: r.best_edp,
            evaluations_used: r.evaluations_used,
            feasible: r.feasible,
            trace_path: &r.trace_path,
        }),
    )?;
    write_convergence(&g.out.join(CONVERGENCE_FILE), &parsed, &curves)?;
    let mut options = Map::new();
    options.insert("methods".into(), json!(parsed.iter().map(|m| m.name()).collect::<Vec<_>>()));
    options.insert("budget".into(), json!(budget));
    options.insert("repeats".into(), json!(repeats));
    manifest(g, "baseline", base_seed, config, options).write(&g.out)?;

    println!("{:<8} {:>14} {:>12} feasible", "method", "best EDP", "evaluations");
    for r in &report.methods {
        println!("{:<8} {:>14.6e} {:>12} {}", r.method, r.best_edp, r.evaluations_used, r.feasible);
    }
    Ok(if report.methods.iter().all(|r| r.feasible) { Exit::Success } else { Exit::Infeasible })
}

/// Wide CSV: evaluation index, then one best-so-far column per method. Short
/// curves are padded with their last value.
fn write_convergence(path: &Path, methods: &[Method], curves: &[Vec<f64>]) -> Result<(), io::IoError> {
    let err = |source| io::IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["evaluation_index".to_string()];
    header.extend(methods.iter().map(|m| m.name().to_string()));
    w.write_record(&header).map_err(err)?;
    let len = curves.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..len {
        let mut rec = vec![(i + 1).to_string()];
        for c in curves {
            rec.push(c.get(i).or(c.last()).map_or(String::new(), |v| v.to_string()));
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|source| io::IoError::Write { path: path.to_path_buf(), source })
}
