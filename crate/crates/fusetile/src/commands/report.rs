use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fusetile_core::cost::CostReport;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use super::{manifest, path_string, ComparisonReport, COMPARISON_FILE, COST_FILE, REPORT_FILE};
use crate::cli::{Exit, GlobalArgs};
use crate::io;
use crate::manifest::RunManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub model: String,
    pub config: String,
    pub method: String,
    pub edp: f64,
    pub latency_cycles: f64,
    pub energy_pj: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latency_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub energy_z: Option<f64>,
}

fn stem(s: &str) -> String {
    let p = Path::new(s);
    p.file_stem().map_or_else(|| s.to_string(), |x| x.to_string_lossy().into_owned())
}

fn rows_of(dir: &Path) -> Result<Vec<ReportRow>> {
    let m = RunManifest::read(dir).with_context(|| format!("{} is not a run directory", dir.display()))?;
    let run = path_string(dir);
    let model = m.workload.as_deref().map_or_else(|| "-".to_string(), stem);
    let config = stem(&m.hw);
    let row = |method: &str, edp, latency_cycles, energy_pj| ReportRow {
        run: run.clone(),
        model: model.clone(),
        config: config.clone(),
        method: method.to_string(),
        edp,
        latency_cycles,
        energy_pj,
        latency_z: None,
        energy_z: None,
    };
    let comparison = dir.join(COMPARISON_FILE);
    if comparison.is_file() {
        let c: ComparisonReport = io::read_json(&comparison)?;
        return Ok(c.methods.iter().map(|r| row(&r.method, r.best_edp, r.latency_cycles, r.energy_pj)).collect());
    }
    let cost_path = dir.join(COST_FILE);
    if !cost_path.is_file() {
        bail!("{} has neither {COST_FILE} nor {COMPARISON_FILE}", dir.display());
    }
    let cost: CostReport = io::read_json(&cost_path)?;
    let method = match m.command.as_str() {
        "optimize" => "grad",
        other => other,
    };
    Ok(vec![row(method, cost.edp, cost.latency_cycles, cost.energy_pj)])
}

/// `(x - mean) / std` with the population standard deviation; all zeros when
/// the values are constant.
pub fn zscores(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    xs.iter().map(|x| if std > 0.0 { (x - mean) / std } else { 0.0 }).collect()
}

pub fn run(g: &GlobalArgs, runs: &[PathBuf], zscore: bool) -> Result<Exit> {
    if runs.is_empty() {
        bail!("no run directories given");
    }
    let mut rows = Vec::new();
    for dir in runs {
        rows.extend(rows_of(dir)?);
    }
    if zscore {
        let lat = zscores(&rows.iter().map(|r| r.latency_cycles).collect::<Vec<_>>());
        let en = zscores(&rows.iter().map(|r| r.energy_pj).collect::<Vec<_>>());
        for ((r, l), e) in rows.iter_mut().zip(lat).zip(en) {
            r.latency_z = Some(l);
            r.energy_z = Some(e);
        }
    }
    io::create_dir(&g.out)?;
    io::write_csv(&g.out.join(REPORT_FILE), &rows)?;
    let mut options = Map::new();
    options.insert("runs".into(), json!(runs.iter().map(|p| path_string(p)).collect::<Vec<_>>()));
    options.insert("zscore".into(), json!(zscore));
    manifest(g, "report", g.seed.unwrap_or(0), None, options).write(&g.out)?;
    println!("{} rows written to {}", rows.len(), g.out.join(REPORT_FILE).display());
    Ok(Exit::Success)
}
