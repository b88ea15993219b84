use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fusetile::commands::{ComparisonReport, OracleReport, Reference};
use fusetile::io::{load_hardware, load_workload, read_json};
use fusetile::RunManifest;
use fusetile_core::evaluation::{exhaustive_best, SPACE_LIMIT};
use fusetile_core::optimizer::DeploymentStrategy;
use tempfile::TempDir;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn workload(name: &str) -> String {
    root().join("workloads").join(name).display().to_string()
}

fn fusetile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusetile")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn out_dir(tmp: &TempDir, name: &str) -> String {
    tmp.path().join(name).display().to_string()
}

#[test]
fn optimize_writes_four_files() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "run1");
    let o = fusetile(&["optimize", "--workload", &workload("conv_small.json"), "--hw", "gemmini-large", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut files: Vec<String> =
        fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    files.sort();
    assert_eq!(files, ["cost.json", "manifest.json", "strategy.json", "trace.csv"]);
    let s: DeploymentStrategy = read_json(&Path::new(&out).join("strategy.json")).unwrap();
    assert!(s.validity.feasible);
    let trace = fs::read_to_string(Path::new(&out).join("trace.csv")).unwrap();
    assert!(trace.starts_with("restart,step,edp,p_map,p_mem,p_align,tau,lambda,loss\n"));
    // Default config: 8 restarts of 500 steps.
    assert_eq!(trace.lines().count(), 1 + 8 * 500);
}

#[test]
fn optimize_is_deterministic_under_a_seed() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (out_dir(&tmp, "a"), out_dir(&tmp, "b"));
    for out in [&a, &b] {
        let o = fusetile(&["optimize", "--workload", &workload("fusion_pair.json"), "--seed", "7", "--out", out]);
        assert_eq!(code(&o), 0);
    }
    for f in ["strategy.json", "cost.json", "trace.csv"] {
        let x = fs::read(Path::new(&a).join(f)).unwrap();
        let y = fs::read(Path::new(&b).join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
}

#[test]
fn manifest_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("opt.json");
    fs::write(&cfg, r#"{"steps": 120, "restarts": 3, "seed": 11}"#).unwrap();
    let first = out_dir(&tmp, "first");
    let o = fusetile(&[
        "optimize",
        "--workload",
        &workload("tiny/chain_0.json"),
        "--hw",
        &workload("tiny/hw.json"),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        &first,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = RunManifest::read(Path::new(&first)).unwrap();
    assert_eq!(m.command, "optimize");
    assert_eq!(m.seed, 11);
    let second = out_dir(&tmp, "second");
    let o = fusetile(&[
        &m.command,
        "--workload",
        m.workload.as_deref().unwrap(),
        "--hw",
        &m.hw,
        "--config",
        m.optimizer_config.as_deref().unwrap(),
        "--seed",
        &m.seed.to_string(),
        "--out",
        &second,
    ]);
    assert_eq!(code(&o), 0);
    for f in ["strategy.json", "cost.json", "trace.csv"] {
        assert_eq!(fs::read(Path::new(&first).join(f)).unwrap(), fs::read(Path::new(&second).join(f)).unwrap());
    }
}

#[test]
fn missing_workload_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let o = fusetile(&["optimize", "--workload", "no/such/file.json", "--out", &out_dir(&tmp, "x")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no/such/file.json"), "{}", stderr(&o));
}

#[test]
fn input_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "x");
    let w = workload("conv_small.json");
    for args in [
        vec!["optimize", "--out", &out],
        vec!["optimize", "--workload", &w, "--hw", "tpu-v9", "--out", &out],
        vec!["frobnicate"],
        vec!["optimize", "--workload", &w, "--seed", "minus-one"],
        vec!["baseline", "--workload", &w, "--budget", "0", "--out", &out],
        vec!["baseline", "--workload", &w, "--methods", "grad,annealing", "--out", &out],
    ] {
        let o = fusetile(&args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
    }
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"nodes": [{"id": "x", "kind": "CONV", "dims": {"n": 0, "k": 1, "c": 1, "p": 1, "q": 1, "r": 1, "s": 1}}]}"#)
        .unwrap();
    let o = fusetile(&["optimize", "--workload", bad.to_str().unwrap(), "--out", &out]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("extent"), "{}", stderr(&o));
    let cfg = tmp.path().join("opt.json");
    fs::write(&cfg, r#"{"steps": 0}"#).unwrap();
    let o = fusetile(&["optimize", "--workload", &w, "--config", cfg.to_str().unwrap(), "--out", &out]);
    assert_eq!(code(&o), 1);
}

#[test]
fn infeasible_best_effort_exits_two() {
    let tmp = TempDir::new().unwrap();
    // One word of register space cannot hold an input and a weight.
    let hw = tmp.path().join("hw.json");
    fs::write(
        &hw,
        r#"{"pe_count": 4, "energy_per_op_pj": 1.0, "spatial_level": 0, "levels": [
            {"index": 0, "capacity_words": 1, "bandwidth_words_per_cycle": 4.0, "epa_pj_per_word": 0.1, "resident_roles": ["I", "W", "O"]},
            {"index": 1, "capacity_words": null, "bandwidth_words_per_cycle": 1.0, "epa_pj_per_word": 10.0, "resident_roles": ["I", "W", "O"]}]}"#,
    )
    .unwrap();
    let cfg = tmp.path().join("opt.json");
    fs::write(&cfg, r#"{"steps": 50, "restarts": 2}"#).unwrap();
    let out = out_dir(&tmp, "x");
    let o = fusetile(&[
        "optimize",
        "--workload",
        &workload("tiny/single_0.json"),
        "--hw",
        hw.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let s: DeploymentStrategy = read_json(&Path::new(&out).join("strategy.json")).unwrap();
    assert!(!s.validity.feasible);
    assert!(stderr(&o).contains("capacity"));
}

#[test]
fn oracle_check_default_samples_match() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "oc");
    let o = fusetile(&["oracle-check", "--workload", &workload("fusion_pair.json"), "--hw", "gemmini-small", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: OracleReport = read_json(&Path::new(&out).join("oracle_report.json")).unwrap();
    assert_eq!(r.samples, 100);
    assert_eq!(r.rows.len(), 100);
    assert_eq!(r.match_rate, 1.0);
    assert_eq!(r.quantities.len(), 4);
    assert!(r.rows.iter().any(|row| row.fused_edges > 0));
}

#[test]
fn oracle_check_single_sample() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "oc");
    let o = fusetile(&["oracle-check", "--workload", &workload("conv_small.json"), "--samples", "1", "--out", &out]);
    assert_eq!(code(&o), 0);
    let r: OracleReport = read_json(&Path::new(&out).join("oracle_report.json")).unwrap();
    assert_eq!(r.rows.len(), 1);
}

#[test]
fn oracle_check_reports_injected_fault() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "oc");
    let o = fusetile(&["oracle-check", "--workload", &workload("fusion_pair.json"), "--samples", "4", "--inject-fault", "--out", &out]);
    assert_eq!(code(&o), 2);
    let r: OracleReport = read_json(&Path::new(&out).join("oracle_report.json")).unwrap();
    assert!(r.match_rate < 1.0);
    assert_eq!(r.quantities["fill"].matched + 4, r.quantities["fill"].compared);
    assert_eq!(r.quantities["read"].match_rate, 1.0);
    for row in &r.rows {
        assert_eq!(row.mismatches.len(), 1);
        let m = &row.mismatches[0];
        assert_eq!((m.node.as_str(), m.level, m.closed_form), ("a", 2, m.oracle as f64 + 1.0));
    }
    assert!(stderr(&o).contains("node `a` L2 W fill"));
}

#[test]
fn oracle_guard_exits_one() {
    let tmp = TempDir::new().unwrap();
    let o = fusetile(&["oracle-check", "--workload", &workload("ffn_gemm.json"), "--samples", "1", "--out", &out_dir(&tmp, "x")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("oracle limit"));
}

#[test]
fn exhaustive_reference_matches_library() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "ex");
    let (w, hw) = (workload("tiny/chain_1.json"), workload("tiny/hw.json"));
    let o = fusetile(&["exhaustive", "--workload", &w, "--hw", &hw, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Reference = read_json(&Path::new(&out).join("reference.json")).unwrap();
    let lib = exhaustive_best(&load_workload(Path::new(&w)).unwrap(), &load_hardware(&hw).unwrap(), SPACE_LIMIT).unwrap();
    assert_eq!(r.edp, lib.edp);
    assert_eq!(r.strategy, lib.strategy);
    assert!(Path::new(&out).join("cost.json").is_file());
}

#[test]
fn exhaustive_guard_exits_one() {
    let tmp = TempDir::new().unwrap();
    let o = fusetile(&["exhaustive", "--workload", &workload("conv_mid.json"), "--out", &out_dir(&tmp, "x")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("exceeds the limit"));
}

#[test]
fn baseline_rows_and_curves() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "bl");
    let o = fusetile(&[
        "baseline",
        "--workload",
        &workload("tiny/single_3.json"),
        "--hw",
        &workload("tiny/hw.json"),
        "--methods",
        "grad,ga,random",
        "--budget",
        "300",
        "--repeats",
        "3",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = Path::new(&out);
    let r: ComparisonReport = read_json(&dir.join("comparison.json")).unwrap();
    let names: Vec<&str> = r.methods.iter().map(|m| m.method.as_str()).collect();
    assert_eq!(names, ["grad", "ga", "random"]);
    for m in &r.methods {
        assert_eq!(m.evaluations_used, 300);
        assert_eq!(m.seeds.len(), 3);
        let mut edps: Vec<f64> = m.seeds.iter().map(|s| s.best_edp).collect();
        edps.sort_by(f64::total_cmp);
        assert_eq!(m.best_edp, edps[1]);
        let trace = fs::read_to_string(dir.join(&m.trace_path)).unwrap();
        let rows: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(rows.len(), 300);
        assert!(rows.windows(2).all(|w| w[1] <= w[0]));
    }
    let table = fs::read_to_string(dir.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    let conv = fs::read_to_string(dir.join("convergence.csv")).unwrap();
    assert_eq!(conv.lines().next().unwrap(), "evaluation_index,grad,ga,random");
    assert_eq!(conv.lines().count(), 301);
}

#[test]
fn report_merges_runs() {
    let tmp = TempDir::new().unwrap();
    let (hw, cfg) = (workload("tiny/hw.json"), tmp.path().join("opt.json"));
    fs::write(&cfg, r#"{"steps": 60, "restarts": 2}"#).unwrap();
    let (a, b) = (out_dir(&tmp, "a"), out_dir(&tmp, "b"));
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&fusetile(&["optimize", "--workload", &workload("tiny/single_0.json"), "--hw", &hw, "--config", cfg, "--out", &a])), 0);
    assert_eq!(code(&fusetile(&["exhaustive", "--workload", &workload("tiny/single_1.json"), "--hw", &hw, "--out", &b])), 0);

    let rep = out_dir(&tmp, "rep");
    assert_eq!(code(&fusetile(&["report", &a, &b, "--out", &rep])), 0);
    let csv = fs::read_to_string(Path::new(&rep).join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "run,model,config,method,edp,latency_cycles,energy_pj");
    assert!(lines[1].contains(",single_0,hw,grad,"));
    assert!(lines[2].contains(",single_1,hw,exhaustive,"));

    let rep = out_dir(&tmp, "repz");
    assert_eq!(code(&fusetile(&["report", &a, &b, "--zscore", "--out", &rep])), 0);
    let mut rd = csv::Reader::from_path(Path::new(&rep).join("report.csv")).unwrap();
    let headers = rd.headers().unwrap().clone();
    assert_eq!(&headers[7], "latency_z");
    assert_eq!(&headers[8], "energy_z");
    let z: Vec<f64> = rd.records().map(|r| r.unwrap()[7].parse().unwrap()).collect();
    // Two distinct values standardize to -1 and 1.
    let mut sorted = z.clone();
    sorted.sort_by(f64::total_cmp);
    assert!(sorted == [-1.0, 1.0] || sorted == [0.0, 0.0], "{z:?}");
}

#[test]
fn report_input_errors() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&fusetile(&["report", "--out", &out_dir(&tmp, "r")])), 1);
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = fusetile(&["report", empty.to_str().unwrap(), "--out", &out_dir(&tmp, "r")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("not a run directory"));
}
