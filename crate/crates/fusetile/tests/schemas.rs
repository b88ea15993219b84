//! Every JSON the tool reads or writes validates against docs/schemas.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Replace `{"$ref": "x.schema.json"}` by the referenced schema.
fn inline(v: &mut Value, dir: &Path) {
    match v {
        Value::Object(map) => {
            if let Some(Value::String(r)) = map.get("$ref") {
                let mut target = load(&dir.join(r));
                let obj = target.as_object_mut().unwrap();
                obj.remove("$id");
                obj.remove("$schema");
                *v = target;
                inline(v, dir);
                return;
            }
            map.values_mut().for_each(|x| inline(x, dir));
        }
        Value::Array(items) => items.iter_mut().for_each(|x| inline(x, dir)),
        _ => {}
    }
}

fn check(schema: &str, instance: &Path) {
    let dir = root().join("docs/schemas");
    let mut s = load(&dir.join(format!("{schema}.schema.json")));
    inline(&mut s, &dir);
    let validator = jsonschema::validator_for(&s).unwrap_or_else(|e| panic!("{schema} schema: {e}"));
    let doc = load(instance);
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{} against {schema}: {errors:#?}", instance.display());
}

fn fusetile(args: &[&str]) -> i32 {
    let o = Command::new(env!("CARGO_BIN_EXE_fusetile")).args(args).output().unwrap();
    o.status.code().unwrap()
}

#[test]
fn bundled_inputs_validate() {
    let dir = root().join("workloads");
    let mut n = 0;
    let mut stack = vec![dir];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let schema = match p.file_name().unwrap().to_str().unwrap() {
                "hw.json" => "accelerator",
                "optimizer.json" => "optimizer_config",
                _ => "workload",
            };
            check(schema, &p);
            n += 1;
        }
    }
    assert!(n >= 10);
}

#[test]
fn command_outputs_validate() {
    let tmp = TempDir::new().unwrap();
    let w = |name: &str| root().join("workloads").join(name).display().to_string();
    let out = |name: &str| tmp.path().join(name);
    let s = |p: PathBuf| p.display().to_string();
    let (hw, tiny_chain) = (w("tiny/hw.json"), w("tiny/chain_0.json"));

    assert_eq!(fusetile(&["optimize", "--workload", &w("resnet_block.json"), "--config", &w("optimizer.json"), "--out", &s(out("opt"))]), 0);
    check("strategy", &out("opt").join("strategy.json"));
    check("cost", &out("opt").join("cost.json"));
    check("manifest", &out("opt").join("manifest.json"));

    assert_eq!(fusetile(&["oracle-check", "--workload", &tiny_chain, "--hw", &hw, "--samples", "5", "--inject-fault", "--out", &s(out("oc"))]), 2);
    check("oracle_report", &out("oc").join("oracle_report.json"));
    check("manifest", &out("oc").join("manifest.json"));

    assert_eq!(fusetile(&["exhaustive", "--workload", &tiny_chain, "--hw", &hw, "--out", &s(out("ex"))]), 0);
    check("reference", &out("ex").join("reference.json"));
    check("strategy", &out("ex").join("strategy.json"));
    check("cost", &out("ex").join("cost.json"));

    assert_eq!(fusetile(&["baseline", "--workload", &tiny_chain, "--hw", &hw, "--budget", "200", "--out", &s(out("bl"))]), 0);
    check("comparison", &out("bl").join("comparison.json"));

    assert_eq!(fusetile(&["report", &s(out("opt")), &s(out("bl")), "--out", &s(out("rep"))]), 0);
    check("manifest", &out("rep").join("manifest.json"));
}

#[test]
fn infeasible_strategy_validates() {
    let tmp = TempDir::new().unwrap();
    let hw = tmp.path().join("hw.json");
    fs::write(
        &hw,
        r#"{"pe_count": 4, "energy_per_op_pj": 1.0, "spatial_level": 0, "levels": [
            {"index": 0, "capacity_words": 1, "bandwidth_words_per_cycle": 4.0, "epa_pj_per_word": 0.1, "resident_roles": ["I", "W", "O"]},
            {"index": 1, "capacity_words": null, "bandwidth_words_per_cycle": 1.0, "epa_pj_per_word": 10.0, "resident_roles": ["I", "W", "O"]}]}"#,
    )
    .unwrap();
    check("accelerator", &hw);
    let out = tmp.path().join("x");
    let w = root().join("workloads/tiny/chain_1.json");
    let code = fusetile(&["optimize", "--workload", w.to_str().unwrap(), "--hw", hw.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    check("strategy", &out.join("strategy.json"));
}

#[test]
fn default_optimizer_config_validates() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path().join("optimizer.json");
    fs::write(&p, serde_json::to_string(&fusetile_core::optimizer::OptimizerConfig::default()).unwrap()).unwrap();
    check("optimizer_config", &p);
}
