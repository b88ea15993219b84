use std::collections::BTreeMap;

use anyhow::Result;
use fusetile_core::autodiff::Plain;
use fusetile_core::config::{AcceleratorConfig, Dim, LayerDims, Role, WorkloadGraph};
use fusetile_core::cost::{graph_traffic, TrafficKind};
use fusetile_core::evaluation::strategy_counts;
use fusetile_core::optimizer::{DeploymentStrategy, NodeMapping};
use fusetile_core::relax::divisors_of;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use super::{manifest, path_string, Inputs, ORACLE_FILE};
use crate::cli::{Exit, GlobalArgs};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub node: String,
    pub level: usize,
    pub role: Role,
    pub kind: TrafficKind,
    pub closed_form: f64,
    pub oracle: u64,
}

/// One sampled strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample: u64,
    pub compared: u64,
    pub matched: u64,
    pub fused_edges: usize,
    pub mismatches: Vec<Mismatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantityRate {
    pub compared: u64,
    pub matched: u64,
    pub match_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub workload: String,
    pub hw: String,
    pub samples: u64,
    pub compared: u64,
    pub matched: u64,
    pub match_rate: f64,
    /// Keyed by traffic kind.
    pub quantities: BTreeMap<String, QuantityRate>,
    pub rows: Vec<SampleRow>,
}

fn rate(matched: u64, compared: u64) -> f64 {
    if compared == 0 {
        1.0
    } else {
        matched as f64 / compared as f64
    }
}

/// Exact factorization of every extent over the node's slots, in a random
/// slot order, with the remainder in DRAM.
fn sample_mapping(id: &str, dims: &LayerDims, cfg: &AcceleratorConfig, rng: &mut ChaCha8Rng) -> NodeMapping {
    let dram = cfg.dram();
    let mut m = NodeMapping { id: id.to_string(), temporal: vec![LayerDims::ONES; dram + 1], spatial: LayerDims::ONES };
    for d in Dim::ALL {
        // `None` is the spatial slot.
        let mut slots: Vec<Option<usize>> = (0..dram).map(Some).collect();
        if cfg.is_spatial(d) {
            slots.push(None);
        }
        slots.shuffle(rng);
        let mut left = dims.get(d);
        for slot in slots {
            let divs = divisors_of(left);
            let f = divs[rng.random_range(0..divs.len())];
            left /= f;
            match slot {
                Some(lvl) => m.temporal[lvl].set(d, f),
                None => m.spatial.set(d, f),
            }
        }
        m.temporal[dram].set(d, left);
    }
    m
}

fn sample_strategy(graph: &WorkloadGraph, cfg: &AcceleratorConfig, rng: &mut ChaCha8Rng) -> DeploymentStrategy {
    let nodes = graph.nodes().iter().map(|n| sample_mapping(&n.id, &n.dims, cfg, rng)).collect();
    let fused: Vec<bool> = graph.eligible_edges().iter().map(|_| rng.random_bool(0.5)).collect();
    let sigma: Vec<f64> = fused.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    DeploymentStrategy::new(graph, cfg, nodes, &fused, &sigma)
}

pub fn run(g: &GlobalArgs, samples: u64, inject_fault: bool) -> Result<Exit> {
    let inputs = Inputs::load(g)?;
    let (graph, cfg) = (&inputs.graph, &inputs.cfg);
    let seed = g.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut quantities: BTreeMap<String, QuantityRate> = TrafficKind::ALL
        .iter()
        .map(|k| (k.name().to_string(), QuantityRate { compared: 0, matched: 0, match_rate: 1.0 }))
        .collect();
    let mut rows = Vec::with_capacity(samples as usize);
    for sample in 0..samples {
        let strategy = sample_strategy(graph, cfg, &mut rng);
        let counts = strategy_counts(&strategy, graph, cfg)?;
        let bits = strategy.fused_bits(graph);
        let sigma: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let mut tables = graph_traffic(&Plain, graph, &strategy.factors(), &sigma, cfg);
        if inject_fault {
            let lvl = cfg.outer_level(Role::W);
            let t = &mut tables[0];
            let v = t.value(lvl, Role::W, TrafficKind::Fill);
            t.set(lvl, Role::W, TrafficKind::Fill, v + 1.0);
        }
        let mut row =
            SampleRow { sample, compared: 0, matched: 0, fused_edges: bits.iter().filter(|&&b| b).count(), mismatches: Vec::new() };
        for ((node, table), oracle) in graph.nodes().iter().zip(&tables).zip(&counts) {
            for level in 0..cfg.num_levels() {
                for role in Role::ALL {
                    for kind in TrafficKind::ALL {
                        let closed_form = table.value(level, role, kind);
                        let exact = oracle.get(level, role, kind);
                        let q = quantities.get_mut(kind.name()).expect("all kinds present");
                        q.compared += 1;
                        row.compared += 1;
                        if closed_form == exact as f64 {
                            q.matched += 1;
                            row.matched += 1;
                        } else {
                            row.mismatches.push(Mismatch {
                                node: node.id.clone(),
                                level,
                                role,
                                kind,
                                closed_form,
                                oracle: exact,
                            });
                        }
                    }
                }
            }
        }
        rows.push(row);
    }
    for q in quantities.values_mut() {
        q.match_rate = rate(q.matched, q.compared);
    }
    let compared: u64 = rows.iter().map(|r| r.compared).sum();
    let matched: u64 = rows.iter().map(|r| r.matched).sum();
    let report = OracleReport {
        workload: path_string(&inputs.workload),
        hw: g.hw.clone(),
        samples,
        compared,
        matched,
        match_rate: rate(matched, compared),
        quantities,
        rows,
    };

    io::create_dir(&g.out)?;
    io::write_json(&g.out.join(ORACLE_FILE), &report)?;
    let mut options = Map::new();
    options.insert("samples".into(), json!(samples));
    if inject_fault {
        options.insert("inject_fault".into(), json!(true));
    }
    manifest(g, "oracle-check", seed, None, options).write(&g.out)?;

    println!("{matched}/{compared} counts match ({:.4}%)", 100.0 * report.match_rate);
    if matched == compared {
        return Ok(Exit::Success);
    }
    for m in report.rows.iter().flat_map(|r| &r.mismatches).take(10) {
        eprintln!(
            "mismatch: node `{}` L{} {} {}: closed form {} vs loop nest {}",
            m.node, m.level, m.role, m.kind, m.closed_form, m.oracle
        );
    }
    Ok(Exit::Infeasible)
}
