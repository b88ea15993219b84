use fusetile_core::config::{
    AcceleratorConfig, AcceleratorSpec, Dim, LayerDims, LayerNode, MemoryLevel, Role, WorkloadGraph, WorkloadSpec,
};
use fusetile_core::evaluation::exhaustive::space_size;
use fusetile_core::evaluation::exhaustive_best;
use fusetile_core::optimizer::{exact_cost, DeploymentStrategy, NodeMapping};

fn level(index: usize, cap: Option<u64>, bw: f64, epa: f64, roles: &[Role]) -> MemoryLevel {
    MemoryLevel { index, capacity_words: cap, bandwidth_words_per_cycle: bw, epa_pj_per_word: epa, resident_roles: roles.to_vec() }
}

fn tiny_hw(l0: u64, l1: u64) -> AcceleratorConfig {
    AcceleratorConfig::from_spec(AcceleratorSpec {
        pe_count: 16,
        energy_per_op_pj: 0.2,
        spatial_level: 0,
        levels: vec![
            level(0, Some(l0), 32.0, 0.05, &[Role::I, Role::W]),
            level(1, Some(l1), 8.0, 1.0, &[Role::I, Role::W, Role::O]),
            level(2, None, 2.0, 50.0, &[Role::I, Role::W, Role::O]),
        ],
        spatial_dims: vec![Dim::K, Dim::C],
        count_output_residency: false,
    })
    .unwrap()
}

/// Every factor choice per slot, written independently of the library.
fn per_dim_choices(extent: u64, slots: usize) -> Vec<Vec<u64>> {
    let divs: Vec<u64> = (1..=extent).filter(|d| extent % d == 0).collect();
    let mut out: Vec<Vec<u64>> = vec![vec![]];
    for _ in 0..slots {
        out = out
            .into_iter()
            .flat_map(|t| divs.iter().map(move |&d| [t.clone(), vec![d]].concat()))
            .filter(|t| t.iter().product::<u64>() <= extent)
            .collect();
    }
    out
}

fn node_mappings(node: &LayerNode, cfg: &AcceleratorConfig) -> Vec<NodeMapping> {
    let dram = cfg.dram();
    let mut maps = vec![NodeMapping::untiled(&node.id, &LayerDims::ONES, dram + 1)];
    for d in Dim::ALL {
        let spatial = cfg.is_spatial(d);
        let extent = node.dims.get(d);
        let choices = per_dim_choices(extent, dram + spatial as usize);
        maps = maps
            .into_iter()
            .flat_map(|m| {
                choices.iter().map(move |c| {
                    let mut m = m.clone();
                    for lvl in 0..dram {
                        m.temporal[lvl].set(d, c[lvl]);
                    }
                    if spatial {
                        m.spatial.set(d, c[dram]);
                    }
                    let inner: u64 = c.iter().product();
                    m.temporal[dram].set(d, extent.div_ceil(inner));
                    m
                })
            })
            .collect();
    }
    maps
}

fn brute_force(graph: &WorkloadGraph, cfg: &AcceleratorConfig) -> f64 {
    let per_node: Vec<Vec<NodeMapping>> = graph.nodes().iter().map(|n| node_mappings(n, cfg)).collect();
    let edges = graph.eligible_edges().len();
    let mut best = f64::INFINITY;
    let mut pick = vec![0usize; per_node.len()];
    loop {
        let nodes: Vec<NodeMapping> = pick.iter().zip(&per_node).map(|(&i, l)| l[i].clone()).collect();
        for mask in 0..1u32 << edges {
            let fused: Vec<bool> = (0..edges).map(|e| mask >> e & 1 == 1).collect();
            let s = DeploymentStrategy::new(graph, cfg, nodes.clone(), &fused, &[]);
            if s.is_feasible() {
                best = best.min(exact_cost(&s, graph, cfg).edp);
            }
        }
        let mut k = 0;
        loop {
            if k == pick.len() {
                return best;
            }
            pick[k] += 1;
            if pick[k] < per_node[k].len() {
                break;
            }
            pick[k] = 0;
            k += 1;
        }
    }
}

fn chain(a: [u64; 7], b: [u64; 7]) -> WorkloadGraph {
    WorkloadGraph::from_spec(WorkloadSpec {
        nodes: vec![LayerNode::conv("a", a), LayerNode::conv("b", b)],
        edges: vec![("a".into(), "b".into())],
    })
    .unwrap()
}

fn check(graph: &WorkloadGraph, cfg: &AcceleratorConfig) -> f64 {
    let r = exhaustive_best(graph, cfg, 10_000_000).unwrap();
    assert!(r.strategy.is_feasible(), "{:?}", r.strategy.validity);
    let truth = brute_force(graph, cfg);
    assert!((r.edp - truth).abs() <= 1e-12 * truth, "dp {} brute {}", r.edp, truth);
    r.edp
}

#[test]
fn single_layer_matches_brute_force() {
    let g = WorkloadGraph::single(LayerNode::conv("x", [1, 4, 4, 4, 4, 1, 1])).unwrap();
    check(&g, &tiny_hw(16, 96));
    check(&g, &tiny_hw(64, 4096));
}

#[test]
fn fused_chain_matches_brute_force() {
    let g = chain([1, 4, 2, 2, 2, 1, 1], [1, 2, 4, 2, 2, 1, 1]);
    for (l0, l1) in [(4, 12), (8, 40), (64, 4096)] {
        check(&g, &tiny_hw(l0, l1));
    }
}

#[test]
fn uneven_extents_match_brute_force() {
    let g = chain([1, 6, 3, 2, 1, 1, 1], [2, 3, 6, 2, 1, 1, 1]);
    check(&g, &tiny_hw(6, 30));
}

#[test]
fn joint_size_counts_fusion_bits() {
    let g = chain([1, 2, 1, 1, 1, 1, 1], [1, 1, 2, 1, 1, 1, 1]);
    let cfg = tiny_hw(16, 96);
    // K = 2 over (L0, L1, spatial): 4 tuples; likewise C for the consumer.
    assert_eq!(space_size(&g, &cfg), (8, 32));
}
