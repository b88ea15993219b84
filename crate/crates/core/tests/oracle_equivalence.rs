use fusetile_core::autodiff::Plain;
use fusetile_core::config::{gemmini_large, gemmini_small, AcceleratorConfig, Dim, LayerDims, LayerNode, Role};
use fusetile_core::cost::{apply_consumer_boundary, apply_producer_boundary, node_traffic, TrafficKind};
use fusetile_core::evaluation::{loopnest_count, Boundary};
use fusetile_core::optimizer::NodeMapping;
use fusetile_core::relax::divisors_of;
use proptest::prelude::*;

/// Exact random split of `extent` into `parts` factors.
fn split(extent: u64, picks: &[usize]) -> Vec<u64> {
    let mut left = extent;
    let mut out = Vec::new();
    for &p in picks {
        let divs = divisors_of(left);
        let f = divs[p % divs.len()];
        out.push(f);
        left /= f;
    }
    out.push(left);
    out
}

fn mapping(layer: &LayerNode, cfg: &AcceleratorConfig, picks: &[Vec<usize>; 7]) -> NodeMapping {
    let dram = cfg.dram();
    let mut m = NodeMapping::untiled(&layer.id, &LayerDims::ONES, dram + 1);
    for d in Dim::ALL {
        let p = &picks[d.index()];
        let f = split(layer.dims.get(d), &p[..dram + 1]);
        for (lvl, &x) in f[..dram].iter().enumerate() {
            m.temporal[lvl].set(d, x);
        }
        if cfg.is_spatial(d) {
            m.spatial.set(d, f[dram]);
            m.temporal[dram].set(d, f[dram + 1]);
        } else {
            m.temporal[dram].set(d, f[dram] * f[dram + 1]);
        }
    }
    m
}

fn compare(layer: &LayerNode, cfg: &AcceleratorConfig, m: &NodeMapping, b: Boundary) -> Result<(), TestCaseError> {
    let oracle = loopnest_count(m, layer, cfg, b).unwrap();
    prop_assert_eq!(oracle.macs, layer.dims.ops());
    let mut t = node_traffic(&Plain, &layer.dims, &m.factors(), cfg);
    if b.fused_in {
        apply_consumer_boundary(&mut t, 1.0, cfg);
    }
    if b.fused_out {
        apply_producer_boundary(&mut t, 1.0, cfg);
    }
    for level in 0..cfg.num_levels() {
        for role in Role::ALL {
            for kind in TrafficKind::ALL {
                let closed = t.get(level, role, kind).unwrap_or(0.0);
                let counted = oracle.get(level, role, kind);
                prop_assert_eq!(closed, counted as f64, "L{} {:?} {:?} mapping {:?}", level, role, kind, m);
            }
        }
    }
    Ok(())
}

fn dims() -> impl Strategy<Value = [u64; 7]> {
    [1u64..=8, 1u64..=8, 1u64..=8, 1u64..=8, 1u64..=8, 1u64..=3, 1u64..=3]
}

fn picks() -> impl Strategy<Value = [Vec<usize>; 7]> {
    let one = || prop::collection::vec(0usize..8, 4);
    [one(), one(), one(), one(), one(), one(), one()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn counts_match_closed_forms(d in dims(), p in picks(), fi in any::<bool>(), fo in any::<bool>(), small in any::<bool>()) {
        let cfg = if small { gemmini_small() } else { gemmini_large() };
        let layer = LayerNode::conv("x", [d[0] % 3 + 1, d[1], d[2], d[3], d[4], d[5], d[6]]);
        let m = mapping(&layer, &cfg, &p);
        compare(&layer, &cfg, &m, Boundary { fused_in: fi, fused_out: fo })?;
    }
}

#[test]
fn identity_fill_is_tensor_size() {
    let cfg = gemmini_large();
    let layer = LayerNode::conv("id", [2, 3, 4, 2, 3, 2, 1]);
    let m = NodeMapping::untiled("id", &layer.dims, cfg.num_levels());
    let c = loopnest_count(&m, &layer, &cfg, Boundary::default()).unwrap();
    for role in [Role::I, Role::W] {
        assert_eq!(c.get(cfg.outer_level(role), role, TrafficKind::Fill), layer.dims.tensor_size(role));
    }
    assert_eq!(c.get(cfg.dram(), Role::O, TrafficKind::WriteBack), layer.dims.tensor_size(Role::O));
}
