//! Property tests: packing consistency between the replication allocator
//! and the core mapper, validity-map agreement with naive packing, and
//! network file round-trips.

use proptest::prelude::*;

use compass_core::cost_model::{CostOptions, Workload};
use compass_core::decomposer::{build_validity_map, decompose, DecomposedModel, PartitionUnit};
use compass_core::hw_model::builtin_chip;
use compass_core::network_ir::{
    network_from_str, LayerKind, LayerNode, NetworkGraph, PoolMode, TensorShape,
};
use compass_core::partitioner::{check_group_invariants, generate_random_group};

/// Naive first-fit-decreasing feasibility, local to the test.
fn fits(sizes: &[u32], cores: u32, cap: u32) -> bool {
    let mut sorted = sizes.to_vec();
    sorted.sort_by(|a, b| b.cmp(a));
    let mut load = vec![0u32; cores as usize];
    for s in sorted {
        match load.iter_mut().find(|l| **l + s <= cap) {
            Some(l) => *l += s,
            None => return false,
        }
    }
    true
}

/// Synthetic single-layer model with the given per-unit crossbar counts;
/// groups are runs of `group_len` units. Groups are atomic, so a group
/// that cannot pack the chip on its own makes the whole case infeasible
/// (real decomposition rejects such models up front).
fn synthetic(sizes: &[u32], group_len: usize, cores: u32, cap: u32) -> Option<DecomposedModel> {
    let mut units: Vec<PartitionUnit> = Vec::new();
    let mut group_spans = Vec::new();
    let mut i = 0;
    while i < sizes.len() {
        let start = units.len();
        let len = group_len.min(sizes.len() - i);
        for k in 0..len {
            let xbars = sizes[i + k].clamp(1, cap);
            let uid = units.len();
            units.push(PartitionUnit {
                uid,
                layer_id: 0,
                out_slice: (uid as u64, uid as u64 + 1),
                in_block: (0, 1),
                col_tiles: 1,
                row_tiles: xbars,
                crossbars_needed: xbars,
                weight_bits: 640,
                group_id: group_spans.len(),
                chans_per_tile: 1,
                weight_bits_per_element: 4,
            });
        }
        let group_sizes: Vec<u32> = units[start..].iter().map(|u| u.crossbars_needed).collect();
        if !fits(&group_sizes, cores, cap) {
            return None;
        }
        group_spans.push(start..units.len());
        i += len;
    }
    let m = units.len();
    let mut aligned = vec![false; m + 1];
    aligned[0] = true;
    aligned[m] = true;
    for s in &group_spans {
        aligned[s.end] = true;
    }
    Some(DecomposedModel {
        units,
        layer_ranges: vec![(0, 0..m)],
        group_spans,
        aligned,
    })
}

fn single_conv_graph() -> NetworkGraph {
    let nodes = vec![LayerNode {
        id: 0,
        kind: LayerKind::Conv {
            cin: 4,
            cout: 4,
            kh: 1,
            kw: 1,
            stride: 1,
            padding: 0,
        },
        weight_bits_per_element: 4,
        inputs: vec![],
    }];
    NetworkGraph::new("syn", TensorShape::new(4, 4, 4), nodes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: Some(Box::new(
            proptest::test_runner::FileFailurePersistence::Off,
        )),
        ..ProptestConfig::default()
    })]

    /// If the validity map accepts a span, finalization (replication then
    /// core mapping) never fails: the allocator only accepts packable
    /// states. This is the randomized counterexample search for packing
    /// disagreements.
    #[test]
    fn replication_accepts_only_mappable_states(
        sizes in prop::collection::vec(1u32..6, 1..24),
        group_len in 1usize..4,
        cores in 2u32..6,
        cap in 2u32..6,
        seed in 0u64..1000,
    ) {
        let Some(model) = synthetic(&sizes, group_len, cores, cap) else {
            return Ok(());
        };
        let mut chip = builtin_chip("S").unwrap();
        chip.num_cores = cores;
        chip.core.crossbars_per_core = cap;
        let graph = single_conv_graph();
        let vmap = build_validity_map(&model, &chip);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        // would panic on a packing disagreement
        let group = generate_random_group(&w, &vmap, seed);
        let bad = check_group_invariants(&group, &w, &vmap);
        prop_assert!(bad.is_empty(), "{bad:?}");
    }

    /// The validity map agrees with a naive per-span packing check.
    #[test]
    fn validity_agrees_with_naive_packing(
        sizes in prop::collection::vec(1u32..6, 1..20),
        cores in 2u32..5,
        cap in 2u32..6,
    ) {
        let Some(model) = synthetic(&sizes, 1, cores, cap) else {
            return Ok(());
        };
        let mut chip = builtin_chip("S").unwrap();
        chip.num_cores = cores;
        chip.core.crossbars_per_core = cap;
        let vmap = build_validity_map(&model, &chip);
        let m = model.len();
        for i in 0..m {
            for j in i + 1..=m {
                // naive check: sort desc, first fit
                let mut span: Vec<u32> = model.units[i..j]
                    .iter()
                    .map(|u| u.crossbars_needed)
                    .collect();
                span.sort_by(|a, b| b.cmp(a));
                let mut bins = vec![cap; cores as usize];
                let mut ok = true;
                for s in span {
                    match bins.iter_mut().find(|b| **b >= s) {
                        Some(b) => *b -= s,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                prop_assert_eq!(vmap.is_valid(i, j), ok, "span [{}, {})", i, j);
            }
        }
    }

    /// Serializing any chain-shaped network and loading it back yields an
    /// identical graph.
    #[test]
    fn network_file_round_trip(
        channels in prop::collection::vec(1usize..32, 1..6),
        spatial in 4usize..32,
        with_pool in any::<bool>(),
    ) {
        let mut nodes = Vec::new();
        let mut prev: Option<usize> = None;
        let mut cin = channels[0];
        for &cout in &channels {
            let id = nodes.len();
            nodes.push(LayerNode {
                id,
                kind: LayerKind::Conv { cin, cout, kh: 3, kw: 3, stride: 1, padding: 1 },
                weight_bits_per_element: 4,
                inputs: prev.into_iter().collect(),
            });
            prev = Some(id);
            cin = cout;
        }
        if with_pool && spatial >= 2 {
            let id = nodes.len();
            nodes.push(LayerNode {
                id,
                kind: LayerKind::Pool { window: 2, stride: 2, mode: PoolMode::Max, padding: 0 },
                weight_bits_per_element: 4,
                inputs: vec![prev.unwrap()],
            });
        }
        let graph = NetworkGraph::new(
            "prop",
            TensorShape::new(channels[0], spatial, spatial),
            nodes,
        )
        .unwrap();
        let text = graph.to_file_string();
        let back = network_from_str(&text).unwrap();
        prop_assert_eq!(graph, back);
    }

    /// Decomposition covers every mappable layer exactly, with dense uids
    /// and condition 1 satisfied, for arbitrary conv dimensions.
    #[test]
    fn decomposition_covers_layers(
        cin in 1usize..600,
        cout in 1usize..600,
        k in 1usize..4,
        chip_name in prop::sample::select(vec!["S", "M", "L"]),
    ) {
        let nodes = vec![LayerNode {
            id: 0,
            kind: LayerKind::Conv { cin, cout, kh: k, kw: k, stride: 1, padding: k / 2 },
            weight_bits_per_element: 4,
            inputs: vec![],
        }];
        let graph = NetworkGraph::new("d", TensorShape::new(cin, 8, 8), nodes).unwrap();
        let chip = builtin_chip(chip_name).unwrap();
        match decompose(&graph, &chip) {
            Ok(model) => {
                let bits: u64 = model.units.iter().map(|u| u.weight_bits).sum();
                prop_assert_eq!(bits, (cin * cout * k * k * 4) as u64);
                for u in &model.units {
                    prop_assert!(u.crossbars_needed <= chip.core.crossbars_per_core);
                }
                for (i, u) in model.units.iter().enumerate() {
                    prop_assert_eq!(u.uid, i);
                }
            }
            Err(e) => {
                // only legal failure: an accumulation group larger than the chip
                prop_assert!(
                    e.to_string().contains("accumulation group"),
                    "unexpected error {e}"
                );
            }
        }
    }
}
