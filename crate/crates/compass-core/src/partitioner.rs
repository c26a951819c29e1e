//! Partition groups over the decomposed model: random/greedy/layerwise
//! generation, aux-layer attachment, DRAM entry/exit markers, weight
//! replication and core mapping.
//!
//! All generators are deterministic given (model, chip, seed) and every
//! produced group satisfies the partition-group invariant suite (see
//! [`check_group_invariants`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cost_model::{stage_time, Workload};
use crate::decomposer::{ffd_place, DecomposedModel, ValidityMap};
use crate::error::{Error, Result};
use crate::network_ir::NodeId;

/// A tensor travelling through global memory: a node's output or the
/// external model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TensorId {
    ExternalInput,
    Node(NodeId),
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorId::ExternalInput => write!(f, "input"),
            TensorId::Node(id) => write!(f, "n{id}"),
        }
    }
}

impl Serialize for TensorId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A LOAD (entry) or STORE (exit) obligation of one partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IoMarker {
    pub tensor: TensorId,
    pub bytes_per_sample: u64,
}

/// Where one replica of one unit landed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub uid: usize,
    pub replica: u32,
    pub core: u32,
    pub xbar_start: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub index: usize,
    /// Half-open, group-aligned uid span.
    pub span: Range<usize>,
    /// Replication count per layer; shared by all units of the layer in
    /// this partition.
    pub replication: BTreeMap<NodeId, u32>,
    pub attached_aux: Vec<NodeId>,
    pub entries: Vec<IoMarker>,
    pub exits: Vec<IoMarker>,
    pub core_map: Vec<Placement>,
}

impl Partition {
    fn fresh(index: usize, span: Range<usize>, model: &DecomposedModel) -> Partition {
        let replication = model.layers_in(&span).into_iter().map(|l| (l, 1)).collect();
        Partition {
            index,
            span,
            replication,
            attached_aux: Vec::new(),
            entries: Vec::new(),
            exits: Vec::new(),
            core_map: Vec::new(),
        }
    }

    pub fn entry_bytes_per_sample(&self) -> u64 {
        self.entries.iter().map(|m| m.bytes_per_sample).sum()
    }

    pub fn exit_bytes_per_sample(&self) -> u64 {
        self.exits.iter().map(|m| m.bytes_per_sample).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionGroup {
    pub partitions: Vec<Partition>,
}

impl PartitionGroup {
    pub fn spans(&self) -> Vec<Range<usize>> {
        self.partitions.iter().map(|p| p.span.clone()).collect()
    }

    pub fn partition_of_unit(&self, uid: usize) -> usize {
        self.partitions
            .iter()
            .position(|p| p.span.contains(&uid))
            .expect("unit covered by some partition")
    }

    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }
}

/// Unit instances of a partition in canonical order: accumulation groups
/// by uid, replicas within a group, units within a replica. Keeping a
/// group replica's siblings adjacent lets the packer co-locate them.
pub fn instances(p: &Partition, model: &DecomposedModel) -> Vec<(usize, u32)> {
    let mut out = Vec::new();
    let mut gid_seen = BTreeSet::new();
    for unit in &model.units[p.span.clone()] {
        if !gid_seen.insert(unit.group_id) {
            continue;
        }
        let span = &model.group_spans[unit.group_id];
        let r = p.replication[&unit.layer_id];
        for replica in 0..r {
            for uid in span.clone() {
                out.push((uid, replica));
            }
        }
    }
    out
}

fn pack_instances(w: &Workload, items: &[(usize, u32)]) -> Option<Vec<Placement>> {
    let sizes: Vec<u32> = items
        .iter()
        .map(|&(uid, _)| w.model.units[uid].crossbars_needed)
        .collect();
    let placed = ffd_place(
        &sizes,
        w.chip.num_cores,
        w.chip.core.crossbars_per_core,
    )?;
    Some(
        items
            .iter()
            .zip(placed)
            .map(|(&(uid, replica), (core, xbar_start))| Placement {
                uid,
                replica,
                core,
                xbar_start,
            })
            .collect(),
    )
}

/// Boundaries drawn uniformly from the group-aligned positions in
/// `(start, max_end[start]]`, repeated until the model is covered, then
/// finalized.
pub fn generate_random_group(w: &Workload, vmap: &ValidityMap, seed: u64) -> PartitionGroup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spans = random_walk(w.model, vmap, &mut rng, 0, w.model.len());
    finalize_group(w, spans)
}

/// Random group-aligned cover of `[start, target)`; every step lands in
/// `(s, min(max_end[s], target)]` so progress and validity are guaranteed.
pub(crate) fn random_walk(
    model: &DecomposedModel,
    vmap: &ValidityMap,
    rng: &mut impl Rng,
    start: usize,
    target: usize,
) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut s = start;
    while s < target {
        let hi = vmap.max_end(s).min(target);
        let choices = model.aligned_in(s, hi);
        debug_assert!(!choices.is_empty(), "validity map guarantees progress");
        let j = choices[rng.gen_range(0..choices.len())];
        spans.push(s..j);
        s = j;
    }
    spans
}

/// Always take the largest group-aligned valid end.
pub fn greedy_group(w: &Workload, vmap: &ValidityMap) -> PartitionGroup {
    let mut spans = Vec::new();
    let mut s = 0;
    while s < w.model.len() {
        let j = vmap.max_end(s);
        debug_assert!(j > s);
        spans.push(s..j);
        s = j;
    }
    finalize_group(w, spans)
}

/// One partition per Conv/Linear layer. A layer whose units exceed the
/// chip splits greedily at group-aligned sub-boundaries.
pub fn layerwise_group(w: &Workload, vmap: &ValidityMap) -> PartitionGroup {
    let mut spans = Vec::new();
    for (_, range) in &w.model.layer_ranges {
        if vmap.is_valid(range.start, range.end) {
            spans.push(range.clone());
            continue;
        }
        let mut s = range.start;
        while s < range.end {
            let j = vmap.max_end(s).min(range.end);
            debug_assert!(j > s);
            spans.push(s..j);
            s = j;
        }
    }
    finalize_group(w, spans)
}

/// Build partitions over fixed spans and run the full finalize pipeline:
/// aux attachment, io markers, replication, core mapping.
pub fn finalize_group(w: &Workload, spans: Vec<Range<usize>>) -> PartitionGroup {
    let partitions = spans
        .into_iter()
        .enumerate()
        .map(|(index, span)| Partition::fresh(index, span, w.model))
        .collect();
    let mut group = PartitionGroup { partitions };
    attach_aux_layers(&mut group, w);
    mark_io(&mut group, w);
    for p in &mut group.partitions {
        allocate_replication(p, w);
        map_cores(p, w).expect("replication allocator accepted an unpackable state");
    }
    group
}

/// Partition where a node's output is complete: for a mappable layer the
/// partition of its last unit, for an attached aux node its home.
fn node_home(group: &PartitionGroup, w: &Workload) -> BTreeMap<NodeId, usize> {
    let mut home = BTreeMap::new();
    let mut aux_home: BTreeMap<NodeId, usize> = BTreeMap::new();
    for (idx, p) in group.partitions.iter().enumerate() {
        for &aux in &p.attached_aux {
            aux_home.insert(aux, idx);
        }
    }
    for node in w.graph.nodes() {
        if node.kind.is_mappable() {
            let range = w.model.layer_range(node.id).expect("layer decomposed");
            home.insert(node.id, group.partition_of_unit(range.end - 1));
        } else {
            home.insert(node.id, aux_home[&node.id]);
        }
    }
    home
}

/// Attach every non-crossbar node to the partition of its nearest
/// crossbar-mapped ancestor (the latest one in topological order when
/// several); nodes with no ancestor land in partition 0.
pub fn attach_aux_layers(group: &mut PartitionGroup, w: &Workload) {
    for p in &mut group.partitions {
        p.attached_aux.clear();
    }
    let mut home: BTreeMap<NodeId, usize> = BTreeMap::new();
    for node in w.graph.nodes() {
        if node.kind.is_mappable() {
            let range = w.model.layer_range(node.id).expect("layer decomposed");
            home.insert(node.id, group.partition_of_unit(range.end - 1));
        } else {
            let part = node
                .inputs
                .iter()
                .map(|i| home[i])
                .max()
                .unwrap_or(0);
            home.insert(node.id, part);
            group.partitions[part].attached_aux.push(node.id);
        }
    }
}

/// Elements of `layer`'s output produced inside each partition, keyed by
/// partition index. Accumulation groups are atomic, so each group's output
/// slice is produced exactly once.
fn produced_elems(
    group: &PartitionGroup,
    w: &Workload,
    id: NodeId,
    home: &BTreeMap<NodeId, usize>,
) -> BTreeMap<usize, u64> {
    let mut out = BTreeMap::new();
    let node = w.graph.node(id);
    if node.kind.is_mappable() {
        let shape = w.graph.shape(id);
        let hw = (shape.h * shape.w) as u64;
        let range = w.model.layer_range(id).expect("layer decomposed");
        let mut seen = BTreeSet::new();
        for unit in &w.model.units[range.clone()] {
            if !seen.insert(unit.group_id) {
                continue;
            }
            let q = group.partition_of_unit(unit.uid);
            *out.entry(q).or_insert(0) += unit.out_len() * hw;
        }
    } else {
        out.insert(home[&id], w.graph.shape(id).elems());
    }
    out
}

/// Partitions that consume a node's output (all partitions holding units
/// of a mappable consumer, or the attached partition of an aux consumer).
fn consuming_partitions(
    group: &PartitionGroup,
    w: &Workload,
    consumer: NodeId,
    home: &BTreeMap<NodeId, usize>,
) -> BTreeSet<usize> {
    let node = w.graph.node(consumer);
    if node.kind.is_mappable() {
        let range = w.model.layer_range(consumer).expect("layer decomposed");
        range
            .clone()
            .map(|uid| group.partition_of_unit(uid))
            .collect()
    } else {
        [home[&consumer]].into_iter().collect()
    }
}

/// Mark DRAM load/store obligations. Every DAG edge whose producer and
/// consumer lie in different partitions yields a STORE of the produced
/// slice and a LOAD of the missing part of the tensor; the external input
/// and the graph outputs cross the chip boundary unconditionally.
pub fn mark_io(group: &mut PartitionGroup, w: &Workload) {
    for p in &mut group.partitions {
        p.entries.clear();
        p.exits.clear();
    }
    let act_bits = w.opts.activation_bits as u64;
    let home = node_home(group, w);

    let mut entries: BTreeMap<usize, BTreeMap<TensorId, u64>> = BTreeMap::new();
    let mut exits: BTreeMap<usize, BTreeMap<TensorId, u64>> = BTreeMap::new();

    // External input feeds the single source node.
    let src = w.graph.source_node();
    let input_bytes = crate::bits_to_bytes(w.graph.input_shape.elems() * act_bits);
    for q in consuming_partitions(group, w, src, &home) {
        entries.entry(q).or_default().insert(TensorId::ExternalInput, input_bytes);
    }

    for node in w.graph.nodes() {
        let tensor = TensorId::Node(node.id);
        let total_elems = w.graph.shape(node.id).elems();
        let produced = produced_elems(group, w, node.id, &home);
        let consumers = w.graph.consumers(node.id);
        let mut consumed_in: BTreeSet<usize> = BTreeSet::new();
        for &c in consumers {
            consumed_in.extend(consuming_partitions(group, w, c, &home));
        }
        for &q in &consumed_in {
            let own = produced.get(&q).copied().unwrap_or(0);
            if own < total_elems {
                let bytes = crate::bits_to_bytes((total_elems - own) * act_bits);
                entries.entry(q).or_default().insert(tensor, bytes);
            }
        }
        let is_output = consumers.is_empty();
        for (&q, &elems) in &produced {
            let needed_elsewhere = is_output || consumed_in.iter().any(|&c| c != q);
            if needed_elsewhere {
                let bytes = crate::bits_to_bytes(elems * act_bits);
                exits.entry(q).or_default().insert(tensor, bytes);
            }
        }
    }

    for (q, tensors) in entries {
        group.partitions[q].entries = tensors
            .into_iter()
            .map(|(tensor, bytes_per_sample)| IoMarker { tensor, bytes_per_sample })
            .collect();
    }
    for (q, tensors) in exits {
        group.partitions[q].exits = tensors
            .into_iter()
            .map(|(tensor, bytes_per_sample)| IoMarker { tensor, bytes_per_sample })
            .collect();
    }
}

fn replication_packs(p: &Partition, w: &Workload) -> bool {
    let items = instances(p, w.model);
    let sizes: Vec<u32> = items
        .iter()
        .map(|&(uid, _)| w.model.units[uid].crossbars_needed)
        .collect();
    crate::decomposer::ffd_feasible(&sizes, w.chip.num_cores, w.chip.core.crossbars_per_core)
}

/// Greedy bottleneck replication: repeatedly give one more replica to the
/// layer with the largest per-sample stage time (ties to the lowest layer
/// id) while the replicated units still pack onto the cores.
pub fn allocate_replication(p: &mut Partition, w: &Workload) {
    loop {
        let bottleneck = p
            .replication
            .keys()
            .copied()
            .map(|l| (l, stage_time(w, p, l).total_ns))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(l, _)| l);
        let Some(layer) = bottleneck else { return };
        *p.replication.get_mut(&layer).unwrap() += 1;
        if !replication_packs(p, w) {
            *p.replication.get_mut(&layer).unwrap() -= 1;
            return;
        }
    }
}

/// First-fit-decreasing placement of all unit instances (replicas
/// included) onto cores. Units never span cores.
pub fn map_cores(p: &mut Partition, w: &Workload) -> Result<()> {
    let items = instances(p, w.model);
    match pack_instances(w, &items) {
        Some(placements) => {
            p.core_map = placements;
            Ok(())
        }
        None => Err(Error::PackingFailure(format!(
            "partition {} with replication {:?} does not fit {} cores",
            p.index, p.replication, w.chip.num_cores
        ))),
    }
}

/// Validate the full partition-group invariant suite; returns a list of
/// violations (empty means the group is sound).
pub fn check_group_invariants(
    group: &PartitionGroup,
    w: &Workload,
    vmap: &ValidityMap,
) -> Vec<String> {
    let mut bad = Vec::new();
    let m = w.model.len();

    // Contiguous disjoint cover of [0, M).
    let mut next = 0;
    for p in &group.partitions {
        if p.span.start != next {
            bad.push(format!("partition {} starts at {} not {}", p.index, p.span.start, next));
        }
        if p.span.end <= p.span.start {
            bad.push(format!("partition {} has empty span", p.index));
        }
        next = p.span.end;
    }
    if next != m {
        bad.push(format!("cover ends at {next}, model has {m} units"));
    }

    for p in &group.partitions {
        if !vmap.is_valid(p.span.start, p.span.end) {
            bad.push(format!("partition {} span [{}, {}) not valid", p.index, p.span.start, p.span.end));
        }
        // Condition 2: one replication count per layer, all >= 1.
        let layers = w.model.layers_in(&p.span);
        if p.replication.keys().copied().collect::<Vec<_>>() != layers {
            bad.push(format!("partition {} replication keys mismatch", p.index));
        }
        if p.replication.values().any(|&r| r < 1) {
            bad.push(format!("partition {} has replication < 1", p.index));
        }
        // Condition 3: replicated footprint packs, and fits capacity bits.
        if !replication_packs(p, w) {
            bad.push(format!("partition {} replication does not pack", p.index));
        }
        let bits: u64 = w.model.units[p.span.clone()]
            .iter()
            .map(|u| u.weight_bits * p.replication[&u.layer_id] as u64)
            .sum();
        if bits > w.chip.chip_capacity_bits() {
            bad.push(format!("partition {} replicated bits exceed chip capacity", p.index));
        }
        // Core map covers exactly the instance list without overflow.
        let items = instances(p, w.model);
        if p.core_map.len() != items.len() {
            bad.push(format!("partition {} core map incomplete", p.index));
        }
        let mut per_core: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
        for pl in &p.core_map {
            let xb = w.model.units[pl.uid].crossbars_needed;
            per_core.entry(pl.core).or_default().push((pl.xbar_start, xb));
        }
        for (core, mut spans) in per_core {
            spans.sort();
            let mut end = 0;
            for (start, len) in spans {
                if start < end {
                    bad.push(format!("partition {} core {core} overlapping crossbars", p.index));
                }
                end = start + len;
            }
            if end > w.chip.core.crossbars_per_core {
                bad.push(format!("partition {} core {core} over capacity", p.index));
            }
        }
    }

    // Every aux node attached exactly once.
    let mut aux_seen: BTreeMap<NodeId, usize> = BTreeMap::new();
    for p in &group.partitions {
        for &aux in &p.attached_aux {
            *aux_seen.entry(aux).or_insert(0) += 1;
        }
    }
    for node in w.graph.nodes() {
        if !node.kind.is_mappable() {
            match aux_seen.get(&node.id) {
                Some(1) => {}
                other => bad.push(format!("aux node {} attached {:?} times", node.id, other.copied().unwrap_or(0))),
            }
        }
    }

    // IO completeness: every edge is intra-partition or marked, and loads
    // are backed by stores.
    let home = node_home(group, w);
    let entry_of = |q: usize, t: TensorId| {
        group.partitions[q].entries.iter().find(|mk| mk.tensor == t)
    };
    for node in w.graph.nodes() {
        let tensor = TensorId::Node(node.id);
        let total = w.graph.shape(node.id).elems();
        let produced = produced_elems(group, w, node.id, &home);
        for &c in w.graph.consumers(node.id) {
            for q in consuming_partitions(group, w, c, &home) {
                let own = produced.get(&q).copied().unwrap_or(0);
                if own < total && entry_of(q, tensor).is_none() {
                    bad.push(format!("edge {} -> {c}: partition {q} misses entry", node.id));
                }
            }
        }
        let stored: u64 = group
            .partitions
            .iter()
            .flat_map(|p| p.exits.iter())
            .filter(|mk| mk.tensor == tensor)
            .map(|mk| mk.bytes_per_sample)
            .sum();
        for p in &group.partitions {
            if let Some(mk) = p.entries.iter().find(|mk| mk.tensor == tensor) {
                if mk.bytes_per_sample > stored {
                    bad.push(format!(
                        "tensor n{}: partition {} loads {} bytes but only {} stored",
                        node.id, p.index, mk.bytes_per_sample, stored
                    ));
                }
            }
        }
    }
    // Graph outputs are stored somewhere.
    for out in w.graph.output_nodes() {
        let stored = group
            .partitions
            .iter()
            .any(|p| p.exits.iter().any(|mk| mk.tensor == TensorId::Node(out)));
        if !stored {
            bad.push(format!("output node {out} never stored"));
        }
    }

    bad
}

#[cfg(test)]
#[allow(clippy::single_range_in_vec_init)]
mod tests {
    use super::*;
    use crate::cost_model::CostOptions;
    use crate::decomposer::{build_validity_map, decompose};
    use crate::hw_model::builtin_chip;
    use crate::network_ir::{build_benchmark, LayerKind, LayerNode, NetworkGraph, TensorShape};

    fn toy_chain(n_convs: usize) -> NetworkGraph {
        // conv -> relu -> conv -> relu -> ...
        let mut nodes = Vec::new();
        let mut prev: Option<usize> = None;
        for _ in 0..n_convs {
            let cid = nodes.len();
            nodes.push(LayerNode {
                id: cid,
                kind: LayerKind::Conv {
                    cin: 16,
                    cout: 16,
                    kh: 3,
                    kw: 3,
                    stride: 1,
                    padding: 1,
                },
                weight_bits_per_element: 4,
                inputs: prev.into_iter().collect(),
            });
            let rid = nodes.len();
            nodes.push(LayerNode {
                id: rid,
                kind: LayerKind::Activation,
                weight_bits_per_element: 4,
                inputs: vec![cid],
            });
            prev = Some(rid);
        }
        NetworkGraph::new("chain", TensorShape::new(16, 8, 8), nodes).unwrap()
    }

    #[test]
    fn random_group_deterministic() {
        let graph = build_benchmark("resnet18").unwrap();
        let chip = builtin_chip("S").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        let vmap = build_validity_map(&model, &chip);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let a = generate_random_group(&w, &vmap, 7);
        let b = generate_random_group(&w, &vmap, 7);
        assert_eq!(a, b);
        let c = generate_random_group(&w, &vmap, 8);
        assert_ne!(a.spans(), c.spans());
    }

    #[test]
    fn random_groups_satisfy_invariants() {
        let graph = build_benchmark("resnet18").unwrap();
        let chip = builtin_chip("S").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        let vmap = build_validity_map(&model, &chip);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        for seed in 0..50 {
            let g = generate_random_group(&w, &vmap, seed);
            let bad = check_group_invariants(&g, &w, &vmap);
            assert!(bad.is_empty(), "seed {seed}: {bad:?}");
        }
    }

    #[test]
    fn greedy_single_partition_when_model_fits() {
        let graph = build_benchmark("squeezenet").unwrap();
        let chip = builtin_chip("L").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        let vmap = build_validity_map(&model, &chip);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        // 0.587 MiB of weights vs a 4.5 MiB chip
        let g = greedy_group(&w, &vmap);
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn greedy_two_core_example() {
        use crate::decomposer::{DecomposedModel, PartitionUnit};
        let units: Vec<PartitionUnit> = (0..4)
            .map(|i| PartitionUnit {
                uid: i,
                layer_id: 0,
                out_slice: (i as u64, i as u64 + 1),
                in_block: (0, 1),
                col_tiles: 1,
                row_tiles: 4,
                crossbars_needed: 4,
                weight_bits: 64,
                group_id: i,
                chans_per_tile: 1,
                weight_bits_per_element: 4,
            })
            .collect();
        let model = DecomposedModel {
            units,
            layer_ranges: vec![(0, 0..4)],
            group_spans: (0..4).map(|i| i..i + 1).collect(),
            aligned: vec![true; 5],
        };
        let mut chip = builtin_chip("S").unwrap();
        chip.num_cores = 2;
        chip.core.crossbars_per_core = 4;
        let vmap = build_validity_map(&model, &chip);
        // spans [0,2), [2,4)
        let mut s = 0;
        let mut spans = Vec::new();
        while s < 4 {
            let j = vmap.max_end(s);
            spans.push(s..j);
            s = j;
        }
        assert_eq!(spans, vec![0..2, 2..4]);
    }

    #[test]
    fn layerwise_counts_and_fallback() {
        let graph = build_benchmark("resnet18").unwrap();
        let chip = builtin_chip("M").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        let vmap = build_validity_map(&model, &chip);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let g = layerwise_group(&w, &vmap);
        // every resnet18 layer fits the chip individually
        assert_eq!(g.len(), graph.mappable_nodes().len());

        // vgg16 fc1 does not fit chip S: fallback splits it group-aligned
        let graph = build_benchmark("vgg16").unwrap();
        let chip = builtin_chip("S").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        let vmap = build_validity_map(&model, &chip);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let g = layerwise_group(&w, &vmap);
        assert!(g.len() > graph.mappable_nodes().len());
        let bad = check_group_invariants(&g, &w, &vmap);
        assert!(bad.is_empty(), "{bad:?}");
    }

    #[test]
    fn greedy_first_partition_is_widest() {
        let graph = build_benchmark("resnet18").unwrap();
        let chip = builtin_chip("M").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        let vmap = build_validity_map(&model, &chip);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let greedy = greedy_group(&w, &vmap);
        let layerwise = layerwise_group(&w, &vmap);
        assert!(greedy.partitions[0].span.len() >= layerwise.partitions[0].span.len());
        for seed in 0..20 {
            let random = generate_random_group(&w, &vmap, seed);
            assert!(greedy.partitions[0].span.len() >= random.partitions[0].span.len());
        }
    }

    #[test]
    fn aux_attachment_rules() {
        // conv0 -> relu1 -> conv2 -> relu3, split between the convs:
        // relu1 goes with conv0, relu3 with conv2.
        let graph = toy_chain(2);
        let chip = builtin_chip("S").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        assert_eq!(model.len(), 2);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let g = finalize_group(&w, vec![0..1, 1..2]);
        assert_eq!(g.partitions[0].attached_aux, vec![1]);
        assert_eq!(g.partitions[1].attached_aux, vec![3]);
    }

    #[test]
    fn add_attaches_to_latest_ancestor() {
        // conv0 (P0), conv1 (P1), add joining both -> P1
        let nodes = vec![
            LayerNode {
                id: 0,
                kind: LayerKind::Conv { cin: 16, cout: 16, kh: 3, kw: 3, stride: 1, padding: 1 },
                weight_bits_per_element: 4,
                inputs: vec![],
            },
            LayerNode {
                id: 1,
                kind: LayerKind::Conv { cin: 16, cout: 16, kh: 3, kw: 3, stride: 1, padding: 1 },
                weight_bits_per_element: 4,
                inputs: vec![0],
            },
            LayerNode {
                id: 2,
                kind: LayerKind::ElementwiseAdd,
                weight_bits_per_element: 4,
                inputs: vec![0, 1],
            },
        ];
        let graph = NetworkGraph::new("res", TensorShape::new(16, 8, 8), nodes).unwrap();
        let chip = builtin_chip("S").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let g = finalize_group(&w, vec![0..1, 1..2]);
        assert!(g.partitions[1].attached_aux.contains(&2));
    }

    #[test]
    fn source_aux_attaches_to_first_partition() {
        // activation as the single source, then a conv
        let nodes = vec![
            LayerNode {
                id: 0,
                kind: LayerKind::Activation,
                weight_bits_per_element: 4,
                inputs: vec![],
            },
            LayerNode {
                id: 1,
                kind: LayerKind::Conv { cin: 16, cout: 16, kh: 3, kw: 3, stride: 1, padding: 1 },
                weight_bits_per_element: 4,
                inputs: vec![0],
            },
        ];
        let graph = NetworkGraph::new("srcaux", TensorShape::new(16, 8, 8), nodes).unwrap();
        let chip = builtin_chip("S").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let g = finalize_group(&w, vec![0..model.len()]);
        assert_eq!(g.partitions[0].attached_aux, vec![0]);
    }

    #[test]
    fn single_cut_has_one_exit_one_entry() {
        let graph = toy_chain(2);
        let chip = builtin_chip("S").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let g = finalize_group(&w, vec![0..1, 1..2]);
        // P0: external input entry, one exit (relu1's tensor)
        assert_eq!(g.partitions[0].entries.len(), 1);
        assert_eq!(g.partitions[0].entries[0].tensor, TensorId::ExternalInput);
        assert_eq!(g.partitions[0].exits.len(), 1);
        assert_eq!(g.partitions[0].exits[0].tensor, TensorId::Node(1));
        // P1: one entry (relu1), one exit (relu3 = graph output)
        assert_eq!(g.partitions[1].entries.len(), 1);
        assert_eq!(g.partitions[1].entries[0].tensor, TensorId::Node(1));
        assert_eq!(g.partitions[1].exits.len(), 1);
        assert_eq!(g.partitions[1].exits[0].tensor, TensorId::Node(3));
    }

    #[test]
    fn fully_on_chip_single_entry_exit() {
        let graph = toy_chain(3);
        let chip = builtin_chip("S").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let g = finalize_group(&w, vec![0..model.len()]);
        assert_eq!(g.len(), 1);
        assert_eq!(g.partitions[0].entries.len(), 1);
        assert_eq!(g.partitions[0].entries[0].tensor, TensorId::ExternalInput);
        assert_eq!(g.partitions[0].exits.len(), 1);
    }

    #[test]
    fn residual_skip_makes_two_exits() {
        // conv0 -> conv1 -> conv2, plus skip conv0 -> add(conv2): cutting
        // after conv1 leaves P0 storing both conv1 (main) and conv0 (skip).
        let nodes = vec![
            LayerNode {
                id: 0,
                kind: LayerKind::Conv { cin: 16, cout: 16, kh: 3, kw: 3, stride: 1, padding: 1 },
                weight_bits_per_element: 4,
                inputs: vec![],
            },
            LayerNode {
                id: 1,
                kind: LayerKind::Conv { cin: 16, cout: 16, kh: 3, kw: 3, stride: 1, padding: 1 },
                weight_bits_per_element: 4,
                inputs: vec![0],
            },
            LayerNode {
                id: 2,
                kind: LayerKind::Conv { cin: 16, cout: 16, kh: 3, kw: 3, stride: 1, padding: 1 },
                weight_bits_per_element: 4,
                inputs: vec![1],
            },
            LayerNode {
                id: 3,
                kind: LayerKind::ElementwiseAdd,
                weight_bits_per_element: 4,
                inputs: vec![0, 2],
            },
        ];
        let graph = NetworkGraph::new("skip", TensorShape::new(16, 8, 8), nodes).unwrap();
        let chip = builtin_chip("S").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        assert_eq!(model.len(), 3);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let g = finalize_group(&w, vec![0..2, 2..3]);
        let exit_tensors: Vec<TensorId> =
            g.partitions[0].exits.iter().map(|mk| mk.tensor).collect();
        assert_eq!(exit_tensors, vec![TensorId::Node(0), TensorId::Node(1)]);
        let entry_tensors: Vec<TensorId> =
            g.partitions[1].entries.iter().map(|mk| mk.tensor).collect();
        assert_eq!(entry_tensors, vec![TensorId::Node(0), TensorId::Node(1)]);
    }

    #[test]
    fn replication_favors_bottleneck() {
        // Two equal-size conv layers, layer 0 with 4x the invocations and
        // room for 5 instances total: greedy lands on r = (4, 1).
        let nodes = vec![
            LayerNode {
                id: 0,
                kind: LayerKind::Conv { cin: 64, cout: 64, kh: 2, kw: 2, stride: 1, padding: 0 },
                weight_bits_per_element: 4,
                inputs: vec![],
            },
            // pool halves each spatial dim: 4x fewer invocations downstream
            LayerNode {
                id: 1,
                kind: LayerKind::Pool { window: 2, stride: 2, mode: crate::network_ir::PoolMode::Max, padding: 0 },
                weight_bits_per_element: 4,
                inputs: vec![0],
            },
            LayerNode {
                id: 2,
                kind: LayerKind::Conv { cin: 64, cout: 64, kh: 2, kw: 2, stride: 1, padding: 1 },
                weight_bits_per_element: 4,
                inputs: vec![1],
            },
        ];
        let graph = NetworkGraph::new("rep", TensorShape::new(64, 17, 17), nodes).unwrap();
        // each conv: rows=256, cout=64 -> one 256x256 crossbar at 4 bits
        let mut chip = builtin_chip("S").unwrap();
        chip.num_cores = 5;
        chip.core.crossbars_per_core = 1;
        chip.core.vfu_throughput_elems_per_ns = f64::INFINITY;
        let model = decompose(&graph, &chip).unwrap();
        assert_eq!(model.len(), 2);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let g = finalize_group(&w, vec![0..2]);
        assert_eq!(g.partitions[0].replication[&0], 4);
        assert_eq!(g.partitions[0].replication[&2], 1);
    }

    #[test]
    fn full_chip_layer_keeps_r1() {
        let graph = toy_chain(1);
        let mut chip = builtin_chip("S").unwrap();
        chip.num_cores = 1;
        chip.core.crossbars_per_core = 1;
        let model = decompose(&graph, &chip).unwrap();
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let g = finalize_group(&w, vec![0..model.len()]);
        assert!(g.partitions[0].replication.values().all(|&r| r == 1));
    }

    #[test]
    fn map_cores_one_instance_per_core() {
        // 3 replicas of a 9-crossbar unit on chip S (9 per core): each
        // instance fills one core.
        let nodes = vec![LayerNode {
            id: 0,
            kind: LayerKind::Conv { cin: 256, cout: 64, kh: 3, kw: 3, stride: 1, padding: 1 },
            weight_bits_per_element: 4,
            inputs: vec![],
        }];
        let graph = NetworkGraph::new("nine", TensorShape::new(256, 4, 4), nodes).unwrap();
        let chip = builtin_chip("S").unwrap();
        let model = decompose(&graph, &chip).unwrap();
        assert_eq!(model.len(), 1);
        assert_eq!(model.units[0].crossbars_needed, 9);
        let w = Workload::new(&graph, &model, &chip, CostOptions::default());
        let mut p = Partition::fresh(0, 0..1, &model);
        *p.replication.get_mut(&0).unwrap() = 3;
        map_cores(&mut p, &w).unwrap();
        let cores: Vec<u32> = p.core_map.iter().map(|pl| pl.core).collect();
        assert_eq!(cores, vec![0, 1, 2]);
        assert!(p.core_map.iter().all(|pl| pl.xbar_start == 0));
    }
}
