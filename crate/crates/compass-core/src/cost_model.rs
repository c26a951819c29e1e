//! Analytic latency, energy and EDP estimation for partitions and
//! partition groups under batched pipelined execution with weight
//! replacement.
//!
//! Per-partition latency follows the closed-form pipeline model
//!
//! ```text
//! latency(B) = W + io_in + fill + (B - 1) * max(bottleneck, io_in, io_out) + io_out
//! ```
//!
//! where `W` is the weight-replacement time, `fill` the pipeline fill of
//! the first sample and `bottleneck` the slowest pipeline stage. All
//! functions here are pure; the GA evaluates them from many workers and
//! results are bit-identical regardless of call order.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decomposer::DecomposedModel;
use crate::error::Error;
use crate::hw_model::ChipSpec;
use crate::network_ir::{layer_stats, NetworkGraph, NodeId};
use crate::partitioner::{instances, Partition, PartitionGroup, Placement, TensorId};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Latency,
    Edp,
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "latency" => Ok(Objective::Latency),
            "edp" => Ok(Objective::Edp),
            other => Err(Error::Parse(format!(
                "unknown objective '{other}' (expected latency or edp)"
            ))),
        }
    }
}

impl Objective {
    pub fn label(&self) -> &'static str {
        match self {
            Objective::Latency => "latency",
            Objective::Edp => "edp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostOptions {
    /// Activation precision used for all io byte accounting.
    pub activation_bits: u32,
    /// Bytes per partial-sum element moved over the bus.
    pub partial_sum_bytes: u32,
    /// Overlap weight replacement with the previous partition's drain.
    pub overlap_writes: bool,
    pub objective: Objective,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            activation_bits: 4,
            partial_sum_bytes: 4,
            overlap_writes: false,
            objective: Objective::Latency,
        }
    }
}

/// The immutable inputs every pipeline stage looks at together.
#[derive(Clone, Copy)]
pub struct Workload<'a> {
    pub graph: &'a NetworkGraph,
    pub model: &'a DecomposedModel,
    pub chip: &'a ChipSpec,
    pub opts: CostOptions,
}

impl<'a> Workload<'a> {
    pub fn new(
        graph: &'a NetworkGraph,
        model: &'a DecomposedModel,
        chip: &'a ChipSpec,
        opts: CostOptions,
    ) -> Workload<'a> {
        Workload {
            graph,
            model,
            chip,
            opts,
        }
    }
}

/// Per-sample time of one pipeline stage (one mappable layer).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTime {
    pub layer_id: NodeId,
    pub replication: u32,
    pub mvm_ns: f64,
    pub acc_ns: f64,
    pub vfu_ns: f64,
    pub total_ns: f64,
}

/// Nearest crossbar-mapped ancestor of an aux node, latest in topological
/// order when several.
pub fn aux_anchor(graph: &NetworkGraph, id: NodeId) -> Option<NodeId> {
    let mut best: Option<NodeId> = None;
    let mut stack: Vec<NodeId> = graph.node(id).inputs.clone();
    let mut seen = std::collections::BTreeSet::new();
    while let Some(n) = stack.pop() {
        if !seen.insert(n) {
            continue;
        }
        if graph.node(n).kind.is_mappable() {
            if best.is_none_or(|b| graph.position(n) > graph.position(b)) {
                best = Some(n);
            }
        } else {
            stack.extend(graph.node(n).inputs.iter().copied());
        }
    }
    best
}

/// Output elements the vector units process for `layer`'s stage: the
/// layer's own outputs plus every attached aux node anchored at it.
/// Anchorless aux nodes fold into the partition's first stage.
fn stage_vfu_elems(w: &Workload, p: &Partition, layer: NodeId) -> u64 {
    let mut elems = w.graph.shape(layer).elems();
    let first_layer = w.model.units[p.span.start].layer_id;
    for &aux in &p.attached_aux {
        let anchor = aux_anchor(w.graph, aux).unwrap_or(first_layer);
        if anchor == layer {
            elems += w.graph.shape(aux).elems();
        }
    }
    elems
}

/// Per-sample stage time of `layer` inside partition `p`:
/// `ceil(invocations / r) * mvm_latency` plus the bus transfer of
/// accumulation-group partial sums plus vector-unit time.
pub fn stage_time(w: &Workload, p: &Partition, layer: NodeId) -> StageTime {
    let r = p.replication[&layer] as u64;
    let stats = layer_stats(w.graph, layer, w.chip.xbar.cell_bits).expect("mappable layer");
    let inv = stats.invocations_per_sample;
    let mvm_ns = inv.div_ceil(r) as f64 * w.chip.xbar.mvm_latency_ns;

    // Partial sums of input-split accumulation groups cross the shared bus.
    let mut acc_bytes = 0u64;
    let range = w.model.layer_range(layer).expect("layer decomposed");
    let lo = range.start.max(p.span.start);
    let hi = range.end.min(p.span.end);
    let mut seen = std::collections::BTreeSet::new();
    for unit in &w.model.units[lo..hi] {
        if !seen.insert(unit.group_id) {
            continue;
        }
        let fanin = w.model.group_spans[unit.group_id].len() as u64;
        if fanin > 1 {
            acc_bytes += fanin * unit.out_len() * inv * w.opts.partial_sum_bytes as u64;
        }
    }
    let acc_ns = if acc_bytes > 0 {
        acc_bytes as f64 / w.chip.bus_bandwidth_bytes_per_ns + w.chip.bus_latency_ns
    } else {
        0.0
    };

    let vfu_ns = stage_vfu_elems(w, p, layer) as f64 / w.chip.core.vfu_throughput_elems_per_ns;
    StageTime {
        layer_id: layer,
        replication: r as u32,
        mvm_ns,
        acc_ns,
        vfu_ns,
        total_ns: mvm_ns + acc_ns + vfu_ns,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnergyBreakdown {
    pub mvm_pj: f64,
    pub write_pj: f64,
    pub dram_weights_pj: f64,
    pub dram_activations_pj: f64,
    pub static_pj: f64,
}

impl EnergyBreakdown {
    pub fn dram_pj(&self) -> f64 {
        self.dram_weights_pj + self.dram_activations_pj
    }

    pub fn total_pj(&self) -> f64 {
        self.mvm_pj + self.write_pj + self.dram_weights_pj + self.dram_activations_pj + self.static_pj
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionCost {
    pub index: usize,
    pub span: [usize; 2],
    pub units: usize,
    pub stages: Vec<StageTime>,
    /// Weight-replacement time actually charged (after overlap, if any).
    pub write_ns: f64,
    /// Raw weight-replacement time before overlap.
    pub raw_write_ns: f64,
    pub io_in_ns: f64,
    pub io_out_ns: f64,
    pub fill_ns: f64,
    pub bottleneck_ns: f64,
    pub steady_ns: f64,
    pub latency_ns: f64,
    pub weight_dram_bytes: u64,
    pub weight_bits_written: u64,
    pub entry_bytes_per_sample: u64,
    pub exit_bytes_per_sample: u64,
    pub energy: EnergyBreakdown,
    pub fitness: f64,
}

impl PartitionCost {
    /// Tail time after the last sample enters this partition's pipeline;
    /// the next partition's weight writes may overlap it.
    pub fn drain_ns(&self) -> f64 {
        self.fill_ns + self.io_out_ns
    }
}

/// Cost of one finalized partition at batch `b`, with `drain_ns` of the
/// previous partition available for write overlap (0 disables it).
pub fn partition_cost_with_drain(
    w: &Workload,
    p: &Partition,
    b: u32,
    drain_ns: f64,
) -> PartitionCost {
    assert!(b >= 1, "batch must be >= 1");
    let chip = w.chip;
    let layers = w.model.layers_in(&p.span);
    let stages: Vec<StageTime> = layers.iter().map(|&l| stage_time(w, p, l)).collect();
    let fill_ns: f64 = stages.iter().map(|s| s.total_ns).sum();
    let bottleneck_ns = stages.iter().map(|s| s.total_ns).fold(0.0, f64::max);

    // Weight replacement: DRAM fetch vs row programming on the busiest core.
    let mut weight_dram_bytes = 0u64;
    let mut weight_bits_written = 0u64;
    for &(uid, _) in &instances(p, w.model) {
        let unit = &w.model.units[uid];
        weight_dram_bytes += unit.weight_dram_bytes(chip.xbar.rows);
        weight_bits_written += unit.weight_bits;
    }
    let mut rows_per_core = std::collections::BTreeMap::new();
    for pl in &p.core_map {
        *rows_per_core.entry(pl.core).or_insert(0u64) +=
            w.model.units[pl.uid].rows_written();
    }
    let busiest_rows = rows_per_core.values().copied().max().unwrap_or(0);
    let raw_write_ns = (weight_dram_bytes as f64 / chip.dram.bandwidth_bytes_per_ns)
        .max(busiest_rows as f64 * chip.xbar.row_write_latency_ns);
    let write_ns = (raw_write_ns - drain_ns).max(0.0);

    let io_time = |bytes_total: u64, markers: usize| {
        bytes_total as f64 / chip.dram.bandwidth_bytes_per_ns
            + markers as f64 * chip.dram.latency_ns
    };
    let entry_bytes = p.entry_bytes_per_sample();
    let exit_bytes = p.exit_bytes_per_sample();
    let io_in_ns = io_time(entry_bytes, p.entries.len());
    let io_out_ns = io_time(exit_bytes, p.exits.len());

    let steady_ns = bottleneck_ns.max(io_in_ns).max(io_out_ns);
    let latency_ns =
        write_ns + io_in_ns + fill_ns + (b - 1) as f64 * steady_ns + io_out_ns;

    let mut mvm_pj = 0.0;
    for s in &stages {
        let stats = layer_stats(w.graph, s.layer_id, chip.xbar.cell_bits).unwrap();
        let range = w.model.layer_range(s.layer_id).unwrap();
        let lo = range.start.max(p.span.start);
        let hi = range.end.min(p.span.end);
        let xbars_one_copy: u64 = w.model.units[lo..hi]
            .iter()
            .map(|u| u.crossbars_needed as u64)
            .sum();
        let slots = stats.invocations_per_sample.div_ceil(s.replication as u64);
        mvm_pj += b as f64
            * (slots * s.replication as u64 * xbars_one_copy) as f64
            * chip.xbar.mvm_energy_pj;
    }
    let write_pj = weight_bits_written as f64 * chip.xbar.write_energy_pj_per_bit;
    let dram_weights_pj = weight_dram_bytes as f64 * chip.dram.energy_pj_per_byte;
    let dram_activations_pj =
        b as f64 * (entry_bytes + exit_bytes) as f64 * chip.dram.energy_pj_per_byte;
    // 1 W = 1000 pJ/ns
    let static_pj = chip.static_power_w * 1000.0 * latency_ns;
    let energy = EnergyBreakdown {
        mvm_pj,
        write_pj,
        dram_weights_pj,
        dram_activations_pj,
        static_pj,
    };
    let fitness = match w.opts.objective {
        Objective::Latency => latency_ns,
        Objective::Edp => latency_ns * energy.total_pj(),
    };
    PartitionCost {
        index: p.index,
        span: [p.span.start, p.span.end],
        units: p.span.len(),
        stages,
        write_ns,
        raw_write_ns,
        io_in_ns,
        io_out_ns,
        fill_ns,
        bottleneck_ns,
        steady_ns,
        latency_ns,
        weight_dram_bytes,
        weight_bits_written,
        entry_bytes_per_sample: entry_bytes,
        exit_bytes_per_sample: exit_bytes,
        energy,
        fitness,
    }
}

/// Cost of one finalized partition at batch `b` without write overlap.
pub fn partition_cost(w: &Workload, p: &Partition, b: u32) -> PartitionCost {
    partition_cost_with_drain(w, p, b, 0.0)
}

/// Costs of all partitions in execution order, applying write overlap
/// when enabled.
pub fn group_partition_costs(w: &Workload, group: &PartitionGroup, b: u32) -> Vec<PartitionCost> {
    let mut costs = Vec::with_capacity(group.partitions.len());
    let mut drain = 0.0;
    for p in &group.partitions {
        let cost = partition_cost_with_drain(w, p, b, if w.opts.overlap_writes { drain } else { 0.0 });
        drain = cost.drain_ns();
        costs.push(cost);
    }
    costs
}

/// Partition-group fitness: the sum of partition fitness values (lower is
/// better). Returns the total and the per-partition terms.
pub fn group_fitness(w: &Workload, group: &PartitionGroup, b: u32) -> (f64, Vec<f64>) {
    let costs = group_partition_costs(w, group, b);
    let per: Vec<f64> = costs.iter().map(|c| c.fitness).collect();
    (per.iter().sum(), per)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReplication {
    pub layer: NodeId,
    pub replication: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IoRow {
    pub tensor: TensorId,
    pub bytes_per_sample: u64,
}

/// One partition's row in the run report: the serialized partition
/// (span, replication, io markers, core map) plus its cost breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionReport {
    #[serde(flatten)]
    pub cost: PartitionCost,
    pub replication: Vec<LayerReplication>,
    pub attached_aux: Vec<NodeId>,
    pub entries: Vec<IoRow>,
    pub exits: Vec<IoRow>,
    pub core_map: Vec<Placement>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyTotals {
    pub mvm_pj: f64,
    pub write_pj: f64,
    pub dram_weights_pj: f64,
    pub dram_activations_pj: f64,
    pub static_pj: f64,
    pub total_pj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaSummary {
    pub generations_run: u32,
    pub early_stopped: bool,
    pub best_pgf: f64,
}

/// Full run report; figure-ready totals plus per-partition rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub format_version: u32,
    pub tool_version: String,
    /// "{Network}-{Chip}-{Batch}" evaluation label.
    pub label: String,
    pub scheme: String,
    pub objective: String,
    pub model: String,
    pub chip: String,
    pub batch: u32,
    pub seed: u64,
    pub config_hash: String,
    pub model_hash: String,
    pub overlap_writes: bool,
    pub activation_bits: u32,
    pub units: usize,
    pub partition_count: usize,
    pub pgf: f64,
    pub end_to_end_latency_ns: f64,
    pub throughput_samples_per_s: f64,
    pub energy_per_sample_pj: f64,
    /// Energy-delay product per sample (energy_per_sample x end-to-end
    /// latency), in pJ*ns.
    pub edp_pj_ns: f64,
    /// Weight write + weight load energy relative to MVM energy.
    pub write_mvm_energy_ratio: f64,
    pub energy_breakdown_pj: EnergyTotals,
    pub write_energy_per_sample_pj: f64,
    pub dram_bytes_total: u64,
    pub partitions: Vec<PartitionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ga: Option<GaSummary>,
}

/// Aggregate a finalized group into a run report. Identification fields
/// (scheme, label, seed, hashes) are filled by the caller.
pub fn group_cost(w: &Workload, group: &PartitionGroup, b: u32) -> RunReport {
    let costs = group_partition_costs(w, group, b);
    let pgf: f64 = costs.iter().map(|c| c.fitness).sum();
    let end_to_end_latency_ns: f64 = costs.iter().map(|c| c.latency_ns).sum();
    let throughput_samples_per_s = b as f64 * 1e9 / end_to_end_latency_ns;

    let mut totals = EnergyTotals {
        mvm_pj: 0.0,
        write_pj: 0.0,
        dram_weights_pj: 0.0,
        dram_activations_pj: 0.0,
        static_pj: 0.0,
        total_pj: 0.0,
    };
    let mut dram_bytes_total = 0u64;
    for c in &costs {
        totals.mvm_pj += c.energy.mvm_pj;
        totals.write_pj += c.energy.write_pj;
        totals.dram_weights_pj += c.energy.dram_weights_pj;
        totals.dram_activations_pj += c.energy.dram_activations_pj;
        totals.static_pj += c.energy.static_pj;
        dram_bytes_total += c.weight_dram_bytes
            + b as u64 * (c.entry_bytes_per_sample + c.exit_bytes_per_sample);
    }
    totals.total_pj = totals.mvm_pj
        + totals.write_pj
        + totals.dram_weights_pj
        + totals.dram_activations_pj
        + totals.static_pj;

    let energy_per_sample_pj = totals.total_pj / b as f64;
    let edp_pj_ns = energy_per_sample_pj * end_to_end_latency_ns;
    let write_mvm_energy_ratio = if totals.mvm_pj > 0.0 {
        (totals.write_pj + totals.dram_weights_pj) / totals.mvm_pj
    } else {
        0.0
    };
    let write_energy_per_sample_pj = totals.write_pj / b as f64;

    let partitions: Vec<PartitionReport> = group
        .partitions
        .iter()
        .zip(costs)
        .map(|(p, cost)| PartitionReport {
            cost,
            replication: p
                .replication
                .iter()
                .map(|(&layer, &replication)| LayerReplication { layer, replication })
                .collect(),
            attached_aux: p.attached_aux.clone(),
            entries: p
                .entries
                .iter()
                .map(|mk| IoRow {
                    tensor: mk.tensor,
                    bytes_per_sample: mk.bytes_per_sample,
                })
                .collect(),
            exits: p
                .exits
                .iter()
                .map(|mk| IoRow {
                    tensor: mk.tensor,
                    bytes_per_sample: mk.bytes_per_sample,
                })
                .collect(),
            core_map: p.core_map.clone(),
        })
        .collect();

    RunReport {
        format_version: REPORT_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        label: String::new(),
        scheme: String::new(),
        objective: w.opts.objective.label().to_string(),
        model: w.graph.name.clone(),
        chip: w.chip.name.clone(),
        batch: b,
        seed: 0,
        config_hash: String::new(),
        model_hash: String::new(),
        overlap_writes: w.opts.overlap_writes,
        activation_bits: w.opts.activation_bits,
        units: w.model.len(),
        partition_count: group.partitions.len(),
        pgf,
        end_to_end_latency_ns,
        throughput_samples_per_s,
        energy_per_sample_pj,
        edp_pj_ns,
        write_mvm_energy_ratio,
        energy_breakdown_pj: totals,
        write_energy_per_sample_pj,
        dram_bytes_total,
        partitions,
        ga: None,
    }
}

pub fn report_to_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Per-partition CSV companion for stacked latency/energy plots.
pub fn partitions_csv(report: &RunReport) -> String {
    let mut s = String::from(
        "partition,units,write_ns,io_in_ns,fill_ns,steady_ns,io_out_ns,latency_ns,\
         mvm_pj,write_pj,dram_pj,static_pj,fitness\n",
    );
    for row in &report.partitions {
        let c = &row.cost;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            c.index,
            c.units,
            c.write_ns,
            c.io_in_ns,
            c.fill_ns,
            c.steady_ns,
            c.io_out_ns,
            c.latency_ns,
            c.energy.mvm_pj,
            c.energy.write_pj,
            c.energy.dram_pj(),
            c.energy.static_pj,
            c.fitness,
        ));
    }
    s
}
