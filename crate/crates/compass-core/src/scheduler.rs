//! Lower a finalized partition group into timing-annotated per-core
//! instruction streams, allocate global memory, and emit a DRAM access
//! trace (64-byte transaction granularity, `addr op cycle` lines).
//!
//! The scheduler does not simulate activation values; instruction issue
//! cycles mirror the cost model's timeline so the per-partition stream
//! makespan matches the modelled latency to within one cycle of rounding.
//! Cycles are nanoseconds at a fixed 1 GHz annotation clock.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::cost_model::{aux_anchor, group_partition_costs, PartitionCost, Workload};
use crate::error::{Error, Result};
use crate::network_ir::NodeId;
use crate::partitioner::{instances, PartitionGroup, TensorId};

pub const ISA_FORMAT_VERSION: u32 = 1;
pub const TRACE_FORMAT_VERSION: u32 = 1;
/// DRAM transaction granularity of the trace.
pub const DRAM_BLOCK_BYTES: u64 = 64;
/// One MVM instruction covers up to this many invocation slots of one
/// unit instance.
pub const DEFAULT_MVM_COALESCE: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Opcode {
    WriteXbar,
    Load,
    Store,
    Mvm,
    Vfu,
    Send,
    Recv,
    Barrier,
}

impl Opcode {
    pub fn label(&self) -> &'static str {
        match self {
            Opcode::WriteXbar => "WRITE_XBAR",
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Mvm => "MVM",
            Opcode::Vfu => "VFU",
            Opcode::Send => "SEND",
            Opcode::Recv => "RECV",
            Opcode::Barrier => "BARRIER",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Tensor(TensorId),
    Weight { uid: usize, replica: u32, xbar: u32 },
    Unit { uid: usize, replica: u32 },
    Aux(NodeId),
    Reduce { group: usize, replica: u32 },
    Partition(usize),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Tensor(t) => write!(f, "{t}"),
            Operand::Weight { uid, replica, xbar } => write!(f, "u{uid}.r{replica}.x{xbar}"),
            Operand::Unit { uid, replica } => write!(f, "u{uid}.r{replica}"),
            Operand::Aux(id) => write!(f, "n{id}"),
            Operand::Reduce { group, replica } => write!(f, "g{group}.r{replica}"),
            Operand::Partition(p) => write!(f, "p{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub core: u32,
    pub opcode: Opcode,
    pub operand: Operand,
    pub bytes: u64,
    pub issue_cycle: u64,
    pub partition: usize,
    pub batch: u32,
    /// Global-memory address for LOAD/STORE/WRITE_XBAR.
    pub addr: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstructionStream {
    pub core: u32,
    pub instructions: Vec<Instruction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Read,
    Write,
}

impl TraceKind {
    pub fn label(&self) -> &'static str {
        match self {
            TraceKind::Read => "READ",
            TraceKind::Write => "WRITE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryTraceEntry {
    pub addr: u64,
    pub kind: TraceKind,
    pub cycle: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSegment {
    pub partition: usize,
    pub addr: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationSpan {
    pub tensor: TensorId,
    pub addr: u64,
    pub bytes: u64,
    pub from_partition: usize,
    pub to_partition: usize,
}

/// Bump/first-fit allocation of weight blobs and activation tensors in
/// global memory; 64-byte alignment, tensors freed after their last
/// consuming partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalAllocation {
    pub tensors: BTreeMap<String, (u64, u64)>,
    pub weight_segments: Vec<WeightSegment>,
    pub lifetimes: Vec<AllocationSpan>,
    pub limit_bytes: u64,
    pub high_water: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub streams: Vec<InstructionStream>,
    pub alloc: GlobalAllocation,
    pub trace: Vec<MemoryTraceEntry>,
    pub costs: Vec<PartitionCost>,
    /// Per-partition (start, end) cycles.
    pub partition_makespans: Vec<(u64, u64)>,
    pub weight_read_bytes: u64,
    pub load_bytes: u64,
    pub store_bytes: u64,
    pub batch: u32,
}

impl Schedule {
    pub fn dram_read_bytes(&self) -> u64 {
        self.weight_read_bytes + self.load_bytes
    }

    pub fn dram_write_bytes(&self) -> u64 {
        self.store_bytes
    }

    pub fn instruction_count(&self, opcode: Opcode) -> usize {
        self.streams
            .iter()
            .flat_map(|s| s.instructions.iter())
            .filter(|i| i.opcode == opcode)
            .count()
    }
}

fn align_up(v: u64, align: u64) -> u64 {
    v.div_ceil(align) * align
}

fn round_cycle(t: f64) -> u64 {
    t.round() as u64
}

struct TensorInfo {
    /// Aligned bytes of one sample's instance.
    chunk: u64,
    first_store: usize,
    last_use: usize,
    loaded: bool,
}

/// Live-set first-fit allocator over the activation region.
struct ActivationAllocator {
    base: u64,
    limit: u64,
    /// addr -> (bytes, tensor)
    live: BTreeMap<u64, (u64, TensorId)>,
    high_water: u64,
}

impl ActivationAllocator {
    fn allocate(&mut self, tensor: TensorId, bytes: u64, partition: usize) -> Result<u64> {
        let bytes = align_up(bytes.max(1), DRAM_BLOCK_BYTES);
        let mut candidate = self.base;
        for (&addr, &(len, _)) in &self.live {
            if candidate + bytes <= addr {
                break;
            }
            candidate = candidate.max(addr + len);
        }
        if candidate + bytes > self.limit {
            return Err(Error::GlobalMemoryOverflow {
                partition,
                needed: candidate + bytes - self.base,
                limit: self.limit.saturating_sub(self.base),
            });
        }
        self.live.insert(candidate, (bytes, tensor));
        self.high_water = self.high_water.max(candidate + bytes);
        Ok(candidate)
    }

    fn free(&mut self, tensor: TensorId) {
        self.live.retain(|_, &mut (_, t)| t != tensor);
    }
}

/// Schedule a finalized group at batch `b`.
pub fn schedule(w: &Workload, group: &PartitionGroup, b: u32) -> Result<Schedule> {
    let chip = w.chip;
    let costs = group_partition_costs(w, group, b);
    let act_bits = w.opts.activation_bits as u64;
    let n_parts = group.partitions.len();

    // Weight region: one segment per partition, in execution order.
    let mut weight_segments = Vec::with_capacity(n_parts);
    let mut cursor = 0u64;
    for (p, cost) in group.partitions.iter().zip(&costs) {
        let bytes = cost.weight_dram_bytes;
        weight_segments.push(WeightSegment {
            partition: p.index,
            addr: cursor,
            bytes,
        });
        cursor = align_up(cursor + bytes, DRAM_BLOCK_BYTES);
        if cursor > chip.dram.size_bytes {
            return Err(Error::GlobalMemoryOverflow {
                partition: p.index,
                needed: cursor,
                limit: chip.dram.size_bytes,
            });
        }
    }
    let act_base = cursor;

    // Tensor lifetimes from the io markers. `chunk` is the 64-byte-aligned
    // footprint of one sample's instance; a batch keeps all B instances
    // live until the tensor's last consuming partition.
    let mut info: BTreeMap<TensorId, TensorInfo> = BTreeMap::new();
    for (idx, p) in group.partitions.iter().enumerate() {
        for mk in &p.exits {
            let e = info.entry(mk.tensor).or_insert(TensorInfo {
                chunk: 0,
                first_store: idx,
                last_use: idx,
                loaded: false,
            });
            e.chunk += align_up(mk.bytes_per_sample, DRAM_BLOCK_BYTES);
            e.first_store = e.first_store.min(idx);
            e.last_use = e.last_use.max(idx);
        }
    }
    for (idx, p) in group.partitions.iter().enumerate() {
        for mk in &p.entries {
            let e = info.entry(mk.tensor).or_insert(TensorInfo {
                chunk: align_up(mk.bytes_per_sample, DRAM_BLOCK_BYTES),
                first_store: 0,
                last_use: idx,
                loaded: false,
            });
            e.chunk = e.chunk.max(align_up(mk.bytes_per_sample, DRAM_BLOCK_BYTES));
            e.last_use = e.last_use.max(idx);
            e.loaded = true;
        }
    }
    // Stored-only tensors are graph outputs: keep them to the end.
    for e in info.values_mut() {
        if !e.loaded {
            e.last_use = n_parts - 1;
        }
    }
    // Offset of each partition's stored slice inside a sample chunk, so
    // slices of a layer spanning partitions never collide.
    let mut slice_offsets: BTreeMap<(usize, TensorId), u64> = BTreeMap::new();
    {
        let mut next: BTreeMap<TensorId, u64> = BTreeMap::new();
        for (idx, p) in group.partitions.iter().enumerate() {
            for mk in &p.exits {
                let off = next.entry(mk.tensor).or_insert(0);
                slice_offsets.insert((idx, mk.tensor), *off);
                *off += align_up(mk.bytes_per_sample, DRAM_BLOCK_BYTES);
            }
        }
    }

    let mut alloc = ActivationAllocator {
        base: act_base,
        limit: chip.dram.size_bytes,
        live: BTreeMap::new(),
        high_water: act_base,
    };
    let mut addresses: BTreeMap<TensorId, u64> = BTreeMap::new();
    let mut lifetimes: Vec<AllocationSpan> = Vec::new();
    // The external input batch is resident before execution starts.
    if let Some(inp) = info.get(&TensorId::ExternalInput) {
        let bytes = inp.chunk * b as u64;
        let addr = alloc.allocate(TensorId::ExternalInput, bytes, 0)?;
        addresses.insert(TensorId::ExternalInput, addr);
        lifetimes.push(AllocationSpan {
            tensor: TensorId::ExternalInput,
            addr,
            bytes,
            from_partition: 0,
            to_partition: inp.last_use,
        });
    }

    let mut instrs: Vec<Instruction> = Vec::new();
    let mut trace: Vec<MemoryTraceEntry> = Vec::new();
    let mut weight_read_bytes = 0u64;
    let mut load_bytes = 0u64;
    let mut store_bytes = 0u64;
    let mut makespans = Vec::with_capacity(n_parts);

    let emit_trace_blocks =
        |trace: &mut Vec<MemoryTraceEntry>, addr: u64, bytes: u64, kind: TraceKind, t: f64| {
            let blocks = bytes.div_ceil(DRAM_BLOCK_BYTES);
            for k in 0..blocks {
                trace.push(MemoryTraceEntry {
                    addr: addr + k * DRAM_BLOCK_BYTES,
                    kind,
                    cycle: round_cycle(t + k as f64 * DRAM_BLOCK_BYTES as f64
                        / chip.dram.bandwidth_bytes_per_ns),
                });
            }
        };

    let mut t0 = 0.0f64;
    for (pi, (p, cost)) in group.partitions.iter().zip(&costs).enumerate() {
        // Free tensors that are dead before this partition runs.
        let dead: Vec<TensorId> = addresses
            .keys()
            .copied()
            .filter(|t| info[t].last_use < pi)
            .collect();
        for t in dead {
            alloc.free(t);
            addresses.remove(&t);
        }
        // Allocate this partition's stored tensors (all B instances).
        for mk in &p.exits {
            if let std::collections::btree_map::Entry::Vacant(slot) = addresses.entry(mk.tensor) {
                let inf = &info[&mk.tensor];
                let bytes = inf.chunk * b as u64;
                let addr = alloc.allocate(mk.tensor, bytes, pi)?;
                slot.insert(addr);
                lifetimes.push(AllocationSpan {
                    tensor: mk.tensor,
                    addr,
                    bytes,
                    from_partition: pi,
                    to_partition: inf.last_use,
                });
            }
        }

        let items = instances(p, w.model);
        let io_core = p.core_map.iter().map(|pl| pl.core).min().unwrap_or(0);
        let active_cores: BTreeSet<u32> = p
            .core_map
            .iter()
            .map(|pl| pl.core)
            .chain([io_core])
            .collect();

        // Weight replacement phase: every crossbar of every instance.
        let mut per_core_count: BTreeMap<u32, u64> = BTreeMap::new();
        for (&(uid, _), pl) in items.iter().zip(&p.core_map) {
            let tiles = w.model.units[uid].tiles(chip.xbar.rows).len() as u64;
            *per_core_count.entry(pl.core).or_insert(0) += tiles;
        }
        let mut per_core_pos: BTreeMap<u32, u64> = BTreeMap::new();
        let mut weight_off = weight_segments[pi].addr;
        for (&(uid, replica), pl) in items.iter().zip(&p.core_map) {
            let unit = &w.model.units[uid];
            for (xbar, (rows, chans)) in unit.tiles(chip.xbar.rows).into_iter().enumerate() {
                let bytes =
                    crate::bits_to_bytes(rows * chans * unit.weight_bits_per_element as u64);
                let pos = per_core_pos.entry(pl.core).or_insert(0);
                let count = per_core_count[&pl.core];
                let t = t0 + *pos as f64 * cost.write_ns / count as f64;
                *pos += 1;
                instrs.push(Instruction {
                    core: pl.core,
                    opcode: Opcode::WriteXbar,
                    operand: Operand::Weight {
                        uid,
                        replica,
                        xbar: xbar as u32,
                    },
                    bytes,
                    issue_cycle: round_cycle(t),
                    partition: pi,
                    batch: 0,
                    addr: Some(weight_off),
                });
                emit_trace_blocks(&mut trace, weight_off, bytes, TraceKind::Read, t);
                weight_read_bytes += bytes;
                weight_off += bytes;
            }
        }

        // Pipeline stage offsets within one sample.
        let mut stage_offset: BTreeMap<NodeId, f64> = BTreeMap::new();
        let mut off = 0.0;
        for s in &cost.stages {
            stage_offset.insert(s.layer_id, off);
            off += s.total_ns;
        }
        let first_layer = w.model.units[p.span.start].layer_id;

        // Placement list per layer, in core_map order.
        let mut layer_placements: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        for (i, &(uid, _)) in items.iter().enumerate() {
            layer_placements
                .entry(w.model.units[uid].layer_id)
                .or_default()
                .push(i);
        }

        for sample in 0..b {
            let base = t0 + cost.write_ns + sample as f64 * cost.steady_ns;
            // entry loads (sample's instance of each tensor)
            let mut io_t = base;
            for mk in &p.entries {
                let addr = addresses[&mk.tensor] + sample as u64 * info[&mk.tensor].chunk;
                instrs.push(Instruction {
                    core: io_core,
                    opcode: Opcode::Load,
                    operand: Operand::Tensor(mk.tensor),
                    bytes: mk.bytes_per_sample,
                    issue_cycle: round_cycle(io_t),
                    partition: pi,
                    batch: sample,
                    addr: Some(addr),
                });
                emit_trace_blocks(&mut trace, addr, mk.bytes_per_sample, TraceKind::Read, io_t);
                load_bytes += mk.bytes_per_sample;
                io_t += mk.bytes_per_sample as f64 / chip.dram.bandwidth_bytes_per_ns
                    + chip.dram.latency_ns;
            }
            let compute_start = base + cost.io_in_ns;

            for s in &cost.stages {
                let sstart = compute_start + stage_offset[&s.layer_id];
                let stats =
                    crate::network_ir::layer_stats(w.graph, s.layer_id, chip.xbar.cell_bits)
                        .expect("mappable");
                let slots = stats.invocations_per_sample.div_ceil(s.replication as u64);
                let blocks = slots.div_ceil(DEFAULT_MVM_COALESCE);
                for &item in &layer_placements[&s.layer_id] {
                    let (uid, replica) = items[item];
                    let core = p.core_map[item].core;
                    for blk in 0..blocks {
                        let t = sstart
                            + blk as f64 * DEFAULT_MVM_COALESCE as f64 * chip.xbar.mvm_latency_ns;
                        instrs.push(Instruction {
                            core,
                            opcode: Opcode::Mvm,
                            operand: Operand::Unit { uid, replica },
                            bytes: 0,
                            issue_cycle: round_cycle(t),
                            partition: pi,
                            batch: sample,
                            addr: None,
                        });
                    }
                }
                // accumulation-group reduction
                let after_mvm = sstart + s.mvm_ns;
                let range = w.model.layer_range(s.layer_id).unwrap();
                let lo = range.start.max(p.span.start);
                let hi = range.end.min(p.span.end);
                let mut groups: Vec<usize> = Vec::new();
                for unit in &w.model.units[lo..hi] {
                    if groups.last() != Some(&unit.group_id) {
                        groups.push(unit.group_id);
                    }
                }
                for gid in groups {
                    let span = &w.model.group_spans[gid];
                    if span.len() < 2 {
                        continue;
                    }
                    let out_len = w.model.units[span.start].out_len();
                    let psum_bytes =
                        out_len * stats.invocations_per_sample * w.opts.partial_sum_bytes as u64;
                    for replica in 0..p.replication[&s.layer_id] {
                        let members: Vec<usize> = items
                            .iter()
                            .enumerate()
                            .filter(|(_, &(uid, rep))| {
                                rep == replica && span.contains(&uid)
                            })
                            .map(|(i, _)| i)
                            .collect();
                        let leader = members
                            .iter()
                            .map(|&i| p.core_map[i].core)
                            .min()
                            .expect("group has members");
                        for &i in &members {
                            let core = p.core_map[i].core;
                            if core == leader {
                                continue;
                            }
                            instrs.push(Instruction {
                                core,
                                opcode: Opcode::Send,
                                operand: Operand::Reduce { group: gid, replica },
                                bytes: psum_bytes,
                                issue_cycle: round_cycle(after_mvm),
                                partition: pi,
                                batch: sample,
                                addr: None,
                            });
                            instrs.push(Instruction {
                                core: leader,
                                opcode: Opcode::Recv,
                                operand: Operand::Reduce { group: gid, replica },
                                bytes: psum_bytes,
                                issue_cycle: round_cycle(after_mvm),
                                partition: pi,
                                batch: sample,
                                addr: None,
                            });
                        }
                        instrs.push(Instruction {
                            core: leader,
                            opcode: Opcode::Vfu,
                            operand: Operand::Reduce { group: gid, replica },
                            bytes: psum_bytes,
                            issue_cycle: round_cycle(after_mvm),
                            partition: pi,
                            batch: sample,
                            addr: None,
                        });
                    }
                }
                // attached aux layers anchored at this stage
                let anchor_core = layer_placements[&s.layer_id]
                    .first()
                    .map(|&i| p.core_map[i].core)
                    .unwrap_or(io_core);
                let aux_t = sstart + s.mvm_ns + s.acc_ns;
                for &aux in &p.attached_aux {
                    let anchor = aux_anchor(w.graph, aux).unwrap_or(first_layer);
                    if anchor != s.layer_id {
                        continue;
                    }
                    let bytes =
                        crate::bits_to_bytes(w.graph.shape(aux).elems() * act_bits);
                    instrs.push(Instruction {
                        core: anchor_core,
                        opcode: Opcode::Vfu,
                        operand: Operand::Aux(aux),
                        bytes,
                        issue_cycle: round_cycle(aux_t),
                        partition: pi,
                        batch: sample,
                        addr: None,
                    });
                }
            }

            // exit stores (this partition's slice of the sample's instance)
            let mut io_t = compute_start + cost.fill_ns;
            for mk in &p.exits {
                let addr = addresses[&mk.tensor]
                    + sample as u64 * info[&mk.tensor].chunk
                    + slice_offsets[&(pi, mk.tensor)];
                instrs.push(Instruction {
                    core: io_core,
                    opcode: Opcode::Store,
                    operand: Operand::Tensor(mk.tensor),
                    bytes: mk.bytes_per_sample,
                    issue_cycle: round_cycle(io_t),
                    partition: pi,
                    batch: sample,
                    addr: Some(addr),
                });
                emit_trace_blocks(&mut trace, addr, mk.bytes_per_sample, TraceKind::Write, io_t);
                store_bytes += mk.bytes_per_sample;
                io_t += mk.bytes_per_sample as f64 / chip.dram.bandwidth_bytes_per_ns
                    + chip.dram.latency_ns;
            }
        }

        let t_end = t0 + cost.latency_ns;
        for &core in &active_cores {
            instrs.push(Instruction {
                core,
                opcode: Opcode::Barrier,
                operand: Operand::Partition(pi),
                bytes: 0,
                issue_cycle: round_cycle(t_end),
                partition: pi,
                batch: b,
                addr: None,
            });
        }
        makespans.push((round_cycle(t0), round_cycle(t_end)));
        t0 = t_end;
    }

    // Deterministic emission order.
    let mut order: Vec<usize> = (0..instrs.len()).collect();
    order.sort_by_key(|&i| (instrs[i].partition, instrs[i].issue_cycle, instrs[i].core, i));
    let ordered: Vec<Instruction> = order.into_iter().map(|i| instrs[i].clone()).collect();

    let mut by_core: BTreeMap<u32, Vec<Instruction>> = BTreeMap::new();
    for ins in ordered {
        by_core.entry(ins.core).or_default().push(ins);
    }
    let streams: Vec<InstructionStream> = by_core
        .into_iter()
        .map(|(core, instructions)| InstructionStream { core, instructions })
        .collect();

    trace.sort_by_key(|e| e.cycle);

    let alloc = GlobalAllocation {
        tensors: lifetimes
            .iter()
            .map(|s| (s.tensor.to_string(), (s.addr, s.bytes)))
            .collect(),
        weight_segments,
        lifetimes,
        limit_bytes: chip.dram.size_bytes,
        high_water: alloc.high_water,
    };

    Ok(Schedule {
        streams,
        alloc,
        trace,
        costs,
        partition_makespans: makespans,
        weight_read_bytes,
        load_bytes,
        store_bytes,
        batch: b,
    })
}

/// Line-oriented instruction dump: `core opcode operand bytes cycle`.
pub fn instructions_to_string(schedule: &Schedule) -> String {
    let mut s = format!("# compass-instructions v{ISA_FORMAT_VERSION}\n");
    let mut rows: Vec<&Instruction> = schedule
        .streams
        .iter()
        .flat_map(|st| st.instructions.iter())
        .collect();
    rows.sort_by_key(|i| (i.partition, i.issue_cycle, i.core));
    for i in rows {
        s.push_str(&format!(
            "{} {} {} {} {}\n",
            i.core,
            i.opcode.label(),
            i.operand,
            i.bytes,
            i.issue_cycle
        ));
    }
    s
}

/// DRAM-simulator trace: one `0x<ADDR> <READ|WRITE> <cycle>` line per
/// 64-byte transaction block.
pub fn trace_to_string(schedule: &Schedule) -> String {
    let mut s = format!("# compass-trace v{TRACE_FORMAT_VERSION}\n");
    for e in &schedule.trace {
        s.push_str(&format!("0x{:X} {} {}\n", e.addr, e.kind.label(), e.cycle));
    }
    s
}

/// Write the trace file.
pub fn emit_trace(schedule: &Schedule, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, trace_to_string(schedule))?;
    Ok(())
}

/// Dependence safety: for every tensor, all stores of partition k precede
/// (in cycle order) every load of that tensor in a later partition.
pub fn check_dependence_safety(schedule: &Schedule) -> std::result::Result<(), String> {
    let mut stores: BTreeMap<String, Vec<(usize, u64)>> = BTreeMap::new();
    let mut loads: BTreeMap<String, Vec<(usize, u64)>> = BTreeMap::new();
    for ins in schedule.streams.iter().flat_map(|s| s.instructions.iter()) {
        match (ins.opcode, &ins.operand) {
            (Opcode::Store, Operand::Tensor(t)) => {
                stores.entry(t.to_string()).or_default().push((ins.partition, ins.issue_cycle));
            }
            (Opcode::Load, Operand::Tensor(t)) => {
                loads.entry(t.to_string()).or_default().push((ins.partition, ins.issue_cycle));
            }
            _ => {}
        }
    }
    for (tensor, store_list) in &stores {
        if let Some(load_list) = loads.get(tensor) {
            for &(sp, sc) in store_list {
                for &(lp, lc) in load_list {
                    if lp > sp && lc < sc {
                        return Err(format!(
                            "tensor {tensor}: store in partition {sp} at cycle {sc} \
                             after load in partition {lp} at cycle {lc}"
                        ));
                    }
                }
            }
        }
    }
    // WRITE_XBAR only between partition executions: never after the
    // partition's first non-write instruction.
    for stream in &schedule.streams {
        let mut first_other: BTreeMap<usize, u64> = BTreeMap::new();
        for ins in &stream.instructions {
            if !matches!(ins.opcode, Opcode::WriteXbar | Opcode::Barrier) {
                let e = first_other.entry(ins.partition).or_insert(u64::MAX);
                *e = (*e).min(ins.issue_cycle);
            }
        }
        for ins in &stream.instructions {
            if ins.opcode == Opcode::WriteXbar {
                if let Some(&first) = first_other.get(&ins.partition) {
                    if ins.issue_cycle > first {
                        return Err(format!(
                            "core {}: WRITE_XBAR at cycle {} inside compute phase of partition {}",
                            stream.core, ins.issue_cycle, ins.partition
                        ));
                    }
                }
            }
        }
    }
    // Allocator: live ranges never overlap in address space.
    let spans = &schedule.alloc.lifetimes;
    for (i, a) in spans.iter().enumerate() {
        for b in &spans[i + 1..] {
            let addr_overlap = a.addr < b.addr + b.bytes && b.addr < a.addr + a.bytes;
            let life_overlap =
                a.from_partition <= b.to_partition && b.from_partition <= a.to_partition;
            if addr_overlap && life_overlap {
                return Err(format!(
                    "tensors {} and {} overlap in memory while both live",
                    a.tensor, b.tensor
                ));
            }
        }
    }
    Ok(())
}
