//! Model decomposition into partition units and the partition validity map.
//!
//! A partition unit is the minimum partitioning granularity: a weight
//! slice of one Conv/Linear layer sized to fit the crossbars of a single
//! core. Layers whose full input dimension does not fit one core are
//! additionally split along input rows; the sibling units of one output
//! slice form an accumulation group whose partial sums are reduced
//! on-chip, so partitions never cut through a group.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::hw_model::ChipSpec;
use crate::network_ir::{layer_stats, NetworkGraph, NodeId};

/// One weight slice sized for a single core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionUnit {
    pub uid: usize,
    pub layer_id: NodeId,
    /// Half-open output-channel range.
    pub out_slice: (u64, u64),
    /// Half-open input-row range of the flattened weight matrix.
    pub in_block: (u64, u64),
    pub col_tiles: u32,
    pub row_tiles: u32,
    pub crossbars_needed: u32,
    pub weight_bits: u64,
    /// Accumulation group (same layer + out_slice).
    pub group_id: usize,
    /// Output channels per full crossbar column tile.
    pub chans_per_tile: u32,
    pub weight_bits_per_element: u32,
}

impl PartitionUnit {
    pub fn out_len(&self) -> u64 {
        self.out_slice.1 - self.out_slice.0
    }

    pub fn in_len(&self) -> u64 {
        self.in_block.1 - self.in_block.0
    }

    /// Occupied (rows, channels) of every crossbar of this unit, column
    /// tiles outer, row tiles inner.
    pub fn tiles(&self, xbar_rows: u32) -> Vec<(u64, u64)> {
        let mut out = Vec::with_capacity(self.crossbars_needed as usize);
        for c in 0..self.col_tiles as u64 {
            let c0 = self.out_slice.0 + c * self.chans_per_tile as u64;
            let c1 = (c0 + self.chans_per_tile as u64).min(self.out_slice.1);
            for r in 0..self.row_tiles as u64 {
                let r0 = self.in_block.0 + r * xbar_rows as u64;
                let r1 = (r0 + xbar_rows as u64).min(self.in_block.1);
                out.push((r1 - r0, c1 - c0));
            }
        }
        out
    }

    /// Bytes fetched from DRAM to program one instance of this unit,
    /// rounded up per crossbar.
    pub fn weight_dram_bytes(&self, xbar_rows: u32) -> u64 {
        self.tiles(xbar_rows)
            .iter()
            .map(|(rows, chans)| {
                crate::bits_to_bytes(rows * chans * self.weight_bits_per_element as u64)
            })
            .sum()
    }

    /// Total crossbar rows programmed when writing one instance.
    pub fn rows_written(&self) -> u64 {
        self.in_len() * self.col_tiles as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecomposedModel {
    pub units: Vec<PartitionUnit>,
    /// Contiguous uid span of every mappable layer, topological order.
    pub layer_ranges: Vec<(NodeId, Range<usize>)>,
    /// Uid span of every accumulation group, indexed by group id.
    pub group_spans: Vec<Range<usize>>,
    /// `aligned[p]` is true when boundary position `p` does not split an
    /// accumulation group. Length M + 1.
    pub aligned: Vec<bool>,
}

impl DecomposedModel {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn is_aligned(&self, pos: usize) -> bool {
        self.aligned[pos]
    }

    pub fn next_aligned(&self, pos: usize) -> usize {
        (pos + 1..=self.len())
            .find(|&p| self.aligned[p])
            .expect("position M is always aligned")
    }

    /// Group-aligned positions in (lo, hi], ascending.
    pub fn aligned_in(&self, lo: usize, hi: usize) -> Vec<usize> {
        (lo + 1..=hi).filter(|&p| self.aligned[p]).collect()
    }

    pub fn layer_range(&self, layer: NodeId) -> Option<&Range<usize>> {
        self.layer_ranges
            .iter()
            .find(|(id, _)| *id == layer)
            .map(|(_, r)| r)
    }

    /// Distinct layers with units in `span`, in uid order.
    pub fn layers_in(&self, span: &Range<usize>) -> Vec<NodeId> {
        let mut layers = Vec::new();
        for u in &self.units[span.clone()] {
            if layers.last() != Some(&u.layer_id) {
                layers.push(u.layer_id);
            }
        }
        layers
    }
}

/// Split every Conv/Linear layer of `graph` into partition units for `chip`.
///
/// Tiling is greedy: the largest output slice whose full input fits one
/// core; when even one column tile of the full input exceeds a core, the
/// layer also splits along input rows into core-sized accumulation-group
/// siblings.
pub fn decompose(graph: &NetworkGraph, chip: &ChipSpec) -> Result<DecomposedModel> {
    chip.validate()?;
    if graph.mappable_nodes().is_empty() {
        return Err(Error::validation(
            "network",
            "no crossbar-mappable (conv/linear) layers",
        ));
    }
    let xbar_rows = chip.xbar.rows as u64;
    let core_xbars = chip.core.crossbars_per_core;

    let mut units: Vec<PartitionUnit> = Vec::new();
    let mut layer_ranges = Vec::new();
    let mut group_spans: Vec<Range<usize>> = Vec::new();

    for id in graph.mappable_nodes() {
        let stats = layer_stats(graph, id, chip.xbar.cell_bits)?;
        let wbits = graph.node(id).weight_bits_per_element as u64;
        let cells_per_weight = wbits.div_ceil(chip.xbar.cell_bits as u64);
        let chans_per_xbar = chip.xbar.cols as u64 / cells_per_weight;
        if chans_per_xbar == 0 {
            return Err(Error::UnmappableLayer {
                layer: id,
                reason: format!(
                    "a {wbits}-bit weight needs {cells_per_weight} cells but crossbars have only {} columns",
                    chip.xbar.cols
                ),
            });
        }
        let row_tiles = stats.rows.div_ceil(xbar_rows) as u32;
        let layer_start = units.len();

        if row_tiles <= core_xbars {
            // Output-dimension split only: widest slice a core can hold
            // together with the full input rows.
            let cols_per_unit = (core_xbars / row_tiles) as u64;
            let chans_per_unit = cols_per_unit * chans_per_xbar;
            let mut c0 = 0u64;
            while c0 < stats.cout {
                let c1 = (c0 + chans_per_unit).min(stats.cout);
                let col_tiles = (c1 - c0).div_ceil(chans_per_xbar) as u32;
                let group_id = group_spans.len();
                let uid = units.len();
                units.push(PartitionUnit {
                    uid,
                    layer_id: id,
                    out_slice: (c0, c1),
                    in_block: (0, stats.rows),
                    col_tiles,
                    row_tiles,
                    crossbars_needed: col_tiles * row_tiles,
                    weight_bits: (c1 - c0) * stats.rows * wbits,
                    group_id,
                    chans_per_tile: chans_per_xbar as u32,
                    weight_bits_per_element: wbits as u32,
                });
                group_spans.push(uid..uid + 1);
                c0 = c1;
            }
        } else {
            // Input rows exceed one core even for a single column tile:
            // one group per column tile, rows chunked core-sized.
            let rows_per_unit = core_xbars as u64 * xbar_rows;
            let mut c0 = 0u64;
            while c0 < stats.cout {
                let c1 = (c0 + chans_per_xbar).min(stats.cout);
                let group_id = group_spans.len();
                let group_start = units.len();
                let mut r0 = 0u64;
                while r0 < stats.rows {
                    let r1 = (r0 + rows_per_unit).min(stats.rows);
                    let tiles = (r1 - r0).div_ceil(xbar_rows) as u32;
                    let uid = units.len();
                    units.push(PartitionUnit {
                        uid,
                        layer_id: id,
                        out_slice: (c0, c1),
                        in_block: (r0, r1),
                        col_tiles: 1,
                        row_tiles: tiles,
                        crossbars_needed: tiles,
                        weight_bits: (c1 - c0) * (r1 - r0) * wbits,
                        group_id,
                        chans_per_tile: chans_per_xbar as u32,
                        weight_bits_per_element: wbits as u32,
                    });
                    r0 = r1;
                }
                group_spans.push(group_start..units.len());
                c0 = c1;
            }
        }
        layer_ranges.push((id, layer_start..units.len()));
    }

    // An accumulation group is atomic, so it must fit a chip on its own.
    for (gid, span) in group_spans.iter().enumerate() {
        let sizes: Vec<u32> = units[span.clone()]
            .iter()
            .map(|u| u.crossbars_needed)
            .collect();
        if !ffd_feasible(&sizes, chip.num_cores, core_xbars) {
            return Err(Error::UnmappableLayer {
                layer: units[span.start].layer_id,
                reason: format!(
                    "accumulation group {gid} needs {} crossbars but the chip packs only {}",
                    sizes.iter().map(|&s| s as u64).sum::<u64>(),
                    chip.total_crossbars()
                ),
            });
        }
    }

    let m = units.len();
    let mut aligned = vec![false; m + 1];
    aligned[0] = true;
    aligned[m] = true;
    for span in &group_spans {
        aligned[span.end] = true;
    }

    Ok(DecomposedModel {
        units,
        layer_ranges,
        group_spans,
        aligned,
    })
}

/// Precomputed legal (start, end) spans under the chip constraints at
/// replication 1.
#[derive(Debug, Clone)]
pub struct ValidityMap {
    pub m: usize,
    /// For a group-aligned start i, the largest group-aligned j such that
    /// every group-aligned j' in (i, j] yields a valid span [i, j').
    /// For unaligned i, `max_end[i] == i`.
    max_end: Vec<usize>,
    aligned: Vec<bool>,
    unit_xbars: Vec<u32>,
    prefix_xbars: Vec<u64>,
    num_cores: u32,
    xbars_per_core: u32,
}

impl ValidityMap {
    pub fn max_end(&self, start: usize) -> usize {
        self.max_end[start]
    }

    pub fn is_aligned(&self, pos: usize) -> bool {
        self.aligned[pos]
    }

    /// Full semantic check: group alignment on both ends, chip crossbar
    /// budget, and first-fit-decreasing core packing at replication 1.
    pub fn is_valid(&self, start: usize, end: usize) -> bool {
        if start >= end || end > self.m {
            return false;
        }
        if !self.aligned[start] || !self.aligned[end] {
            return false;
        }
        let total = self.prefix_xbars[end] - self.prefix_xbars[start];
        if total > self.num_cores as u64 * self.xbars_per_core as u64 {
            return false;
        }
        ffd_feasible(
            &self.unit_xbars[start..end],
            self.num_cores,
            self.xbars_per_core,
        )
    }

    /// 0/1 matrix (row = start, col = end) for heatmap plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for start in 0..self.m {
            let row: Vec<&str> = (0..=self.m)
                .map(|end| if self.is_valid(start, end) { "1" } else { "0" })
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Scan the group-aligned frontier of every start position.
pub fn build_validity_map(model: &DecomposedModel, chip: &ChipSpec) -> ValidityMap {
    let m = model.len();
    let unit_xbars: Vec<u32> = model.units.iter().map(|u| u.crossbars_needed).collect();
    let mut prefix_xbars = vec![0u64; m + 1];
    for i in 0..m {
        prefix_xbars[i + 1] = prefix_xbars[i] + unit_xbars[i] as u64;
    }
    let mut vmap = ValidityMap {
        m,
        max_end: vec![0; m],
        aligned: model.aligned.clone(),
        unit_xbars,
        prefix_xbars,
        num_cores: chip.num_cores,
        xbars_per_core: chip.core.crossbars_per_core,
    };
    for start in 0..m {
        if !vmap.aligned[start] {
            vmap.max_end[start] = start;
            continue;
        }
        let mut frontier = start;
        let mut end = start;
        loop {
            end = match (end + 1..=m).find(|&p| vmap.aligned[p]) {
                Some(p) => p,
                None => break,
            };
            if vmap.is_valid(start, end) {
                frontier = end;
            } else {
                break;
            }
        }
        vmap.max_end[start] = frontier;
    }
    vmap
}

/// First-fit-decreasing feasibility: `sizes` in uid order, stable-sorted
/// descending so ties keep uid order. Units never split across cores.
pub(crate) fn ffd_feasible(sizes: &[u32], num_bins: u32, cap: u32) -> bool {
    ffd_place(sizes, num_bins, cap).is_some()
}

/// First-fit-decreasing placement. Returns, per input item, the bin index
/// and the offset within the bin, or None when the items do not pack.
pub(crate) fn ffd_place(sizes: &[u32], num_bins: u32, cap: u32) -> Option<Vec<(u32, u32)>> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(sizes[i]));
    let mut used = vec![0u32; num_bins as usize];
    let mut placements = vec![(0u32, 0u32); sizes.len()];
    for &i in &order {
        let size = sizes[i];
        if size > cap {
            return None;
        }
        let bin = (0..num_bins as usize).find(|&b| used[b] + size <= cap)?;
        placements[i] = (bin as u32, used[bin]);
        used[bin] += size;
    }
    Some(placements)
}
