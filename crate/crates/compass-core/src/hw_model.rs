//! Hardware model: crossbar, core, chip and DRAM parameters.
//!
//! Chips are described by a flat `key = value` configuration file (see
//! `docs/formats.md`). Three builtin configurations named "S", "M" and "L"
//! ship with the crate; their in-memory capacities are 1.125, 2.0 and
//! 4.5 MiB. Energy and latency values in the builtins are calibration
//! parameters, not measurements; override them through config files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHIP_FORMAT_VERSION: u32 = 1;

/// One crossbar array. A weight of `w` bits occupies `w / cell_bits`
/// adjacent cells in a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarSpec {
    /// Wordlines (input rows).
    pub rows: u32,
    /// Bitlines (cell columns).
    pub cols: u32,
    /// Bits stored per cell.
    pub cell_bits: u32,
    /// Time for one matrix-vector invocation.
    pub mvm_latency_ns: f64,
    /// Energy for one matrix-vector invocation of one crossbar.
    pub mvm_energy_pj: f64,
    /// Time to program one crossbar row.
    pub row_write_latency_ns: f64,
    /// Energy per cell bit written.
    pub write_energy_pj_per_bit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSpec {
    pub crossbars_per_core: u32,
    pub vfu_count: u32,
    /// Aggregate vector-unit throughput of one core.
    pub vfu_throughput_elems_per_ns: f64,
    pub local_mem_bytes: u64,
    /// Sum of the VFU, local memory and control unit power entries.
    pub power_active_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DramSpec {
    pub bandwidth_bytes_per_ns: f64,
    /// Fixed access latency charged once per entry/exit tensor.
    pub latency_ns: f64,
    pub energy_pj_per_byte: f64,
    /// Capacity of the global (off-chip) memory backing weight and
    /// activation buffers.
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipSpec {
    pub name: String,
    pub num_cores: u32,
    pub core: CoreSpec,
    pub xbar: CrossbarSpec,
    /// Shared on-chip bus.
    pub bus_bandwidth_bytes_per_ns: f64,
    pub bus_latency_ns: f64,
    /// Whole-chip power, charged over the makespan.
    pub static_power_w: f64,
    pub dram: DramSpec,
}

impl ChipSpec {
    pub fn core_capacity_bits(&self) -> u64 {
        self.core.crossbars_per_core as u64
            * self.xbar.rows as u64
            * self.xbar.cols as u64
            * self.xbar.cell_bits as u64
    }

    pub fn chip_capacity_bits(&self) -> u64 {
        self.num_cores as u64 * self.core_capacity_bits()
    }

    pub fn total_crossbars(&self) -> u32 {
        self.num_cores * self.core.crossbars_per_core
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cores < 1 {
            return Err(Error::validation("num_cores", "must be >= 1"));
        }
        if self.core.crossbars_per_core < 1 {
            return Err(Error::validation("crossbars_per_core", "must be >= 1"));
        }
        if self.xbar.rows == 0 {
            return Err(Error::validation("xbar_rows", "must be > 0"));
        }
        if self.xbar.cols == 0 {
            return Err(Error::validation("xbar_cols", "must be > 0"));
        }
        if self.xbar.cell_bits < 1 {
            return Err(Error::validation("cell_bits", "must be >= 1"));
        }
        let nonneg = [
            ("mvm_latency_ns", self.xbar.mvm_latency_ns),
            ("mvm_energy_pj", self.xbar.mvm_energy_pj),
            ("row_write_latency_ns", self.xbar.row_write_latency_ns),
            ("write_energy_pj_per_bit", self.xbar.write_energy_pj_per_bit),
            ("core_power_active_mw", self.core.power_active_mw),
            ("static_power_w", self.static_power_w),
            ("bus_latency_ns", self.bus_latency_ns),
            ("dram_latency_ns", self.dram.latency_ns),
            ("dram_energy_pj_per_byte", self.dram.energy_pj_per_byte),
        ];
        for (field, v) in nonneg {
            if v.is_nan() || v < 0.0 {
                return Err(Error::validation(field, "must be >= 0"));
            }
        }
        let positive = [
            ("dram_bandwidth_bytes_per_ns", self.dram.bandwidth_bytes_per_ns),
            ("bus_bandwidth_bytes_per_ns", self.bus_bandwidth_bytes_per_ns),
            ("vfu_throughput_elems_per_ns", self.core.vfu_throughput_elems_per_ns),
        ];
        for (field, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::validation(field, "must be > 0"));
            }
        }
        Ok(())
    }

    /// Serialize to the flat key/value configuration format.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# COMPASS chip configuration");
        let _ = writeln!(s, "format_version = {}", CHIP_FORMAT_VERSION);
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "num_cores = {}", self.num_cores);
        let _ = writeln!(s);
        let _ = writeln!(s, "# core");
        let _ = writeln!(s, "crossbars_per_core = {}", self.core.crossbars_per_core);
        let _ = writeln!(s, "vfu_count = {}", self.core.vfu_count);
        let _ = writeln!(
            s,
            "vfu_throughput_elems_per_ns = {}",
            self.core.vfu_throughput_elems_per_ns
        );
        let _ = writeln!(s, "local_mem_bytes = {}", self.core.local_mem_bytes);
        let _ = writeln!(s, "core_power_active_mw = {}", self.core.power_active_mw);
        let _ = writeln!(s);
        let _ = writeln!(s, "# crossbar");
        let _ = writeln!(s, "xbar_rows = {}", self.xbar.rows);
        let _ = writeln!(s, "xbar_cols = {}", self.xbar.cols);
        let _ = writeln!(s, "cell_bits = {}", self.xbar.cell_bits);
        let _ = writeln!(s, "mvm_latency_ns = {}", self.xbar.mvm_latency_ns);
        let _ = writeln!(s, "mvm_energy_pj = {}", self.xbar.mvm_energy_pj);
        let _ = writeln!(s, "row_write_latency_ns = {}", self.xbar.row_write_latency_ns);
        let _ = writeln!(
            s,
            "write_energy_pj_per_bit = {}",
            self.xbar.write_energy_pj_per_bit
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "# interconnect");
        let _ = writeln!(
            s,
            "bus_bandwidth_bytes_per_ns = {}",
            self.bus_bandwidth_bytes_per_ns
        );
        let _ = writeln!(s, "bus_latency_ns = {}", self.bus_latency_ns);
        let _ = writeln!(s);
        let _ = writeln!(s, "# chip power");
        let _ = writeln!(s, "static_power_w = {}", self.static_power_w);
        let _ = writeln!(s);
        let _ = writeln!(s, "# dram");
        let _ = writeln!(
            s,
            "dram_bandwidth_bytes_per_ns = {}",
            self.dram.bandwidth_bytes_per_ns
        );
        let _ = writeln!(s, "dram_latency_ns = {}", self.dram.latency_ns);
        let _ = writeln!(s, "dram_energy_pj_per_byte = {}", self.dram.energy_pj_per_byte);
        let _ = writeln!(s, "dram_size_bytes = {}", self.dram.size_bytes);
        s
    }

    pub fn from_config_str(text: &str) -> Result<ChipSpec> {
        let kv = parse_flat_kv(text)?;
        let version: u32 = get(&kv, "format_version")?;
        if version != CHIP_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported chip format_version {version} (expected {CHIP_FORMAT_VERSION})"
            )));
        }
        let spec = ChipSpec {
            name: get_str(&kv, "name")?,
            num_cores: get(&kv, "num_cores")?,
            core: CoreSpec {
                crossbars_per_core: get(&kv, "crossbars_per_core")?,
                vfu_count: get(&kv, "vfu_count")?,
                vfu_throughput_elems_per_ns: get(&kv, "vfu_throughput_elems_per_ns")?,
                local_mem_bytes: get(&kv, "local_mem_bytes")?,
                power_active_mw: get(&kv, "core_power_active_mw")?,
            },
            xbar: CrossbarSpec {
                rows: get(&kv, "xbar_rows")?,
                cols: get(&kv, "xbar_cols")?,
                cell_bits: get(&kv, "cell_bits")?,
                mvm_latency_ns: get(&kv, "mvm_latency_ns")?,
                mvm_energy_pj: get(&kv, "mvm_energy_pj")?,
                row_write_latency_ns: get(&kv, "row_write_latency_ns")?,
                write_energy_pj_per_bit: get(&kv, "write_energy_pj_per_bit")?,
            },
            bus_bandwidth_bytes_per_ns: get(&kv, "bus_bandwidth_bytes_per_ns")?,
            bus_latency_ns: get(&kv, "bus_latency_ns")?,
            static_power_w: get(&kv, "static_power_w")?,
            dram: DramSpec {
                bandwidth_bytes_per_ns: get(&kv, "dram_bandwidth_bytes_per_ns")?,
                latency_ns: get(&kv, "dram_latency_ns")?,
                energy_pj_per_byte: get(&kv, "dram_energy_pj_per_byte")?,
                size_bytes: get(&kv, "dram_size_bytes")?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_flat_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse(format!(
                "line {}: expected 'key = value', got '{raw}'",
                lineno + 1
            )));
        };
        let key = k.trim().to_string();
        if kv.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Parse(format!("duplicate key '{key}'")));
        }
    }
    Ok(kv)
}

fn get_str(kv: &BTreeMap<String, String>, key: &str) -> Result<String> {
    kv.get(key)
        .cloned()
        .ok_or_else(|| Error::Parse(format!("missing key '{key}'")))
}

fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = get_str(kv, key)?;
    raw.parse()
        .map_err(|_| Error::Parse(format!("key '{key}': cannot parse value '{raw}'")))
}

/// Load and validate a chip configuration file.
pub fn load_chip_spec(path: impl AsRef<Path>) -> Result<ChipSpec> {
    let text = std::fs::read_to_string(path)?;
    ChipSpec::from_config_str(&text)
}

pub fn builtin_chip_names() -> &'static [&'static str] {
    &["S", "M", "L"]
}

/// One of the three builtin chip configurations S, M or L.
///
/// Geometry and static power follow the reference sizing; per-event
/// energies and latencies are calibration defaults.
pub fn builtin_chip(name: &str) -> Result<ChipSpec> {
    let (num_cores, xbars, static_power_w) = match name {
        "S" => (16, 9, 1.57),
        "M" => (16, 16, 2.80),
        "L" => (36, 16, 6.30),
        other => return Err(Error::UnknownChip(other.to_string())),
    };
    let spec = ChipSpec {
        name: name.to_string(),
        num_cores,
        core: CoreSpec {
            crossbars_per_core: xbars,
            vfu_count: 12,
            vfu_throughput_elems_per_ns: 8.0,
            local_mem_bytes: 64 * 1024,
            power_active_mw: 48.8, // 22.8 VFU + 18.0 local memory + 8.0 control
        },
        xbar: CrossbarSpec {
            rows: 256,
            cols: 256,
            cell_bits: 1,
            mvm_latency_ns: 100.0,
            mvm_energy_pj: 600.0,
            row_write_latency_ns: 100.0,
            write_energy_pj_per_bit: 1.0,
        },
        bus_bandwidth_bytes_per_ns: 16.0,
        bus_latency_ns: 10.0,
        static_power_w,
        dram: DramSpec {
            bandwidth_bytes_per_ns: 12.8,
            latency_ns: 100.0,
            energy_pj_per_byte: 20.0,
            size_bytes: 8 * 1024 * 1024 * 1024,
        },
    };
    spec.validate().expect("builtin chips are valid");
    Ok(spec)
}

/// Resolve a chip argument: a builtin name or a config file path.
pub fn resolve_chip(arg: &str) -> Result<ChipSpec> {
    if builtin_chip_names().contains(&arg) {
        builtin_chip(arg)
    } else if Path::new(arg).exists() {
        load_chip_spec(arg)
    } else {
        Err(Error::UnknownChip(arg.to_string()))
    }
}
