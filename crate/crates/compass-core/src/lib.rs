//! COMPASS: a compiler framework for crossbar-based processing-in-memory
//! DNN accelerators whose in-memory footprint is smaller than the model.
//!
//! The pipeline decomposes a network into core-sized partition units,
//! searches for a partitioning that balances layer pipelining, weight
//! replication and weight-replacement cost with a genetic algorithm, and
//! lowers the result to per-core instruction streams, a DRAM access trace
//! and latency/energy/EDP reports.

pub mod cli;
pub mod cost_model;
pub mod decomposer;
pub mod error;
pub mod ga;
pub mod hw_model;
pub mod network_ir;
pub mod partitioner;
pub mod scheduler;

pub use error::{Error, Result};

/// Bytes needed to hold `bits` bits. All DRAM byte accounting goes through
/// this so the cost model and the scheduler agree exactly.
pub fn bits_to_bytes(bits: u64) -> u64 {
    bits.div_ceil(8)
}

/// FNV-1a 64-bit hash, used for report provenance.
pub fn fnv1a64(data: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in data {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
