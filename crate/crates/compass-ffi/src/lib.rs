//! C ABI for the COMPASS compiler.
//!
//! Handles are opaque; every constructor reports a `compass_status` and
//! writes the handle through an out-pointer. Strings returned by
//! `compass_result_*` and `compass_last_error` are heap-allocated and
//! must be released with `compass_string_free`. The generated header
//! lives in `include/compass.h`.

#![allow(non_camel_case_types)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use compass_core::cli::{compile_loaded, CompileArtifacts, CompileRequest, GaOverrides, Scheme};
use compass_core::cost_model::Objective;
use compass_core::error::Error;
use compass_core::hw_model::ChipSpec;
use compass_core::network_ir::NetworkGraph;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum compass_status {
    Ok = 0,
    NullArgument,
    InvalidUtf8,
    ParseError,
    ValidationError,
    UnknownChip,
    UnknownModel,
    GraphError,
    Unmappable,
    PackingError,
    MemoryOverflow,
    IoError,
    InternalError,
}

/// Partitioning scheme selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum compass_scheme {
    Compass = 0,
    Greedy = 1,
    Layerwise = 2,
}

/// Optimization objective selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum compass_objective {
    Latency = 0,
    Edp = 1,
}

/// Compile options. Zero-initialized integer fields select the defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct compass_options {
    pub scheme: compass_scheme,
    pub objective: compass_objective,
    /// Batch size; 0 selects 1.
    pub batch: u32,
    pub seed: u64,
    pub overlap_writes: bool,
    /// Activation precision in bits; 0 selects 4.
    pub activation_bits: u32,
    /// GA generations; 0 selects the default (30).
    pub generations: u32,
    /// GA population; 0 selects the default (100).
    pub population: u32,
    /// Worker threads; 0 uses all cores.
    pub workers: u32,
}

/// An opaque, validated chip configuration.
pub struct compass_chip {
    inner: ChipSpec,
}

/// An opaque, validated network graph.
pub struct compass_network {
    inner: NetworkGraph,
}

/// An opaque compile result holding the report and artifact strings.
pub struct compass_result {
    artifacts: CompileArtifacts,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> compass_status {
    match err {
        Error::Parse(_) => compass_status::ParseError,
        Error::Validation { .. } => compass_status::ValidationError,
        Error::UnknownChip(_) => compass_status::UnknownChip,
        Error::UnknownModel(_) => compass_status::UnknownModel,
        Error::Cycle(_) | Error::Shape { .. } | Error::NotMappable(_) => {
            compass_status::GraphError
        }
        Error::UnmappableLayer { .. } => compass_status::Unmappable,
        Error::PackingFailure(_) | Error::DegenerateExpectation(..) => {
            compass_status::PackingError
        }
        Error::GlobalMemoryOverflow { .. } => compass_status::MemoryOverflow,
        Error::Io(_) => compass_status::IoError,
    }
}

fn fail(err: &Error) -> compass_status {
    set_last_error(&err.to_string());
    status_of(err)
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string or NULL.
unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, compass_status> {
    if ptr.is_null() {
        set_last_error("null string argument");
        return Err(compass_status::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_last_error("string argument is not valid UTF-8");
        compass_status::InvalidUtf8
    })
}

fn guarded<T>(
    out: *mut *mut T,
    f: impl FnOnce() -> Result<T, compass_status>,
) -> compass_status {
    if out.is_null() {
        set_last_error("null out-pointer");
        return compass_status::NullArgument;
    }
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(value)) => {
            unsafe { *out = Box::into_raw(Box::new(value)) };
            compass_status::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => {
            set_last_error("internal panic");
            compass_status::InternalError
        }
    }
}

fn to_c_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .map_or(ptr::null_mut(), CString::into_raw)
}

/// Returns the last error message of this thread, or NULL when no error
/// was recorded. Free with `compass_string_free`.
#[no_mangle]
pub extern "C" fn compass_last_error() -> *mut c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null_mut(), |c| c.clone().into_raw())
    })
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must have been returned by a compass_* function and not freed yet.
#[no_mangle]
pub unsafe extern "C" fn compass_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds one of the builtin chips ("S", "M" or "L").
///
/// # Safety
/// `name` must be a valid NUL-terminated string; `out` non-NULL.
#[no_mangle]
pub unsafe extern "C" fn compass_chip_builtin(
    name: *const c_char,
    out: *mut *mut compass_chip,
) -> compass_status {
    guarded(out, || {
        let name = read_str(name)?;
        compass_core::hw_model::builtin_chip(name)
            .map(|inner| compass_chip { inner })
            .map_err(|e| fail(&e))
    })
}

/// Loads a chip configuration file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` non-NULL.
#[no_mangle]
pub unsafe extern "C" fn compass_chip_load(
    path: *const c_char,
    out: *mut *mut compass_chip,
) -> compass_status {
    guarded(out, || {
        let path = read_str(path)?;
        compass_core::hw_model::load_chip_spec(path)
            .map(|inner| compass_chip { inner })
            .map_err(|e| fail(&e))
    })
}

/// Total crossbar capacity of the chip in bits.
///
/// # Safety
/// `chip` must be a live handle from compass_chip_builtin/load.
#[no_mangle]
pub unsafe extern "C" fn compass_chip_capacity_bits(chip: *const compass_chip) -> u64 {
    if chip.is_null() {
        return 0;
    }
    (*chip).inner.chip_capacity_bits()
}

/// # Safety
/// `chip` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn compass_chip_free(chip: *mut compass_chip) {
    if !chip.is_null() {
        drop(Box::from_raw(chip));
    }
}

/// Builds one of the builtin benchmark networks ("vgg16", "resnet18",
/// "squeezenet").
///
/// # Safety
/// `name` must be a valid NUL-terminated string; `out` non-NULL.
#[no_mangle]
pub unsafe extern "C" fn compass_network_builtin(
    name: *const c_char,
    out: *mut *mut compass_network,
) -> compass_status {
    guarded(out, || {
        let name = read_str(name)?;
        compass_core::network_ir::build_benchmark(name)
            .map(|inner| compass_network { inner })
            .map_err(|e| fail(&e))
    })
}

/// Loads a network description file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` non-NULL.
#[no_mangle]
pub unsafe extern "C" fn compass_network_load(
    path: *const c_char,
    out: *mut *mut compass_network,
) -> compass_status {
    guarded(out, || {
        let path = read_str(path)?;
        compass_core::network_ir::load_network(path)
            .map(|inner| compass_network { inner })
            .map_err(|e| fail(&e))
    })
}

/// Total weight footprint of the network in bits.
///
/// # Safety
/// `net` must be a live handle from compass_network_builtin/load.
#[no_mangle]
pub unsafe extern "C" fn compass_network_weight_bits(net: *const compass_network) -> u64 {
    if net.is_null() {
        return 0;
    }
    let (linear, conv) = (*net).inner.weight_footprint_bits();
    linear + conv
}

/// # Safety
/// `net` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn compass_network_free(net: *mut compass_network) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Fills `opts` with the defaults (compass scheme, latency objective,
/// batch 1, seed 0).
///
/// # Safety
/// `opts` must point to writable memory for one compass_options.
#[no_mangle]
pub unsafe extern "C" fn compass_options_default(opts: *mut compass_options) {
    if opts.is_null() {
        return;
    }
    *opts = compass_options {
        scheme: compass_scheme::Compass,
        objective: compass_objective::Latency,
        batch: 1,
        seed: 0,
        overlap_writes: false,
        activation_bits: 4,
        generations: 0,
        population: 0,
        workers: 0,
    };
}

/// Runs the full pipeline (decompose, partition, optimize, schedule) and
/// returns an opaque result handle.
///
/// # Safety
/// `chip` and `net` must be live handles; `opts` may be NULL for
/// defaults; `out` non-NULL.
#[no_mangle]
pub unsafe extern "C" fn compass_compile(
    chip: *const compass_chip,
    net: *const compass_network,
    opts: *const compass_options,
    out: *mut *mut compass_result,
) -> compass_status {
    guarded(out, || {
        if chip.is_null() || net.is_null() {
            set_last_error("null chip or network handle");
            return Err(compass_status::NullArgument);
        }
        let mut defaults = compass_options {
            scheme: compass_scheme::Compass,
            objective: compass_objective::Latency,
            batch: 1,
            seed: 0,
            overlap_writes: false,
            activation_bits: 4,
            generations: 0,
            population: 0,
            workers: 0,
        };
        if !opts.is_null() {
            defaults = *opts;
        }
        let o = defaults;
        let req = CompileRequest {
            // handles are already resolved; the names are informational
            model: (*net).inner.name.clone(),
            chip: (*chip).inner.name.clone(),
            scheme: match o.scheme {
                compass_scheme::Compass => Scheme::Compass,
                compass_scheme::Greedy => Scheme::Greedy,
                compass_scheme::Layerwise => Scheme::Layerwise,
            },
            objective: match o.objective {
                compass_objective::Latency => Objective::Latency,
                compass_objective::Edp => Objective::Edp,
            },
            batch: o.batch.max(1),
            seed: o.seed,
            overlap_writes: o.overlap_writes,
            activation_bits: if o.activation_bits == 0 { 4 } else { o.activation_bits },
            ga: GaOverrides {
                generations: (o.generations > 0).then_some(o.generations),
                population: (o.population > 0).then_some(o.population as usize),
                ..GaOverrides::default()
            },
            workers: (o.workers > 0).then_some(o.workers as usize),
            dump_validity: false,
        };
        compile_loaded(&(*net).inner, &(*chip).inner, &req)
            .map(|artifacts| compass_result { artifacts })
            .map_err(|e| fail(&e))
    })
}

/// Samples per second at the compiled batch size.
///
/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn compass_result_throughput(res: *const compass_result) -> f64 {
    if res.is_null() {
        return 0.0;
    }
    (*res).artifacts.report.throughput_samples_per_s
}

/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn compass_result_latency_ns(res: *const compass_result) -> f64 {
    if res.is_null() {
        return 0.0;
    }
    (*res).artifacts.report.end_to_end_latency_ns
}

/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn compass_result_energy_per_sample_pj(res: *const compass_result) -> f64 {
    if res.is_null() {
        return 0.0;
    }
    (*res).artifacts.report.energy_per_sample_pj
}

/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn compass_result_edp_pj_ns(res: *const compass_result) -> f64 {
    if res.is_null() {
        return 0.0;
    }
    (*res).artifacts.report.edp_pj_ns
}

/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn compass_result_partition_count(res: *const compass_result) -> u64 {
    if res.is_null() {
        return 0;
    }
    (*res).artifacts.report.partition_count as u64
}

/// The full run report as JSON. Free with `compass_string_free`.
///
/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn compass_result_report_json(res: *const compass_result) -> *mut c_char {
    if res.is_null() {
        return ptr::null_mut();
    }
    to_c_string(&(*res).artifacts.report_json)
}

/// The instruction dump (`core opcode operand bytes cycle` lines). Free
/// with `compass_string_free`.
///
/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn compass_result_instructions(res: *const compass_result) -> *mut c_char {
    if res.is_null() {
        return ptr::null_mut();
    }
    to_c_string(&(*res).artifacts.instructions)
}

/// The DRAM trace (`0xADDR READ|WRITE cycle` lines). Free with
/// `compass_string_free`.
///
/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn compass_result_trace(res: *const compass_result) -> *mut c_char {
    if res.is_null() {
        return ptr::null_mut();
    }
    to_c_string(&(*res).artifacts.trace)
}

/// The GA convergence log as CSV, or NULL for non-GA schemes. Free with
/// `compass_string_free`.
///
/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn compass_result_convergence_csv(
    res: *const compass_result,
) -> *mut c_char {
    if res.is_null() {
        return ptr::null_mut();
    }
    (*res)
        .artifacts
        .convergence_csv
        .as_deref()
        .map_or(ptr::null_mut(), to_c_string)
}

/// # Safety
/// `res` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn compass_result_free(res: *mut compass_result) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}
