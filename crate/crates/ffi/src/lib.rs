//! C ABI for the dassim simulator.
//!
//! The surface is deliberately small: load a single-run config file, execute
//! it, and read the resulting metrics through an opaque result handle. All
//! functions return a `DassimStatus` code (or are infallible getters); the
//! most recent error message for the calling thread is available through
//! [`dassim_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use dassim::config::{load_sweep, ValidatedConfig};
use dassim::engine;
use dassim::metrics::{theoretical_total, RunMetrics, TerminationReason};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DassimStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The config file could not be read.
    Io = 3,
    /// The config file could not be parsed or failed validation.
    InvalidConfig = 4,
    /// The config file expands to more than one run; the C ABI executes
    /// exactly one run per handle.
    MultipleRuns = 5,
    /// An index argument was out of range.
    OutOfRange = 6,
}

/// Termination reasons reported by [`dassim_result_termination`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DassimTermination {
    /// Every custodied sample was delivered before the slot ended.
    Complete = 0,
    /// The slot deadline passed with samples still missing.
    Timeout = 1,
    /// No traffic was queued or in flight but samples were still missing.
    Stalled = 2,
}

/// Opaque validated single-run configuration.
pub struct DassimConfig {
    cfg: ValidatedConfig,
}

/// Opaque run result: final counters plus the per-step missing-samples series.
pub struct DassimResult {
    metrics: RunMetrics,
    theoretical: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Returns the error message from the most recent failing call on this
/// thread, or null if the last call succeeded. The pointer is valid until
/// the next dassim call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn dassim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(c) => c.as_ptr(),
        None => std::ptr::null(),
    })
}

/// Loads and validates a single-run configuration from `path` (the same
/// `key = value` format the CLI accepts). On success stores a new handle in
/// `*out`; free it with [`dassim_config_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dassim_config_load(
    path: *const c_char,
    out: *mut *mut DassimConfig,
) -> DassimStatus {
    if path.is_null() || out.is_null() {
        set_error("null argument".into());
        return DassimStatus::NullArgument;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("config path is not valid UTF-8".into());
            return DassimStatus::InvalidUtf8;
        }
    };
    let spec = match load_sweep(Path::new(path)) {
        Ok(s) => s,
        Err(dassim::Error::Io(msg)) => {
            set_error(msg);
            return DassimStatus::Io;
        }
        Err(e) => {
            set_error(e.to_string());
            return DassimStatus::InvalidConfig;
        }
    };
    let mut points = match spec.expand() {
        Ok(p) => p,
        Err(e) => {
            set_error(e.to_string());
            return DassimStatus::InvalidConfig;
        }
    };
    if points.len() != 1 {
        set_error(format!(
            "config expands to {} runs; the C ABI requires exactly one",
            points.len()
        ));
        return DassimStatus::MultipleRuns;
    }
    let point = points.remove(0);
    *out = Box::into_raw(Box::new(DassimConfig { cfg: point.config }));
    clear_error();
    DassimStatus::Ok
}

/// Returns the derived seed the run will use.
///
/// # Safety
/// `cfg` must be a live handle from [`dassim_config_load`].
#[no_mangle]
pub unsafe extern "C" fn dassim_config_seed(cfg: *const DassimConfig) -> u64 {
    if cfg.is_null() {
        return 0;
    }
    let handle = &*cfg;
    handle.cfg.seed
}

/// Frees a config handle. Passing null is a no-op.
///
/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dassim_config_free(cfg: *mut DassimConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Executes the configured run to completion and stores a result handle in
/// `*out`; free it with [`dassim_result_free`]. The same config handle can be
/// run repeatedly and always produces identical results.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dassim_run(
    cfg: *const DassimConfig,
    out: *mut *mut DassimResult,
) -> DassimStatus {
    if cfg.is_null() || out.is_null() {
        set_error("null argument".into());
        return DassimStatus::NullArgument;
    }
    let handle = &*cfg;
    let metrics = engine::run(&handle.cfg);
    let theoretical = theoretical_total(&handle.cfg);
    *out = Box::into_raw(Box::new(DassimResult {
        metrics,
        theoretical,
    }));
    clear_error();
    DassimStatus::Ok
}

/// Total custody samples delivered over the run.
///
/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn dassim_result_delivered(res: *const DassimResult) -> u64 {
    if res.is_null() {
        return 0;
    }
    (*res).metrics.final_delivered()
}

/// Theoretical total custody samples for the run's configuration.
///
/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn dassim_result_theoretical(res: *const DassimResult) -> u64 {
    if res.is_null() {
        return 0;
    }
    (*res).theoretical
}

/// Why the run terminated.
///
/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn dassim_result_termination(
    res: *const DassimResult,
) -> DassimTermination {
    if res.is_null() {
        return DassimTermination::Stalled;
    }
    match (*res).metrics.termination {
        TerminationReason::Complete => DassimTermination::Complete,
        TerminationReason::Timeout => DassimTermination::Timeout,
        TerminationReason::Stalled => DassimTermination::Stalled,
    }
}

/// Number of entries in the per-step series (step 0 is the initial state).
///
/// # Safety
/// `res` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn dassim_result_steps(res: *const DassimResult) -> usize {
    if res.is_null() {
        return 0;
    }
    (*res).metrics.series.len()
}

/// Reads series entry `index` into `*time_ms` and `*missing` (either output
/// pointer may be null to skip it). Fails with `OutOfRange` past the end.
///
/// # Safety
/// `res` must be a live result handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dassim_result_missing_at(
    res: *const DassimResult,
    index: usize,
    time_ms: *mut u64,
    missing: *mut u64,
) -> DassimStatus {
    if res.is_null() {
        set_error("null argument".into());
        return DassimStatus::NullArgument;
    }
    let series = &(*res).metrics.series;
    let Some(sample) = series.get(index) else {
        set_error(format!(
            "series index {index} out of range (len {})",
            series.len()
        ));
        return DassimStatus::OutOfRange;
    };
    if !time_ms.is_null() {
        *time_ms = sample.time_ms;
    }
    if !missing.is_null() {
        *missing = sample.missing_samples;
    }
    clear_error();
    DassimStatus::Ok
}

/// Frees a result handle. Passing null is a no-op.
///
/// # Safety
/// `res` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dassim_result_free(res: *mut DassimResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}
