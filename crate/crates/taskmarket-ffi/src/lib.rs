//! C ABI for the taskmarket simulator.
//!
//! Handles are opaque pointers created and freed here; every fallible call
//! returns a [`TmStatus`] and writes its result through an out-pointer. On
//! failure, [`tm_last_error_message`] describes what went wrong for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use taskmarket::config::{ExperimentConfig, MatcherChoice};
use taskmarket::distmatch::expected_max_ms;
use taskmarket::economy::verification_probability;
use taskmarket::experiment::run_one;
use taskmarket::metrics::Summary;
use taskmarket::sim::SimulationReport;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    RunError = 4,
    Panic = 5,
}

/// Opaque experiment configuration handle.
pub struct TmConfig {
    inner: ExperimentConfig,
}

/// Opaque handle to the outcome of one simulation run.
pub struct TmReport {
    report: SimulationReport,
    summary: Summary,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let cstring = CString::new(msg.into()).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = cstring);
}

fn guard<F: FnOnce() -> TmStatus>(body: F) -> TmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            TmStatus::Panic
        }
    }
}

/// Message describing the last error on this thread. Borrowed pointer,
/// valid until the next failing call on the same thread; never NULL.
#[no_mangle]
pub extern "C" fn tm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn tm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Fresh desk-scale configuration. Free with `tm_config_free`.
#[no_mangle]
pub extern "C" fn tm_config_default() -> *mut TmConfig {
    Box::into_raw(Box::new(TmConfig {
        inner: ExperimentConfig::default(),
    }))
}

unsafe fn cstr_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, TmStatus> {
    if ptr.is_null() {
        set_error(format!("{name} is NULL"));
        return Err(TmStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        TmStatus::InvalidArgument
    })
}

/// Parse a configuration from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_config_from_toml(
    text: *const c_char,
    out: *mut *mut TmConfig,
) -> TmStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is NULL");
            return TmStatus::NullPointer;
        }
        let text = match cstr_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ExperimentConfig::from_toml_str(text, Path::new("<memory>")) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(TmConfig { inner: cfg }));
                TmStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                TmStatus::ParseError
            }
        }
    })
}

/// Load a configuration from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_config_from_file(
    path: *const c_char,
    out: *mut *mut TmConfig,
) -> TmStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is NULL");
            return TmStatus::NullPointer;
        }
        let path = match cstr_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ExperimentConfig::from_file(Path::new(path)) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(TmConfig { inner: cfg }));
                TmStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                TmStatus::ParseError
            }
        }
    })
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn tm_config_set_devices(cfg: *mut TmConfig, devices: u32) -> TmStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            set_error("cfg is NULL");
            return TmStatus::NullPointer;
        };
        cfg.inner.devices = devices;
        TmStatus::Ok
    })
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn tm_config_set_horizon_ms(cfg: *mut TmConfig, horizon_ms: u64) -> TmStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            set_error("cfg is NULL");
            return TmStatus::NullPointer;
        };
        if horizon_ms == 0 {
            set_error("horizon must be positive");
            return TmStatus::InvalidArgument;
        }
        cfg.inner.horizon_ms = horizon_ms;
        TmStatus::Ok
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tm_config_free(cfg: *mut TmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Run one simulation with the named matcher (alias or canonical name) and
/// seed. On success the report handle must be freed with `tm_report_free`.
///
/// # Safety
/// `cfg` must be a live handle; `matcher` a NUL-terminated string; `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_run(
    cfg: *const TmConfig,
    matcher: *const c_char,
    seed: u64,
    out: *mut *mut TmReport,
) -> TmStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is NULL");
            return TmStatus::NullPointer;
        }
        let Some(cfg) = cfg.as_ref() else {
            set_error("cfg is NULL");
            return TmStatus::NullPointer;
        };
        let matcher = match cstr_arg(matcher, "matcher") {
            Ok(m) => m,
            Err(s) => return s,
        };
        let choice = MatcherChoice::Alias(matcher.to_string());
        let (name, policy) = match cfg.inner.resolve_matcher(&choice) {
            Ok(r) => r,
            Err(e) => {
                set_error(e.to_string());
                return TmStatus::InvalidArgument;
            }
        };
        match run_one(&cfg.inner, &name, &policy, seed) {
            Ok(run) => {
                *out = Box::into_raw(Box::new(TmReport {
                    report: run.report,
                    summary: run.summary,
                }));
                TmStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                TmStatus::RunError
            }
        }
    })
}

/// # Safety
/// `rep` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tm_report_free(rep: *mut TmReport) {
    if !rep.is_null() {
        drop(Box::from_raw(rep));
    }
}

unsafe fn read_report<T>(
    rep: *const TmReport,
    out: *mut T,
    get: fn(&TmReport) -> T,
) -> TmStatus {
    guard(|| {
        let Some(rep) = rep.as_ref() else {
            set_error("rep is NULL");
            return TmStatus::NullPointer;
        };
        if out.is_null() {
            set_error("out is NULL");
            return TmStatus::NullPointer;
        }
        *out = get(rep);
        TmStatus::Ok
    })
}

/// Average wait over the metrics window, seconds.
///
/// # Safety
/// `rep` must be a live report handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_report_avg_wait_s(rep: *const TmReport, out: *mut f64) -> TmStatus {
    read_report(rep, out, |r| r.summary.avg_wait_s)
}

/// Maximum wait over the metrics window, seconds.
///
/// # Safety
/// `rep` must be a live report handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_report_max_wait_s(rep: *const TmReport, out: *mut f64) -> TmStatus {
    read_report(rep, out, |r| r.summary.max_wait_s)
}

/// Fraction of windowed queries slower than their self-compute baseline.
///
/// # Safety
/// `rep` must be a live report handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_report_slow_ratio(rep: *const TmReport, out: *mut f64) -> TmStatus {
    read_report(rep, out, |r| r.summary.slow_ratio)
}

/// Worst cumulative per-device net gain, seconds (non-positive).
///
/// # Safety
/// `rep` must be a live report handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_report_max_net_loss_s(
    rep: *const TmReport,
    out: *mut f64,
) -> TmStatus {
    read_report(rep, out, |r| r.summary.max_net_loss_s)
}

/// Queries issued within the horizon.
///
/// # Safety
/// `rep` must be a live report handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_report_issued(rep: *const TmReport, out: *mut u64) -> TmStatus {
    read_report(rep, out, |r| r.report.issued)
}

/// Queries completed within the horizon.
///
/// # Safety
/// `rep` must be a live report handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_report_completed(rep: *const TmReport, out: *mut u64) -> TmStatus {
    read_report(rep, out, |r| r.report.completed)
}

/// Queries still open at the horizon.
///
/// # Safety
/// `rep` must be a live report handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_report_pending(rep: *const TmReport, out: *mut u64) -> TmStatus {
    read_report(rep, out, |r| r.report.pending_at_horizon)
}

/// Secondary verifications drawn by the economy.
///
/// # Safety
/// `rep` must be a live report handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_report_verifications(
    rep: *const TmReport,
    out: *mut u64,
) -> TmStatus {
    read_report(rep, out, |r| r.report.verifications)
}

/// Sum over the credit ledger; zero by construction.
///
/// # Safety
/// `rep` must be a live report handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_report_ledger_sum(rep: *const TmReport, out: *mut i64) -> TmStatus {
    read_report(rep, out, |r| r.report.ledger_sum)
}

/// Full summary as a JSON document. Free with `tm_string_free`. NULL on
/// error.
///
/// # Safety
/// `rep` must be a live report handle.
#[no_mangle]
pub unsafe extern "C" fn tm_report_summary_json(rep: *const TmReport) -> *mut c_char {
    let Some(rep) = rep.as_ref() else {
        set_error("rep is NULL");
        return ptr::null_mut();
    };
    match serde_json::to_string(&rep.summary) {
        Ok(json) => CString::new(json)
            .map(CString::into_raw)
            .unwrap_or(ptr::null_mut()),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Expected maximum completion time over a seller pair: each side has a
/// deterministic delay (ms) plus, when flagged stochastic, an Exp(alpha)
/// re-entry delay (alpha in 1/ms).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_expected_max_wait_ms(
    c1_ms: f64,
    stochastic1: bool,
    c2_ms: f64,
    stochastic2: bool,
    alpha: f64,
    out: *mut f64,
) -> TmStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is NULL");
            return TmStatus::NullPointer;
        }
        match expected_max_ms(c1_ms, stochastic1, c2_ms, stochastic2, alpha) {
            Ok(v) => {
                *out = v;
                TmStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                TmStatus::InvalidArgument
            }
        }
    })
}

/// Probability that a completed query is sent for secondary verification,
/// from the sellers' credits and result perplexities.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_verification_probability(
    credit1: i64,
    credit2: i64,
    perplexity1: f64,
    perplexity2: f64,
    out: *mut f64,
) -> TmStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is NULL");
            return TmStatus::NullPointer;
        }
        match verification_probability(credit1, credit2, perplexity1, perplexity2) {
            Ok(p) => {
                *out = p.value;
                TmStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                TmStatus::InvalidArgument
            }
        }
    })
}
