//! C ABI over the bsde-rep laboratory.
//!
//! Conventions:
//! - every function returns a [`BsdeRepStatus`]; out-parameters are written
//!   only on `Ok`;
//! - handles are opaque and must be released with their `_free` function;
//! - strings returned through out-parameters are NUL-terminated, owned by the
//!   caller, and must be released with [`bsde_rep_string_free`];
//! - [`bsde_rep_last_error_message`] returns a thread-local description of
//!   the most recent failure (valid until the next failing call on the same
//!   thread);
//! - panics never cross the boundary: they are caught and surfaced as
//!   `Panic`.
//!
//! The matching header is maintained by hand at `include/bsde_rep.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use bsde_rep::config::ExperimentConfig;
use bsde_rep::harness::{run_representation, RepresentationReport, Verdict};
use bsde_rep::report::{representation_csv, representation_json};
use bsde_rep::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BsdeRepStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed configuration (schema, values, or window geometry).
    Config = 3,
    /// A declared assumption failed its sampled check.
    Compliance = 4,
    /// Numerical failure (singular regression, non-finite evaluation, ...).
    Runtime = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(e: &Error) -> BsdeRepStatus {
    match e {
        Error::Config(_)
        | Error::Json(_)
        | Error::InvalidParameter { .. }
        | Error::EpsilonOutOfRange { .. } => BsdeRepStatus::Config,
        Error::ComplianceFailed { .. } => BsdeRepStatus::Compliance,
        _ => BsdeRepStatus::Runtime,
    }
}

/// Opaque parsed configuration.
pub struct BsdeRepConfig {
    inner: ExperimentConfig,
}

/// Opaque ladder report.
pub struct BsdeRepReport {
    inner: RepresentationReport,
}

fn guarded<F: FnOnce() -> BsdeRepStatus>(f: F) -> BsdeRepStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&msg);
            BsdeRepStatus::Panic
        }
    }
}

/// Most recent error message on this thread. Never null; the pointer stays
/// valid until the next failing call on the same thread. Do not free it.
#[no_mangle]
pub extern "C" fn bsde_rep_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parses a JSON experiment configuration into an opaque handle.
/// # Safety
/// `json` must be a valid NUL-terminated C string and `out` a valid
/// pointer; both may be null (rejected with a status).
#[no_mangle]
pub unsafe extern "C" fn bsde_rep_config_parse(
    json: *const c_char,
    out: *mut *mut BsdeRepConfig,
) -> BsdeRepStatus {
    guarded(|| {
        if json.is_null() || out.is_null() {
            set_error("null pointer argument");
            return BsdeRepStatus::NullPointer;
        }
        let text = match unsafe { CStr::from_ptr(json) }.to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("configuration is not valid UTF-8");
                return BsdeRepStatus::InvalidUtf8;
            }
        };
        match ExperimentConfig::from_json(text) {
            Ok(cfg) => {
                unsafe { *out = Box::into_raw(Box::new(BsdeRepConfig { inner: cfg })) };
                BsdeRepStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `cfg` must be null or a pointer previously returned by
/// [`bsde_rep_config_parse`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsde_rep_config_free(cfg: *mut BsdeRepConfig) {
    if !cfg.is_null() {
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// Runs the representation ladder described by `cfg`. On success the report
/// handle is written to `out`; inspect the verdict separately.
/// # Safety
/// `cfg` must be null or a live configuration handle; `out` must be a
/// valid pointer or null.
#[no_mangle]
pub unsafe extern "C" fn bsde_rep_run_representation(
    cfg: *const BsdeRepConfig,
    out: *mut *mut BsdeRepReport,
) -> BsdeRepStatus {
    guarded(|| {
        if cfg.is_null() || out.is_null() {
            set_error("null pointer argument");
            return BsdeRepStatus::NullPointer;
        }
        let cfg = unsafe { &(*cfg).inner };
        let run = (|| -> Result<RepresentationReport, Error> {
            let problem = cfg.to_problem()?;
            let ladder = cfg.ladder.to_ladder();
            let opts = cfg.run_options(None, None, false);
            run_representation(&problem, &ladder, &cfg.solver, &opts)
        })();
        match run {
            Ok(report) => {
                unsafe { *out = Box::into_raw(Box::new(BsdeRepReport { inner: report })) };
                BsdeRepStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `report` must be null or a report handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsde_rep_report_free(report: *mut BsdeRepReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// Verdict of a completed run: 0 pass, 2 a checked bound failed, 3 the
/// solver did not converge everywhere (mirrors the CLI exit codes).
/// # Safety
/// `report` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn bsde_rep_report_verdict(report: *const BsdeRepReport) -> i32 {
    if report.is_null() {
        return -1;
    }
    match unsafe { &(*report).inner }.verdict {
        Verdict::Pass => 0,
        Verdict::Violation => 2,
        Verdict::Partial => 3,
    }
}

/// Fitted convergence order of the error down the ladder (NaN if null).
/// # Safety
/// `report` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn bsde_rep_report_fitted_order(report: *const BsdeRepReport) -> f64 {
    if report.is_null() {
        return f64::NAN;
    }
    unsafe { &(*report).inner }.fitted_order
}

fn export_string(s: String, out: *mut *mut c_char) -> BsdeRepStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            BsdeRepStatus::Ok
        }
        Err(_) => {
            set_error("serialized report contained an interior NUL");
            BsdeRepStatus::Runtime
        }
    }
}

/// Serializes the full verdict blob (rows, diagnostics, checks) as JSON.
/// # Safety
/// `report` must be null or a live report handle; `out` must be a valid
/// pointer or null.
#[no_mangle]
pub unsafe extern "C" fn bsde_rep_report_to_json(
    report: *const BsdeRepReport,
    out: *mut *mut c_char,
) -> BsdeRepStatus {
    guarded(|| {
        if report.is_null() || out.is_null() {
            set_error("null pointer argument");
            return BsdeRepStatus::NullPointer;
        }
        match representation_json(unsafe { &(*report).inner }) {
            Ok(s) => export_string(s, out),
            Err(e) => {
                set_error(&e.to_string());
                BsdeRepStatus::Runtime
            }
        }
    })
}

/// Serializes the frozen ladder CSV.
/// # Safety
/// `report` must be null or a live report handle; `out` must be a valid
/// pointer or null.
#[no_mangle]
pub unsafe extern "C" fn bsde_rep_report_to_csv(
    report: *const BsdeRepReport,
    out: *mut *mut c_char,
) -> BsdeRepStatus {
    guarded(|| {
        if report.is_null() || out.is_null() {
            set_error("null pointer argument");
            return BsdeRepStatus::NullPointer;
        }
        export_string(representation_csv(unsafe { &(*report).inner }), out)
    })
}

/// Releases a string produced by a `_to_json` / `_to_csv` call.
/// # Safety
/// `s` must be null or a string returned by a `_to_json` / `_to_csv`
/// call, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsde_rep_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
