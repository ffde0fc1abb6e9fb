//! C interface to the contract-net simulator.
//!
//! Configurations and runs are opaque handles owned by the caller and
//! released with their `_free` function. Fallible calls return a
//! [`CnpStatus`]; the message for the most recent failure on the calling
//! thread is available from [`cnp_last_error`]. Strings returned by the
//! library must be released with [`cnp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use contract_net::config::RunConfig;
use contract_net::conformance::validate_trace;
use contract_net::trace::{read_trace, write_trace};
use contract_net::{run, RunError, RunResult};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Unknown key, malformed value or inconsistent configuration.
    Config = 3,
    /// The run hit its tick limit before quiescing.
    Timeout = 4,
    /// The run could not be set up or failed for another reason.
    Run = 5,
    /// A trace could not be parsed.
    Parse = 6,
    /// A panic was caught at the boundary.
    Panic = 7,
}

/// Headline metrics of a finished run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CnpMetrics {
    pub tasks_total: u64,
    pub tasks_updated: u64,
    pub task_repetitions: u64,
    pub message_count: u64,
    pub elapsed_ticks: u64,
}

/// Opaque run configuration.
pub struct CnpConfig {
    inner: RunConfig,
}

/// Opaque finished run.
pub struct CnpRun {
    inner: RunResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: CnpStatus, msg: impl Into<String>) -> CnpStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> CnpStatus) -> CnpStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(CnpStatus::Panic, "panic inside contract-net"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, CnpStatus> {
    if p.is_null() {
        return Err(fail(CnpStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CnpStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, CnpStatus> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

fn status_of(e: &RunError) -> CnpStatus {
    match e {
        _ if e.is_timeout() => CnpStatus::Timeout,
        RunError::Config(_) => CnpStatus::Config,
        _ => CnpStatus::Run,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cnp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the last failure on this thread, or null if the last
/// call succeeded. Valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn cnp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// New configuration holding the defaults.
#[no_mangle]
pub extern "C" fn cnp_config_new() -> *mut CnpConfig {
    Box::into_raw(Box::new(CnpConfig {
        inner: RunConfig::default(),
    }))
}

/// # Safety
/// `config` must be null or a handle from [`cnp_config_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cnp_config_free(config: *mut CnpConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Sets one option by name, e.g. `"seed"` / `"7"` or `"latency"` / `"2:1"`.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cnp_config_set(
    config: *mut CnpConfig,
    key: *const c_char,
    value: *const c_char,
) -> CnpStatus {
    guard(|| {
        let Some(cfg) = config.as_mut() else {
            return fail(CnpStatus::NullArgument, "config is null");
        };
        let (key, value) = match (str_arg(key, "key"), str_arg(value, "value")) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match cfg.inner.set(key, value) {
            Ok(()) => CnpStatus::Ok,
            Err(e) => fail(CnpStatus::Config, e.to_string()),
        }
    })
}

/// Applies `key=value` lines; `#` starts a comment.
///
/// # Safety
/// `config` must be a live handle; `text` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cnp_config_apply_text(
    config: *mut CnpConfig,
    text: *const c_char,
) -> CnpStatus {
    guard(|| {
        let Some(cfg) = config.as_mut() else {
            return fail(CnpStatus::NullArgument, "config is null");
        };
        let text = match str_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match cfg.inner.apply_text(text) {
            Ok(()) => CnpStatus::Ok,
            Err(e) => fail(CnpStatus::Config, e.to_string()),
        }
    })
}

/// Runs the configured experiment. On success `*out` receives a handle to
/// release with [`cnp_run_free`]; on failure it is set to null.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cnp_run(config: *const CnpConfig, out: *mut *mut CnpRun) -> CnpStatus {
    guard(|| {
        if out.is_null() {
            return fail(CnpStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let Some(cfg) = config.as_ref() else {
            return fail(CnpStatus::NullArgument, "config is null");
        };
        match run(&cfg.inner) {
            Ok(result) => {
                *out = Box::into_raw(Box::new(CnpRun { inner: result }));
                CnpStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `run` must be null or a handle from [`cnp_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cnp_run_free(run: *mut CnpRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cnp_run_metrics(run: *const CnpRun, out: *mut CnpMetrics) -> CnpStatus {
    guard(|| {
        let (Some(run), Some(out)) = (run.as_ref(), out.as_mut()) else {
            return fail(CnpStatus::NullArgument, "run or out is null");
        };
        let r = &run.inner.report;
        *out = CnpMetrics {
            tasks_total: r.tasks_total as u64,
            tasks_updated: r.tasks_updated as u64,
            task_repetitions: r.task_repetitions,
            message_count: r.message_count as u64,
            elapsed_ticks: r.elapsed_ticks,
        };
        CnpStatus::Ok
    })
}

/// The run's trace, header line included. Release with [`cnp_string_free`].
/// Returns null on failure.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cnp_run_trace(run: *const CnpRun) -> *mut c_char {
    let mut text = ptr::null_mut();
    guard(|| {
        let Some(run) = run.as_ref() else {
            return fail(CnpStatus::NullArgument, "run is null");
        };
        let cfg = &run.inner.config;
        match write_trace(Some(&cfg.header_line()), &run.inner.trace, cfg.dialect) {
            Ok(t) => {
                text = into_c_string(t);
                CnpStatus::Ok
            }
            Err(e) => fail(CnpStatus::Run, e.to_string()),
        }
    });
    text
}

/// Checks trace text against the protocol rules. `variant` and `dialect`
/// may be null to take them from the trace header. The number of
/// violations found is written to `*violations`.
///
/// # Safety
/// `text` must be a NUL-terminated string, `variant` and `dialect` null or
/// NUL-terminated, and `violations` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cnp_validate_trace(
    text: *const c_char,
    variant: *const c_char,
    dialect: *const c_char,
    violations: *mut usize,
) -> CnpStatus {
    guard(|| {
        let Some(count) = violations.as_mut() else {
            return fail(CnpStatus::NullArgument, "violations is null");
        };
        let args = (
            str_arg(text, "text"),
            opt_str_arg(variant, "variant"),
            opt_str_arg(dialect, "dialect"),
        );
        let (text, variant, dialect) = match args {
            (Ok(t), Ok(v), Ok(d)) => (t, v, d),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        let trace = match read_trace(text) {
            Ok(t) => t,
            Err(e) => return fail(CnpStatus::Parse, e.to_string()),
        };
        let mut cfg = match &trace.header {
            Some(h) => match RunConfig::from_header(h) {
                Ok(c) => c,
                Err(e) => return fail(CnpStatus::Parse, e.to_string()),
            },
            None if variant.is_some() => RunConfig::default(),
            None => return fail(CnpStatus::Config, "trace has no header; pass a variant"),
        };
        if trace.header.is_none() {
            if let Some((_, e)) = trace.entries.first() {
                cfg.dialect = e.dialect;
            }
        }
        for (key, value) in [("variant", variant), ("dialect", dialect)] {
            if let Some(v) = value {
                if let Err(e) = cfg.set(key, v) {
                    return fail(CnpStatus::Config, e.to_string());
                }
            }
        }
        *count = validate_trace(&trace.entries, cfg.variant, cfg.dialect)
            .violations
            .len();
        CnpStatus::Ok
    })
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cnp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
