//! C ABI for the `ekmp` crate.
//!
//! Every entry point returns an [`EkmpStatus`]; on failure a message for
//! the calling thread is available through [`ekmp_last_error_message`].
//! Handles are opaque and must be released with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ekmp::pipeline::{run, write_outputs, RunOptions, RunResult};
use ekmp::scenario::{Scenario, Violation};
use ekmp::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EkmpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// The scenario failed validation.
    Config = 3,
    Io = 4,
    /// A numerical failure inside the solver (singular system, unbounded dual, ...).
    Numerical = 5,
    InvalidArgument = 6,
    BufferTooSmall = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// Loaded and validated scenario.
pub struct EkmpScenario {
    inner: Scenario,
}

/// Outcome of a solver run: the optimized trajectory and its trace.
pub struct EkmpResult {
    inner: RunResult,
}

/// Quality measures of a trajectory.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EkmpMetrics {
    pub u_obs: f64,
    pub max_violation: f64,
    pub min_constraint: f64,
    /// Nearest body-point distance to any obstacle center (infinity without obstacles).
    pub min_distance: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut msg = msg.into().into_bytes();
    msg.retain(|&b| b != 0);
    let c = CString::new(msg).expect("interior nul bytes were removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: EkmpStatus, msg: impl Into<String>) -> EkmpStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> EkmpStatus {
    match err {
        Error::Io { .. } => EkmpStatus::Io,
        Error::Config(_) | Error::Serde(_) => EkmpStatus::Config,
        Error::InvalidArgument { .. }
        | Error::Shape(_)
        | Error::InvalidBodyPoint { .. }
        | Error::MalformedRow { .. }
        | Error::NonIncreasingTime { .. }
        | Error::InconsistentDemos(_)
        | Error::TooFewSamples { .. } => EkmpStatus::InvalidArgument,
        Error::DegenerateEm { .. }
        | Error::NotPositiveDefinite(_)
        | Error::Singular(_)
        | Error::NonFiniteConstraint { .. }
        | Error::UnboundedDual(_) => EkmpStatus::Numerical,
    }
}

fn violations_message(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
}

/// Runs `f`, turning panics into [`EkmpStatus::Panic`].
fn guard(f: impl FnOnce() -> EkmpStatus) -> EkmpStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_owned())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(EkmpStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, EkmpStatus> {
    if p.is_null() {
        return Err(fail(EkmpStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(EkmpStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, EkmpStatus> {
    p.as_ref()
        .ok_or_else(|| fail(EkmpStatus::NullArgument, format!("`{name}` is null")))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ekmp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (nul-terminated,
/// truncated to `len`). Returns the full message length excluding the nul;
/// 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ekmp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads and validates a scenario file. Relative paths inside it resolve
/// against the file's directory.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ekmp_scenario_load(path: *const c_char, out: *mut *mut EkmpScenario) -> EkmpStatus {
    guard(|| {
        if out.is_null() {
            return fail(EkmpStatus::NullArgument, "`out` is null");
        }
        *out = std::ptr::null_mut();
        let path = tri!(str_arg(path, "path"));
        match Scenario::load(path) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(EkmpScenario { inner: s }));
                EkmpStatus::Ok
            }
            Err(v) => fail(EkmpStatus::Config, violations_message(&v)),
        }
    })
}

/// Parses scenario text. `base_dir` (may be null for the working directory)
/// anchors relative paths.
///
/// # Safety
/// `text` and a non-null `base_dir` must be nul-terminated strings; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ekmp_scenario_parse(
    text: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut EkmpScenario,
) -> EkmpStatus {
    guard(|| {
        if out.is_null() {
            return fail(EkmpStatus::NullArgument, "`out` is null");
        }
        *out = std::ptr::null_mut();
        let text = tri!(str_arg(text, "text"));
        let base = if base_dir.is_null() {
            "."
        } else {
            tri!(str_arg(base_dir, "base_dir"))
        };
        match Scenario::parse(text, Path::new(base)) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(EkmpScenario { inner: s }));
                EkmpStatus::Ok
            }
            Err(v) => fail(EkmpStatus::Config, violations_message(&v)),
        }
    })
}

/// # Safety
/// `scenario` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ekmp_scenario_free(scenario: *mut EkmpScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Degrees of freedom of the scenario's configuration space (0 on null).
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ekmp_scenario_dof(scenario: *const EkmpScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.inner.dof())
}

/// Runs the solver. `iterations < 0` keeps the scenario's budget; `seed < 0`
/// keeps its seeds.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ekmp_run(
    scenario: *const EkmpScenario,
    iterations: i64,
    seed: i64,
    out: *mut *mut EkmpResult,
) -> EkmpStatus {
    guard(|| {
        if out.is_null() {
            return fail(EkmpStatus::NullArgument, "`out` is null");
        }
        *out = std::ptr::null_mut();
        let s = tri!(ref_arg(scenario, "scenario"));
        let opts = RunOptions {
            iterations: usize::try_from(iterations).ok(),
            snapshot_every: None,
            seed: u64::try_from(seed).ok(),
        };
        match run(&s.inner, &opts) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(EkmpResult { inner: r }));
                EkmpStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `result` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ekmp_result_free(result: *mut EkmpResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Degrees of freedom; a predicted state has twice as many entries.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ekmp_result_dof(result: *const EkmpResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.trajectory.dof())
}

/// Number of iterations performed.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ekmp_result_iterations(result: *const EkmpResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.trace.records.len())
}

/// Whether the run stopped on its convergence tolerance.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ekmp_result_converged(result: *const EkmpResult) -> bool {
    result.as_ref().is_some_and(|r| r.inner.trace.converged)
}

/// Metrics of the initialization (`final_ == false`) or of the returned trajectory.
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ekmp_result_metrics(
    result: *const EkmpResult,
    final_: bool,
    out: *mut EkmpMetrics,
) -> EkmpStatus {
    guard(|| {
        let r = tri!(ref_arg(result, "result"));
        if out.is_null() {
            return fail(EkmpStatus::NullArgument, "`out` is null");
        }
        let trace = &r.inner.trace;
        let m = if final_ { trace.final_metrics() } else { trace.initial };
        *out = EkmpMetrics {
            u_obs: m.u_obs,
            max_violation: m.max_violation,
            min_constraint: m.min_constraint,
            min_distance: m.min_distance,
        };
        EkmpStatus::Ok
    })
}

/// Evaluates `[q(t), qdot(t)]` into `state`, which must hold `2 * dof` values.
///
/// # Safety
/// `result` must be a live handle; `state` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ekmp_result_predict(
    result: *const EkmpResult,
    t: f64,
    state: *mut f64,
    len: usize,
) -> EkmpStatus {
    guard(|| {
        let r = tri!(ref_arg(result, "result"));
        if state.is_null() {
            return fail(EkmpStatus::NullArgument, "`state` is null");
        }
        if !t.is_finite() {
            return fail(EkmpStatus::InvalidArgument, "`t` is not finite");
        }
        let need = 2 * r.inner.trajectory.dof();
        if len < need {
            return fail(
                EkmpStatus::BufferTooSmall,
                format!("state buffer holds {len} values, need {need}"),
            );
        }
        let xi = r.inner.trajectory.predict(t);
        std::slice::from_raw_parts_mut(state, need).copy_from_slice(xi.as_slice());
        EkmpStatus::Ok
    })
}

/// Writes the CSV/JSON artifacts of a run into `dir` (created if missing).
///
/// # Safety
/// `result` must be a live handle and `dir` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ekmp_result_write(result: *const EkmpResult, dir: *const c_char) -> EkmpStatus {
    guard(|| {
        let r = tri!(ref_arg(result, "result"));
        let dir = tri!(str_arg(dir, "dir"));
        match write_outputs(&r.inner, Path::new(dir)) {
            Ok(_) => EkmpStatus::Ok,
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}
