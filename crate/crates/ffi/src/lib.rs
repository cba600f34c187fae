//! C ABI over the `riskplan` solvers.
//!
//! Models and results are opaque heap handles created and released by this
//! library. Structured inputs (measures, solver parameters, grid specs) cross
//! the boundary as UTF-8 JSON strings in the same formats the command-line
//! tool reads, and results come back as JSON owned by the result handle.
//!
//! Every function returns an [`RpStatus`]. On failure a message describing
//! the last error on the calling thread is available from
//! [`rp_last_error_message`]. Panics never unwind into C; they are reported as
//! [`RpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use riskplan::gridworld::{build_pomdp, GridSpec};
use riskplan::mdp_solver::{solve_constrained, SolverParams};
use riskplan::model::{Mdp, Pomdp};
use riskplan::pomdp_solver::{policy_iteration, PiParams};
use riskplan::risk::{sigma, InnerSolveParams, RiskMeasure};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A JSON argument did not parse into the expected type.
    InvalidJson = 3,
    /// Arguments parsed but failed validation.
    InvalidInput = 4,
    /// The solver or generator reported an error.
    SolverFailure = 5,
    /// An internal panic was caught at the boundary.
    Panic = 6,
}

/// A validated model. Always held as a POMDP; an MDP is stored with the
/// identity observation model.
pub struct RpModel {
    pomdp: Pomdp,
}

/// A solver result serialized to JSON, plus its headline numbers.
pub struct RpResult {
    json: CString,
    lower_bound: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RpStatus, String);

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RpStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(RpStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(RpStatus::InvalidUtf8, format!("{what}: {e}")))
}

/// Like `read_str`, but null means "use defaults".
unsafe fn read_json_or_default<T: serde::de::DeserializeOwned + Default>(p: *const c_char, what: &str) -> Result<T, Failure> {
    if p.is_null() {
        return Ok(T::default());
    }
    let s = read_str(p, what)?;
    serde_json::from_str(s).map_err(|e| Failure(RpStatus::InvalidJson, format!("{what}: {e}")))
}

unsafe fn read_measure(p: *const c_char) -> Result<RiskMeasure, Failure> {
    let s = read_str(p, "measure_json")?;
    serde_json::from_str(s).map_err(|e| Failure(RpStatus::InvalidJson, format!("measure_json: {e}")))
}

fn null_check<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(RpStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn solver_failure(e: impl std::fmt::Display) -> Failure {
    Failure(RpStatus::SolverFailure, e.to_string())
}

fn make_result(value: &impl serde::Serialize, lower_bound: f64) -> Result<Box<RpResult>, Failure> {
    let text = serde_json::to_string(value).map_err(|e| Failure(RpStatus::SolverFailure, e.to_string()))?;
    let json = CString::new(text).map_err(|e| Failure(RpStatus::SolverFailure, e.to_string()))?;
    Ok(Box::new(RpResult { json, lower_bound }))
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn rp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a model from JSON. A document with an `observation` field is read
/// as a POMDP, anything else as an MDP.
///
/// # Safety
/// `json` must be null or a NUL-terminated string; `out` must be null or
/// point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn rp_model_from_json(json: *const c_char, out: *mut *mut RpModel) -> RpStatus {
    guard(|| {
        null_check(out, "out")?;
        let s = read_str(json, "json")?;
        let doc: serde_json::Value = serde_json::from_str(s).map_err(|e| Failure(RpStatus::InvalidJson, e.to_string()))?;
        let pomdp = if doc.get("observation").is_some() {
            Pomdp::from_json_str(s)
        } else {
            Mdp::from_json_str(s).and_then(Pomdp::fully_observable)
        }
        .map_err(|e| Failure(RpStatus::InvalidInput, e.to_string()))?;
        *out = Box::into_raw(Box::new(RpModel { pomdp }));
        Ok(())
    })
}

/// Generates a grid-world POMDP from a grid spec in JSON; null uses the
/// default spec.
///
/// # Safety
/// `spec_json` must be null or a NUL-terminated string; `out` must be null or
/// point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn rp_model_from_grid(spec_json: *const c_char, out: *mut *mut RpModel) -> RpStatus {
    guard(|| {
        null_check(out, "out")?;
        let spec: GridSpec = read_json_or_default(spec_json, "spec_json")?;
        spec.validate().map_err(|e| Failure(RpStatus::InvalidInput, e.to_string()))?;
        let pomdp = build_pomdp(&spec).map_err(solver_failure)?;
        *out = Box::into_raw(Box::new(RpModel { pomdp }));
        Ok(())
    })
}

/// Writes the state, action, observation and constraint counts of `model`.
/// Any output pointer may be null.
///
/// # Safety
/// `model` must be null or a live handle from this library; non-null output
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_model_dims(
    model: *const RpModel,
    num_states: *mut usize,
    num_actions: *mut usize,
    num_observations: *mut usize,
    num_constraints: *mut usize,
) -> RpStatus {
    guard(|| {
        null_check(model, "model")?;
        let p = &(*model).pomdp;
        for (dst, v) in [
            (num_states, p.mdp.num_states),
            (num_actions, p.mdp.num_actions),
            (num_observations, p.num_observations),
            (num_constraints, p.mdp.num_constraints()),
        ] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_model_free(model: *mut RpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Solves the constrained risk-averse MDP of `model` (its fully observed
/// part). `params_json` may be null for default solver settings.
///
/// # Safety
/// `model` must be a live handle; string arguments must be null or
/// NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_solve_mdp(
    model: *const RpModel,
    measure_json: *const c_char,
    params_json: *const c_char,
    out: *mut *mut RpResult,
) -> RpStatus {
    guard(|| {
        null_check(model, "model")?;
        null_check(out, "out")?;
        let measure = read_measure(measure_json)?;
        let params: SolverParams = read_json_or_default(params_json, "params_json")?;
        let r = solve_constrained(&(*model).pomdp.mdp, &measure, &params).map_err(solver_failure)?;
        *out = Box::into_raw(make_result(&r, r.lower_bound)?);
        Ok(())
    })
}

/// Runs finite-state-controller policy iteration on `model`. `params_json`
/// may be null for default settings.
///
/// # Safety
/// As for [`rp_solve_mdp`].
#[no_mangle]
pub unsafe extern "C" fn rp_solve_pomdp(
    model: *const RpModel,
    measure_json: *const c_char,
    params_json: *const c_char,
    out: *mut *mut RpResult,
) -> RpStatus {
    guard(|| {
        null_check(model, "model")?;
        null_check(out, "out")?;
        let measure = read_measure(measure_json)?;
        let params: PiParams = read_json_or_default(params_json, "params_json")?;
        let r = policy_iteration(&(*model).pomdp, &measure, &params).map_err(solver_failure)?;
        *out = Box::into_raw(make_result(&r, r.lower_bound)?);
        Ok(())
    })
}

/// Borrowed JSON text of a result, valid until the result is freed.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_result_json(result: *const RpResult) -> *const c_char {
    if result.is_null() {
        ptr::null()
    } else {
        (*result).json.as_ptr()
    }
}

/// Writes the Lagrangian lower bound of a result.
///
/// # Safety
/// `result` must be null or a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn rp_result_lower_bound(result: *const RpResult, out: *mut f64) -> RpStatus {
    guard(|| {
        null_check(result, "result")?;
        null_check(out, "out")?;
        *out = (*result).lower_bound;
        Ok(())
    })
}

/// Releases a result. Null is ignored.
///
/// # Safety
/// `result` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_result_free(result: *mut RpResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// One-step risk `σ(values, probs)` of a discrete distribution of `n`
/// outcomes.
///
/// # Safety
/// `values` and `probs` must point to `n` readable doubles; `measure_json`
/// must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rp_risk_evaluate(
    measure_json: *const c_char,
    values: *const f64,
    probs: *const f64,
    n: usize,
    out: *mut f64,
) -> RpStatus {
    guard(|| {
        null_check(values, "values")?;
        null_check(probs, "probs")?;
        null_check(out, "out")?;
        let measure = read_measure(measure_json)?;
        let v = std::slice::from_raw_parts(values, n);
        let p = std::slice::from_raw_parts(probs, n);
        *out = sigma(&measure, v, p, &InnerSolveParams::default()).map_err(|e| Failure(RpStatus::InvalidInput, e.to_string()))?;
        Ok(())
    })
}
