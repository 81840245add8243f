//! C interface to the consensus-based optimizer.
//!
//! Every fallible function returns a [`CboStatus`]; the message of the most
//! recent failure on the calling thread is available from
//! [`cbo_last_error_message`]. Solvers are opaque heap handles released with
//! [`cbo_solver_free`]; strings returned by the library are released with
//! [`cbo_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cbo_core::config::Config;
use cbo_core::engine::{stopping_metric, RunOptions, Solver};
use cbo_core::{CboError, Result};

/// Result codes of the C interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CboStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    BufferTooSmall = 4,
    Diverged = 5,
    Io = 6,
    Internal = 7,
}

/// Opaque solver handle.
pub struct CboSolver {
    solver: Solver,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &CboError) -> CboStatus {
    match err {
        CboError::Diverged { .. } => CboStatus::Diverged,
        CboError::Io(_) | CboError::Csv(_) => CboStatus::Io,
        CboError::Json(_) => CboStatus::Internal,
        _ => CboStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> std::result::Result<(), CboStatus>) -> CboStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CboStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic".into());
            CboStatus::Internal
        }
    }
}

fn check<T>(r: Result<T>) -> std::result::Result<T, CboStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn fail(status: CboStatus, msg: &str) -> CboStatus {
    set_error(msg.into());
    status
}

unsafe fn read_str<'a>(s: *const c_char) -> std::result::Result<&'a str, CboStatus> {
    if s.is_null() {
        return Err(fail(CboStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(CboStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn solver_ref<'a>(h: *const CboSolver) -> std::result::Result<&'a CboSolver, CboStatus> {
    h.as_ref().ok_or_else(|| fail(CboStatus::NullPointer, "solver handle is null"))
}

unsafe fn write_buffer(values: &[f64], buf: *mut f64, len: usize) -> std::result::Result<(), CboStatus> {
    if buf.is_null() {
        return Err(fail(CboStatus::NullPointer, "output buffer is null"));
    }
    if len < values.len() {
        return Err(fail(CboStatus::BufferTooSmall, &format!("buffer holds {len} values, need {}", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    Ok(())
}

fn solver_from_toml(text: &str) -> Result<Solver> {
    let cfg = Config::from_toml_str(text)?;
    let data = cfg.data()?;
    Solver::new(cfg.params()?, cfg.problem(data.as_ref())?, &cfg.init_spec()?, cfg.seed_spec(), false)
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cbo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cbo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a solver from TOML configuration text. Relative dataset paths
/// resolve against the working directory.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cbo_solver_new(config: *const c_char, out: *mut *mut CboSolver) -> CboStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(CboStatus::NullPointer, "output handle pointer is null"));
        }
        *out = ptr::null_mut();
        let text = read_str(config)?;
        let solver = check(solver_from_toml(text))?;
        *out = Box::into_raw(Box::new(CboSolver { solver }));
        Ok(())
    })
}

/// Releases a solver. Null is ignored.
///
/// # Safety
/// `solver` must come from [`cbo_solver_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cbo_solver_free(solver: *mut CboSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// Number of particles and dimension.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cbo_solver_shape(solver: *const CboSolver, n_particles: *mut usize, dim: *mut usize) -> CboStatus {
    guard(|| {
        let s = solver_ref(solver)?;
        if n_particles.is_null() || dim.is_null() {
            return Err(fail(CboStatus::NullPointer, "output pointer is null"));
        }
        *n_particles = s.solver.params().n_particles;
        *dim = s.solver.params().dim;
        Ok(())
    })
}

/// Performs `steps` iterations.
///
/// # Safety
/// `solver` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn cbo_solver_advance(solver: *mut CboSolver, steps: usize) -> CboStatus {
    guard(|| {
        let s = solver.as_mut().ok_or_else(|| fail(CboStatus::NullPointer, "solver handle is null"))?;
        for _ in 0..steps {
            check(s.solver.advance())?;
        }
        Ok(())
    })
}

/// Iterations performed so far.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cbo_solver_iteration(solver: *const CboSolver, out: *mut usize) -> CboStatus {
    guard(|| {
        let s = solver_ref(solver)?;
        if out.is_null() {
            return Err(fail(CboStatus::NullPointer, "output pointer is null"));
        }
        *out = s.solver.iteration();
        Ok(())
    })
}

/// Particle positions, row-major `N x d`, into `buf` of capacity `len`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cbo_solver_positions(solver: *const CboSolver, buf: *mut f64, len: usize) -> CboStatus {
    guard(|| {
        let s = solver_ref(solver)?;
        let values: Vec<f64> = s.solver.ensemble().positions().iter().copied().collect();
        write_buffer(&values, buf, len)
    })
}

/// Consensus point of the current ensemble, using the oracle draws of the
/// current iteration. Not charged to the ledger.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cbo_solver_consensus(solver: *const CboSolver, buf: *mut f64, len: usize) -> CboStatus {
    guard(|| {
        let s = solver_ref(solver)?;
        let eval = check(s.solver.evaluate())?;
        let cp = check(s.solver.consensus(&eval))?;
        write_buffer(&cp.point, buf, len)
    })
}

/// Mean distance of the particles to their average.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cbo_solver_stopping_metric(solver: *const CboSolver, out: *mut f64) -> CboStatus {
    guard(|| {
        let s = solver_ref(solver)?;
        if out.is_null() {
            return Err(fail(CboStatus::NullPointer, "output pointer is null"));
        }
        *out = stopping_metric(s.solver.ensemble());
        Ok(())
    })
}

/// Oracle component evaluations and cost charged so far.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cbo_solver_ledger(solver: *const CboSolver, component_evals: *mut u64, cost: *mut f64) -> CboStatus {
    guard(|| {
        let s = solver_ref(solver)?;
        if component_evals.is_null() || cost.is_null() {
            return Err(fail(CboStatus::NullPointer, "output pointer is null"));
        }
        *component_evals = s.solver.ledger().component_evals;
        *cost = s.solver.ledger().cost;
        Ok(())
    })
}

/// Runs a configuration to completion and returns the run record as JSON.
/// Release the string with [`cbo_string_free`].
///
/// # Safety
/// `config` must be a NUL-terminated string and `json_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cbo_run_json(config: *const c_char, json_out: *mut *mut c_char) -> CboStatus {
    guard(|| {
        if json_out.is_null() {
            return Err(fail(CboStatus::NullPointer, "output string pointer is null"));
        }
        *json_out = ptr::null_mut();
        let text = read_str(config)?;
        let solver = check(solver_from_toml(text))?;
        let record = check(solver.run(&RunOptions::default()))?;
        let json = check(serde_json::to_string(&record).map_err(CboError::from))?;
        *json_out = CString::new(json).map_err(|_| fail(CboStatus::Internal, "JSON contains NUL"))?.into_raw();
        Ok(())
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cbo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Contraction constant `1 - gamma + 8 xi sqrt(ln(sqrt2 N))`.
#[no_mangle]
pub extern "C" fn cbo_theta(gamma: f64, xi: f64, n_particles: usize) -> f64 {
    cbo_core::model::theta(gamma, xi, n_particles)
}

/// Rastrigin function at `x[0..dim]`; NaN for a null pointer.
///
/// # Safety
/// `x` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn cbo_rastrigin(x: *const f64, dim: usize) -> f64 {
    if x.is_null() {
        return f64::NAN;
    }
    cbo_core::objectives::rastrigin(std::slice::from_raw_parts(x, dim))
}
