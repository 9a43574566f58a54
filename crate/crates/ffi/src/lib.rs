//! C ABI over `collapse-walk`.
//!
//! Conventions:
//! - Every fallible call returns a [`CwStatus`]; results go through out
//!   pointers, which are written only on success.
//! - Trajectories and cycle collections are opaque handles created by
//!   `*_simulate` / `*_collect` and released by the matching `*_free`.
//! - The message of the last failure on the calling thread is available
//!   from [`cw_last_error_message`].
//! - Panics never cross the boundary; they surface as `CW_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use collapse_walk::process::{self, StopCondition, Trajectory};
use collapse_walk::regen::{self, RegenerationSample};
use collapse_walk::{oracle, queue, Error, ModelParams, Pool};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CwStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Truncated = 3,
    InvariantViolation = 4,
    OutOfRange = 5,
    Degenerate = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CwParams {
    pub lambda: f64,
    pub p: f64,
    pub mu: f64,
    pub dim: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CwEstimate {
    pub n: u64,
    pub alpha_hat: f64,
    pub se_alpha: f64,
    /// Variance of the first coordinate's increment.
    pub beta2_hat: f64,
    /// The coefficient in 1D; its trace over axes otherwise.
    pub coeff: f64,
    pub se_coeff: f64,
    pub coeff_ci_lo: f64,
    pub coeff_ci_hi: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CwZetaForms {
    pub e_zeta_minus_sigma: f64,
    pub e_zeta: f64,
    pub e_x_zeta_sq: f64,
    pub gap: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CwEnclosure {
    pub absorbed_value: f64,
    pub absorbed_mass: f64,
    pub residual_mass: f64,
    pub tail_bound: f64,
    pub depth: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CwCycleEnclosure {
    pub alpha: CwEnclosure,
    pub x2: CwEnclosure,
    pub converged: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CwBusyCycle {
    pub n: u64,
    pub mean: f64,
    pub se: f64,
    pub closed_form: f64,
}

/// Opaque trajectory handle.
pub struct CwTrajectory(Trajectory);

/// Opaque handle to a set of regeneration cycles.
pub struct CwCycles(Vec<RegenerationSample>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CwStatus {
    match e {
        Error::InvalidParams(_) | Error::InvalidArgument(_) | Error::TooFewSamples { .. } => CwStatus::InvalidArgument,
        Error::Truncated { .. } => CwStatus::Truncated,
        Error::OutOfRange { .. } | Error::NoEventLog => CwStatus::OutOfRange,
        Error::CouplingViolation { .. } => CwStatus::InvariantViolation,
        Error::Degenerate(_) => CwStatus::Degenerate,
    }
}

type Ffi<T = ()> = Result<T, (CwStatus, String)>;

fn fail<T>(status: CwStatus, msg: &str) -> Ffi<T> {
    Err((status, msg.to_owned()))
}

fn lift<T>(r: collapse_walk::Result<T>) -> Ffi<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Ffi) -> CwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CwStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CwStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Ffi<&'a T> {
    p.as_ref()
        .ok_or_else(|| (CwStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Ffi<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| (CwStatus::NullPointer, format!("{what} is null")))
}

unsafe fn params_of(p: *const CwParams) -> Ffi<ModelParams> {
    let p = deref(p, "params")?;
    lift(ModelParams::new(p.lambda, p.p, p.mu, p.dim as usize))
}

fn pool_of(workers: u32) -> Ffi<Pool> {
    lift(Pool::new(workers.max(1) as usize))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Simulates one trajectory from the empty environment up to `horizon`,
/// keeping its event log.
///
/// # Safety
/// `params` must point to a valid `CwParams`; `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn cw_trajectory_simulate(
    params: *const CwParams,
    seed: u64,
    horizon: f64,
    out_handle: *mut *mut CwTrajectory,
) -> CwStatus {
    guard(|| {
        let params = params_of(params)?;
        let slot = out(out_handle, "out_handle")?;
        let traj = lift(process::simulate(&params, seed, StopCondition::Horizon(horizon)))?;
        *slot = Box::into_raw(Box::new(CwTrajectory(traj)));
        Ok(())
    })
}

/// # Safety
/// `traj` must be a live handle; `count` writable.
#[no_mangle]
pub unsafe extern "C" fn cw_trajectory_event_count(traj: *const CwTrajectory, count: *mut u64) -> CwStatus {
    guard(|| {
        let t = deref(traj, "trajectory")?;
        *out(count, "count")? = t.0.event_count;
        Ok(())
    })
}

/// Writes the final position (`dim` coordinates) into `coords`.
///
/// # Safety
/// `traj` must be a live handle; `coords` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn cw_trajectory_final_position(
    traj: *const CwTrajectory,
    coords: *mut i64,
    len: usize,
) -> CwStatus {
    guard(|| {
        let t = deref(traj, "trajectory")?;
        let pos = t.0.final_state.position.coords();
        if coords.is_null() {
            return fail(CwStatus::NullPointer, "coords is null");
        }
        if len < pos.len() {
            return fail(CwStatus::InvalidArgument, "coords buffer shorter than dim");
        }
        ptr::copy_nonoverlapping(pos.as_ptr(), coords, pos.len());
        Ok(())
    })
}

/// Positions at `n` sorted times, written row-major as `n * dim` values.
///
/// # Safety
/// `traj` must be a live handle; `times` must hold `n` values and `coords`
/// `n * dim` values.
#[no_mangle]
pub unsafe extern "C" fn cw_trajectory_positions(
    traj: *const CwTrajectory,
    times: *const f64,
    n: usize,
    coords: *mut i64,
) -> CwStatus {
    guard(|| {
        let t = deref(traj, "trajectory")?;
        if n == 0 {
            return Ok(());
        }
        if times.is_null() || coords.is_null() {
            return fail(CwStatus::NullPointer, "times or coords is null");
        }
        let times = std::slice::from_raw_parts(times, n);
        let sites = lift(t.0.sample_positions(times))?;
        let dim = t.0.params.dim;
        let out = std::slice::from_raw_parts_mut(coords, n * dim);
        for (row, site) in out.chunks_exact_mut(dim).zip(&sites) {
            row.copy_from_slice(site.coords());
        }
        Ok(())
    })
}

/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cw_trajectory_free(traj: *mut CwTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Collects `n_cycles` regeneration cycles on `workers` threads. Results
/// do not depend on `workers`.
///
/// # Safety
/// `params` must point to a valid `CwParams`; `out_handle` writable.
#[no_mangle]
pub unsafe extern "C" fn cw_cycles_collect(
    params: *const CwParams,
    n_cycles: usize,
    seed: u64,
    workers: u32,
    out_handle: *mut *mut CwCycles,
) -> CwStatus {
    guard(|| {
        let params = params_of(params)?;
        let slot = out(out_handle, "out_handle")?;
        let c = lift(regen::collect(&params, n_cycles, seed, &pool_of(workers)?))?;
        if c.truncated > 0 {
            return fail(CwStatus::Truncated, "a cycle hit the event cap");
        }
        *slot = Box::into_raw(Box::new(CwCycles(c.samples)));
        Ok(())
    })
}

/// # Safety
/// `cycles` must be a live handle; `len` writable.
#[no_mangle]
pub unsafe extern "C" fn cw_cycles_len(cycles: *const CwCycles, len: *mut usize) -> CwStatus {
    guard(|| {
        *out(len, "len")? = deref(cycles, "cycles")?.0.len();
        Ok(())
    })
}

/// Duration and displacement (`dim` values) of cycle `index`.
///
/// # Safety
/// `cycles` must be a live handle; `delta_tau` writable; `delta_x` must hold
/// `len` values.
#[no_mangle]
pub unsafe extern "C" fn cw_cycles_get(
    cycles: *const CwCycles,
    index: usize,
    delta_tau: *mut f64,
    delta_x: *mut i64,
    len: usize,
) -> CwStatus {
    guard(|| {
        let c = deref(cycles, "cycles")?;
        let Some(s) = c.0.get(index) else {
            return fail(CwStatus::OutOfRange, "cycle index out of range");
        };
        let dx = s.delta_x.coords();
        if delta_x.is_null() {
            return fail(CwStatus::NullPointer, "delta_x is null");
        }
        if len < dx.len() {
            return fail(CwStatus::InvalidArgument, "delta_x buffer shorter than dim");
        }
        *out(delta_tau, "delta_tau")? = s.delta_tau;
        ptr::copy_nonoverlapping(dx.as_ptr(), delta_x, dx.len());
        Ok(())
    })
}

/// Regenerative estimates with `confidence`-level intervals.
///
/// # Safety
/// `cycles` must be a live handle; `est` writable.
#[no_mangle]
pub unsafe extern "C" fn cw_cycles_estimate(
    cycles: *const CwCycles,
    confidence: f64,
    est: *mut CwEstimate,
) -> CwStatus {
    guard(|| {
        let c = deref(cycles, "cycles")?;
        let slot = out(est, "est")?;
        let e = lift(regen::estimate(&c.0, confidence))?;
        let (se_coeff, ci) = if e.dim == 1 {
            (e.se_coeff[0], e.coeff_ci[0])
        } else {
            (e.se_coeff_trace, e.coeff_trace_ci)
        };
        *slot = CwEstimate {
            n: e.n as u64,
            alpha_hat: e.alpha_hat,
            se_alpha: e.se_alpha,
            beta2_hat: e.beta2_hat[0],
            coeff: e.coefficient(),
            se_coeff,
            coeff_ci_lo: ci[0],
            coeff_ci_hi: ci[1],
        };
        Ok(())
    })
}

/// # Safety
/// `cycles` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cw_cycles_free(cycles: *mut CwCycles) {
    if !cycles.is_null() {
        drop(Box::from_raw(cycles));
    }
}

/// Closed forms for the first-jump-then-repair cycle at `p = 1`.
///
/// # Safety
/// `forms` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_zeta_forms(lambda: f64, mu: f64, forms: *mut CwZetaForms) -> CwStatus {
    guard(|| {
        let slot = out(forms, "forms")?;
        let z = lift(oracle::zeta_closed_forms(lambda, mu))?;
        *slot = CwZetaForms {
            e_zeta_minus_sigma: z.e_zeta_minus_sigma,
            e_zeta: z.e_zeta,
            e_x_zeta_sq: z.e_x_zeta_sq,
            gap: z.gap,
        };
        Ok(())
    })
}

/// Exhaustive enumeration of one 1D cycle to `depth` events or until the
/// unabsorbed mass drops below `mass_tol`.
///
/// # Safety
/// `params` must point to a valid `CwParams`; `result` writable.
#[no_mangle]
pub unsafe extern "C" fn cw_enumerate_cycle(
    params: *const CwParams,
    depth: usize,
    mass_tol: f64,
    result: *mut CwCycleEnclosure,
) -> CwStatus {
    guard(|| {
        let params = params_of(params)?;
        let slot = out(result, "result")?;
        let e = lift(oracle::enumerate_cycle(&params, depth, mass_tol))?;
        let conv = |x: &oracle::Enclosure| CwEnclosure {
            absorbed_value: x.absorbed_value,
            absorbed_mass: x.absorbed_mass,
            residual_mass: x.residual_mass,
            tail_bound: x.tail_bound,
            depth: x.depth as u64,
        };
        *slot = CwCycleEnclosure {
            alpha: conv(&e.alpha),
            x2: conv(&e.x2),
            converged: e.converged,
        };
        Ok(())
    })
}

/// Mean idle-plus-busy cycle of an M/M/inf queue over `n_cycles` cycles.
///
/// # Safety
/// `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_busy_cycle_mean(
    arrival_rate: f64,
    service_rate: f64,
    n_cycles: usize,
    seed: u64,
    workers: u32,
    result: *mut CwBusyCycle,
) -> CwStatus {
    guard(|| {
        let slot = out(result, "result")?;
        let e = lift(queue::busy_cycle_mean(
            arrival_rate,
            service_rate,
            n_cycles,
            seed,
            &pool_of(workers)?,
        ))?;
        *slot = CwBusyCycle {
            n: e.n as u64,
            mean: e.mean,
            se: e.se,
            closed_form: e.closed_form,
        };
        Ok(())
    })
}

/// Runs `runs` coupled walk/queue paths to `horizon`; returns
/// `CW_STATUS_INVARIANT_VIOLATION` if any path has more broken bonds than
/// customers. `violations` receives the count either way.
///
/// # Safety
/// `params` must point to a valid `CwParams`; `violations` writable.
#[no_mangle]
pub unsafe extern "C" fn cw_coupling_check(
    params: *const CwParams,
    runs: usize,
    seed: u64,
    horizon: f64,
    workers: u32,
    violations: *mut u64,
) -> CwStatus {
    guard(|| {
        let params = params_of(params)?;
        let slot = out(violations, "violations")?;
        let s = lift(queue::coupling_batch(&params, runs, seed, horizon, &pool_of(workers)?))?;
        *slot = s.violations as u64;
        if s.violations > 0 {
            return fail(CwStatus::InvariantViolation, "b > q on some coupled path");
        }
        Ok(())
    })
}
