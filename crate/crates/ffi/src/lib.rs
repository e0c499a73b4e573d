//! C ABI over the `modelfree` toolkit.
//!
//! Every object crosses the boundary as an opaque pointer created by an
//! `mf_*_new` function and released by the matching `mf_*_free`. Fallible
//! calls return an [`MfStatus`]; the message of the last failure on the
//! calling thread is available from [`mf_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use modelfree::algdiff::{DerivativeKernel, Quadrature, SlidingEstimator};
use modelfree::bench::catalog::RunOptions;
use modelfree::bench::{resolve, run_scenario, RunArtifact};
use modelfree::control::estimation::EstimatorConfig;
use modelfree::control::{Controller, IpidController, LoopSettings, PidGains, UltraLocalModel};
use modelfree::plants::{build_plant, simulate_step, PlantModel, PlantState};
use modelfree::traject::ReferenceTrajectory;
use modelfree::Error;

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Config = 3,
    /// The estimator window is not yet full; no value was written.
    NotReady = 4,
    Identification = 5,
    Diverged = 6,
    Io = 7,
    InvalidUtf8 = 8,
    /// A Rust panic was caught at the boundary.
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: MfStatus, msg: impl Into<String>) -> MfStatus {
    set_error(msg);
    status
}

fn from_error(err: Error) -> MfStatus {
    let status = match &err {
        Error::Domain(_) => MfStatus::Domain,
        Error::Config(_) => MfStatus::Config,
        Error::NotReady => MfStatus::NotReady,
        Error::Identification(_) => MfStatus::Identification,
        Error::Diverged { .. } => MfStatus::Diverged,
        Error::Io(_) => MfStatus::Io,
    };
    fail(status, err.to_string())
}

fn guard(f: impl FnOnce() -> MfStatus) -> MfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MfStatus::Panic, "panic caught at the C boundary"),
    }
}

fn guard_ptr<T>(f: impl FnOnce() -> Result<T, MfStatus>) -> *mut T {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Box::into_raw(Box::new(v)),
        Ok(Err(_)) => ptr::null_mut(),
        Err(_) => {
            set_error("panic caught at the C boundary");
            ptr::null_mut()
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, MfStatus> {
    if p.is_null() {
        return Err(fail(MfStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(MfStatus::InvalidUtf8, "string argument is not UTF-8"))
}

macro_rules! deref {
    ($p:expr) => {
        match unsafe { $p.as_mut() } {
            Some(v) => v,
            None => return fail(MfStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
}

/// Message of the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Sliding-window derivative estimator.
pub struct MfEstimator(SlidingEstimator);

/// Creates an estimator of `y^(order)` from a local polynomial of `degree`
/// over a window of `window` seconds sampled every `ts`. Null on failure.
#[no_mangle]
pub extern "C" fn mf_estimator_new(order: u32, degree: u32, window: f64, ts: f64) -> *mut MfEstimator {
    guard_ptr(|| {
        let kernel = DerivativeKernel::new(order as usize, degree as usize, window).map_err(from_error)?;
        let est = SlidingEstimator::new(kernel, ts, Quadrature::MomentMatched).map_err(from_error)?;
        Ok(MfEstimator(est))
    })
}

/// # Safety
/// `est` must come from [`mf_estimator_new`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn mf_estimator_push(est: *mut MfEstimator, sample: f64) -> MfStatus {
    guard(|| {
        deref!(est).0.push(sample);
        MfStatus::Ok
    })
}

/// Writes the current estimate to `out`, or returns `NotReady` while warming up.
///
/// # Safety
/// `est` must come from [`mf_estimator_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_estimator_value(est: *const MfEstimator, out: *mut f64) -> MfStatus {
    guard(|| {
        let est = deref!(est.cast_mut());
        let out = deref!(out);
        match est.0.value() {
            Ok(v) => {
                *out = v;
                MfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `est` must come from [`mf_estimator_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn mf_estimator_reset(est: *mut MfEstimator) -> MfStatus {
    guard(|| {
        deref!(est).0.reset();
        MfStatus::Ok
    })
}

/// # Safety
/// `est` must come from [`mf_estimator_new`] or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mf_estimator_free(est: *mut MfEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// SISO intelligent PID tracking a constant setpoint.
pub struct MfIpid {
    ctrl: IpidController,
    ts: f64,
    k: u64,
}

/// Parameters of [`mf_ipid_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MfIpidParams {
    /// Order of the local model, 1 or 2.
    pub nu: u32,
    pub alpha: f64,
    pub kp: f64,
    pub ki: f64,
    /// Must be 0 when `nu` is 1.
    pub kd: f64,
    pub window: f64,
    pub degree: u32,
    pub ts: f64,
    pub setpoint: f64,
    /// Input held before the first step.
    pub u_init: f64,
}

/// # Safety
/// `params` must point to a readable [`MfIpidParams`]. Null on failure.
#[no_mangle]
pub unsafe extern "C" fn mf_ipid_new(params: *const MfIpidParams) -> *mut MfIpid {
    guard_ptr(|| {
        let p = match params.as_ref() {
            Some(p) => *p,
            None => return Err(fail(MfStatus::NullPointer, "params is null")),
        };
        let model = UltraLocalModel::siso(p.nu as usize, p.alpha).map_err(from_error)?;
        let estimator = EstimatorConfig { window: p.window, degree: p.degree as usize, ..Default::default() };
        let settings = LoopSettings { ts: p.ts, antiwindup: false, estimator };
        let ctrl = IpidController::new(
            model,
            vec![PidGains::new(p.kp, p.ki, p.kd)],
            vec![ReferenceTrajectory::constant(p.setpoint)],
            settings,
            &[p.u_init],
        )
        .map_err(from_error)?;
        Ok(MfIpid { ctrl, ts: p.ts, k: 0 })
    })
}

/// Feeds one measurement and the input applied over the previous period.
/// Writes the next input to `u_out`, or returns `NotReady` while the
/// estimators fill (the caller keeps its current input meanwhile).
///
/// # Safety
/// `ipid` must come from [`mf_ipid_new`]; `u_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_ipid_step(ipid: *mut MfIpid, y: f64, u_prev: f64, u_out: *mut f64) -> MfStatus {
    guard(|| {
        let ipid = deref!(ipid);
        let out = deref!(u_out);
        let t = ipid.k as f64 * ipid.ts;
        ipid.k += 1;
        match ipid.ctrl.step(t, &[y], &[u_prev]) {
            Ok(Some(u)) => {
                *out = u[0];
                MfStatus::Ok
            }
            Ok(None) => fail(MfStatus::NotReady, "estimator is still warming up"),
            Err(e) => from_error(e),
        }
    })
}

/// Latest estimate of the lumped term `F`.
///
/// # Safety
/// `ipid` must come from [`mf_ipid_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_ipid_f_estimate(ipid: *const MfIpid, out: *mut f64) -> MfStatus {
    guard(|| {
        let ipid = deref!(ipid.cast_mut());
        *deref!(out) = ipid.ctrl.f_estimate()[0];
        MfStatus::Ok
    })
}

/// # Safety
/// `ipid` must come from [`mf_ipid_new`] or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mf_ipid_free(ipid: *mut MfIpid) {
    if !ipid.is_null() {
        drop(Box::from_raw(ipid));
    }
}

/// Catalog plant with its simulation state.
pub struct MfPlant {
    model: PlantModel,
    state: PlantState,
}

/// Builds a catalog plant by label, e.g. `"stable-siso"` or `"cubic"`, at rest
/// with zero input. Null on failure.
///
/// # Safety
/// `label` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mf_plant_new(label: *const c_char) -> *mut MfPlant {
    guard_ptr(|| {
        let label = str_arg(label)?;
        let model = build_plant(label).map_err(from_error)?;
        let state = model.initial_state(&vec![0.0; model.input_dim()]);
        Ok(MfPlant { model, state })
    })
}

/// # Safety
/// `plant` must come from [`mf_plant_new`].
#[no_mangle]
pub unsafe extern "C" fn mf_plant_input_dim(plant: *const MfPlant) -> usize {
    plant.as_ref().map_or(0, |p| p.model.input_dim())
}

/// # Safety
/// `plant` must come from [`mf_plant_new`].
#[no_mangle]
pub unsafe extern "C" fn mf_plant_output_dim(plant: *const MfPlant) -> usize {
    plant.as_ref().map_or(0, |p| p.model.output_dim())
}

/// Returns the plant to its initial state and time zero.
///
/// # Safety
/// `plant` must come from [`mf_plant_new`].
#[no_mangle]
pub unsafe extern "C" fn mf_plant_reset(plant: *mut MfPlant) -> MfStatus {
    guard(|| {
        let p = deref!(plant);
        p.state = p.model.initial_state(&vec![0.0; p.model.input_dim()]);
        MfStatus::Ok
    })
}

/// Holds `u` (length `input_dim`) for `ts` seconds and integrates.
///
/// # Safety
/// `plant` must come from [`mf_plant_new`]; `u` must hold `input_dim` values.
#[no_mangle]
pub unsafe extern "C" fn mf_plant_step(plant: *mut MfPlant, u: *const f64, ts: f64) -> MfStatus {
    guard(|| {
        let p = deref!(plant);
        if u.is_null() {
            return fail(MfStatus::NullPointer, "u is null");
        }
        let u = std::slice::from_raw_parts(u, p.model.input_dim()).to_vec();
        match simulate_step(&p.model, &mut p.state, &u, ts) {
            Ok(()) => MfStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Writes the current outputs to `y` (length `output_dim`).
///
/// # Safety
/// `plant` must come from [`mf_plant_new`]; `y` must have room for `output_dim` values.
#[no_mangle]
pub unsafe extern "C" fn mf_plant_output(plant: *const MfPlant, y: *mut f64) -> MfStatus {
    guard(|| {
        let p = deref!(plant.cast_mut());
        if y.is_null() {
            return fail(MfStatus::NullPointer, "y is null");
        }
        let out = p.model.output(&p.state, &p.state.u_prev);
        std::slice::from_raw_parts_mut(y, out.len()).copy_from_slice(&out);
        MfStatus::Ok
    })
}

/// Current simulation time in seconds.
///
/// # Safety
/// `plant` must come from [`mf_plant_new`].
#[no_mangle]
pub unsafe extern "C" fn mf_plant_time(plant: *const MfPlant) -> f64 {
    plant.as_ref().map_or(f64::NAN, |p| p.state.t)
}

/// # Safety
/// `plant` must come from [`mf_plant_new`] or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mf_plant_free(plant: *mut MfPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// Finished closed-loop scenario run.
pub struct MfRun(RunArtifact);

/// Runs a catalog scenario (label, `label:baseline` or file path) and stores
/// the result in `*out`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_scenario_run(name: *const c_char, noiseless: bool, out: *mut *mut MfRun) -> MfStatus {
    guard(|| {
        let out = deref!(out);
        *out = ptr::null_mut();
        let name = match str_arg(name) {
            Ok(n) => n,
            Err(s) => return s,
        };
        let opts = RunOptions { noiseless, ..Default::default() };
        let cfg = match resolve(name, &opts) {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        match run_scenario(&cfg) {
            Ok(run) => {
                *out = Box::into_raw(Box::new(MfRun(run)));
                MfStatus::Ok
            }
            Err(f) => from_error(f.error),
        }
    })
}

/// Number of controlled outputs.
///
/// # Safety
/// `run` must come from [`mf_scenario_run`].
#[no_mangle]
pub unsafe extern "C" fn mf_run_outputs(run: *const MfRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.metrics.len())
}

/// RMS tracking error of output `j` (zero-based) over the evaluation window.
///
/// # Safety
/// `run` must come from [`mf_scenario_run`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_run_rms(run: *const MfRun, j: usize, out: *mut f64) -> MfStatus {
    guard(|| {
        let run = deref!(run.cast_mut());
        let out = deref!(out);
        match run.0.metrics.get(j) {
            Some(m) => {
                *out = m.rms_error;
                MfStatus::Ok
            }
            None => fail(MfStatus::Domain, format!("output index {j} out of range")),
        }
    })
}

/// # Safety
/// `run` must come from [`mf_scenario_run`] or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mf_run_free(run: *mut MfRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
