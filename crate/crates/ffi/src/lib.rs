//! C ABI over the ecodrive simulator.
//!
//! Conventions: objects are opaque handles created and destroyed through
//! paired `*_new`/`*_free` calls; fallible functions return an
//! [`EcodriveStatus`] and write results through out-pointers; the last error
//! message is kept per thread and fetched with [`ecodrive_last_error`].
//! The C header is generated into `include/ecodrive.h` at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::sync::Arc;

use libc::c_char;

use ecodrive::baseline::{baseline_run, SplitRatio};
use ecodrive::model::VehicleModel;
use ecodrive::mpc::{run_closed_loop, MpcConfig, RunLog};
use ecodrive::prediction::{NoiseConfig, NoiseOrder};
use ecodrive::scenario::{generate_corridor_scenario, load_scenario, CorridorConfig, Scenario};

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

/// Result code of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcodriveStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    RunFailed = 4,
    Collision = 5,
}

/// Opaque plant model handle (vehicle, battery, motors, fitted polynomials).
pub struct EcodriveModel {
    inner: Arc<VehicleModel>,
}

/// Opaque scenario handle.
pub struct EcodriveScenario {
    inner: Scenario,
}

/// Opaque closed-loop (or baseline) history handle.
pub struct EcodriveRunLog {
    inner: RunLog,
}

/// One plant step of a run history, by value.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcodriveLogRow {
    pub t: f64,
    pub d: f64,
    pub v: f64,
    pub soc: f64,
    pub a: f64,
    pub t_f: f64,
    pub t_r: f64,
    pub p_bat: f64,
    pub f_b: f64,
    pub s1: f64,
    pub s2: f64,
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ecodrive_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent error on this thread; empty when none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ecodrive_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `cstr` must be NULL or a valid NUL-terminated string.
unsafe fn opt_path(cstr: *const c_char) -> Result<Option<PathBuf>, EcodriveStatus> {
    if cstr.is_null() {
        return Ok(None);
    }
    match CStr::from_ptr(cstr).to_str() {
        Ok(s) => Ok(Some(PathBuf::from(s))),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(EcodriveStatus::InvalidArgument)
        }
    }
}

/// Builds the default plant model (generates maps, fits polynomials).
///
/// # Safety
/// `out` must be a valid pointer; the returned handle must be released with
/// [`ecodrive_model_free`].
#[no_mangle]
pub unsafe extern "C" fn ecodrive_model_default(out: *mut *mut EcodriveModel) -> EcodriveStatus {
    if out.is_null() {
        return EcodriveStatus::NullArgument;
    }
    match VehicleModel::default_model() {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(EcodriveModel { inner }));
            EcodriveStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            EcodriveStatus::InvalidArgument
        }
    }
}

/// # Safety
/// `model` must come from [`ecodrive_model_default`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_model_free(model: *mut EcodriveModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Generates the default synthetic signalized corridor for `seed`.
///
/// # Safety
/// `out` must be valid; release the handle with [`ecodrive_scenario_free`].
#[no_mangle]
pub unsafe extern "C" fn ecodrive_scenario_generate(
    seed: u64,
    out: *mut *mut EcodriveScenario,
) -> EcodriveStatus {
    if out.is_null() {
        return EcodriveStatus::NullArgument;
    }
    let scenario = generate_corridor_scenario(seed, &CorridorConfig::default());
    *out = Box::into_raw(Box::new(EcodriveScenario { inner: scenario }));
    EcodriveStatus::Ok
}

/// Loads a scenario from CSV files; `signals_csv` and `grade_csv` may be NULL.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_scenario_load(
    scenario_csv: *const c_char,
    signals_csv: *const c_char,
    grade_csv: *const c_char,
    v_max: f64,
    out: *mut *mut EcodriveScenario,
) -> EcodriveStatus {
    if out.is_null() || scenario_csv.is_null() {
        return EcodriveStatus::NullArgument;
    }
    let scenario_path = match opt_path(scenario_csv) {
        Ok(Some(p)) => p,
        _ => return EcodriveStatus::InvalidArgument,
    };
    let signals = match opt_path(signals_csv) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let grade = match opt_path(grade_csv) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match load_scenario(&scenario_path, signals.as_deref(), grade.as_deref(), v_max) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(EcodriveScenario { inner }));
            EcodriveStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            EcodriveStatus::Io
        }
    }
}

/// Writes the scenario CSV files; `signals_csv`/`grade_csv` may be NULL.
///
/// # Safety
/// `scenario` must be a live handle; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_scenario_save(
    scenario: *const EcodriveScenario,
    scenario_csv: *const c_char,
    signals_csv: *const c_char,
    grade_csv: *const c_char,
) -> EcodriveStatus {
    if scenario.is_null() || scenario_csv.is_null() {
        return EcodriveStatus::NullArgument;
    }
    let path = match opt_path(scenario_csv) {
        Ok(Some(p)) => p,
        _ => return EcodriveStatus::InvalidArgument,
    };
    let signals = match opt_path(signals_csv) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let grade = match opt_path(grade_csv) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match (*scenario)
        .inner
        .save(&path, signals.as_deref(), grade.as_deref())
    {
        Ok(()) => EcodriveStatus::Ok,
        Err(e) => {
            set_error(&e.to_string());
            EcodriveStatus::Io
        }
    }
}

/// Scenario length in seconds.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_scenario_duration(scenario: *const EcodriveScenario) -> f64 {
    if scenario.is_null() {
        return f64::NAN;
    }
    (*scenario).inner.duration()
}

/// # Safety
/// `scenario` must come from a scenario constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_scenario_free(scenario: *mut EcodriveScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the receding-horizon closed loop with the given seed and prediction
/// uncertainty (`sigma`, `mu` on acceleration; `p_s` shift magnitude in s).
///
/// # Safety
/// Handles must be live; `out` must be valid; release the log with
/// [`ecodrive_runlog_free`].
#[no_mangle]
pub unsafe extern "C" fn ecodrive_run_optimal(
    scenario: *const EcodriveScenario,
    model: *const EcodriveModel,
    seed: u64,
    sigma: f64,
    mu: f64,
    p_s: f64,
    out: *mut *mut EcodriveRunLog,
) -> EcodriveStatus {
    if scenario.is_null() || model.is_null() || out.is_null() {
        return EcodriveStatus::NullArgument;
    }
    let cfg = MpcConfig {
        seed,
        noise: NoiseConfig {
            sigma,
            mu,
            p_s,
            seed,
            order: NoiseOrder::default(),
        },
        ..MpcConfig::default()
    };
    match run_closed_loop(&(*scenario).inner, &cfg, &(*model).inner) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(EcodriveRunLog { inner }));
            EcodriveStatus::Ok
        }
        Err(e @ ecodrive::Error::Collision { .. }) => {
            set_error(&e.to_string());
            EcodriveStatus::Collision
        }
        Err(e) => {
            set_error(&e.to_string());
            EcodriveStatus::RunFailed
        }
    }
}

/// Replays the preceding vehicle through the same powertrain (1:1 split).
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_run_baseline(
    scenario: *const EcodriveScenario,
    model: *const EcodriveModel,
    initial_soc: f64,
    out: *mut *mut EcodriveRunLog,
) -> EcodriveStatus {
    if scenario.is_null() || model.is_null() || out.is_null() {
        return EcodriveStatus::NullArgument;
    }
    match baseline_run(
        &(*scenario).inner,
        &(*model).inner,
        &SplitRatio::default(),
        initial_soc,
    ) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(EcodriveRunLog { inner }));
            EcodriveStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            EcodriveStatus::RunFailed
        }
    }
}

/// Number of plant steps in the log.
///
/// # Safety
/// `log` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_runlog_len(log: *const EcodriveRunLog) -> usize {
    if log.is_null() {
        return 0;
    }
    (*log).inner.rows.len()
}

/// # Safety
/// `log` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_runlog_final_soc(log: *const EcodriveRunLog) -> f64 {
    if log.is_null() {
        return f64::NAN;
    }
    (*log).inner.final_soc()
}

/// Median NLP wall time per MPC cycle (0 for baseline logs).
///
/// # Safety
/// `log` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_runlog_median_solve_time(log: *const EcodriveRunLog) -> f64 {
    if log.is_null() {
        return f64::NAN;
    }
    (*log).inner.median_solve_time()
}

/// Copies row `index` into `out`.
///
/// # Safety
/// `log` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_runlog_row(
    log: *const EcodriveRunLog,
    index: usize,
    out: *mut EcodriveLogRow,
) -> EcodriveStatus {
    if log.is_null() || out.is_null() {
        return EcodriveStatus::NullArgument;
    }
    let rows = &(*log).inner.rows;
    if index >= rows.len() {
        set_error("row index out of range");
        return EcodriveStatus::InvalidArgument;
    }
    let r = &rows[index];
    *out = EcodriveLogRow {
        t: r.t,
        d: r.d,
        v: r.v,
        soc: r.soc,
        a: r.a,
        t_f: r.t_f,
        t_r: r.t_r,
        p_bat: r.p_bat,
        f_b: r.f_b,
        s1: r.s1,
        s2: r.s2,
    };
    EcodriveStatus::Ok
}

/// Writes the full log as CSV.
///
/// # Safety
/// `log` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_runlog_write_csv(
    log: *const EcodriveRunLog,
    path: *const c_char,
) -> EcodriveStatus {
    if log.is_null() || path.is_null() {
        return EcodriveStatus::NullArgument;
    }
    let path = match opt_path(path) {
        Ok(Some(p)) => p,
        _ => return EcodriveStatus::InvalidArgument,
    };
    match (*log).inner.write_csv(&path) {
        Ok(()) => EcodriveStatus::Ok,
        Err(e) => {
            set_error(&e.to_string());
            EcodriveStatus::Io
        }
    }
}

/// # Safety
/// `log` must come from a run constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_runlog_free(log: *mut EcodriveRunLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Relative SOC improvement (percent) of an ego run against a baseline.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ecodrive_r_soc(
    soc_ego: f64,
    soc_preceding: f64,
    soc_initial: f64,
    out: *mut f64,
) -> EcodriveStatus {
    if out.is_null() {
        return EcodriveStatus::NullArgument;
    }
    match ecodrive::baseline::compute_r_soc(soc_ego, soc_preceding, soc_initial) {
        Ok(v) => {
            *out = v;
            EcodriveStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            EcodriveStatus::InvalidArgument
        }
    }
}
