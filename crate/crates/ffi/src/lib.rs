//! C ABI for the gridworlds, run configuration, training runs and the
//! tabular theorem checks.
//!
//! Every entry point returns an [`AmStatus`]. On failure the message is kept
//! per thread and can be read with [`am_last_error`]. Handles are opaque and
//! must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use adamemento::env::{self, make_env, Action, EnvName, EnvState, GridSpec, SpecOverrides};
use adamemento::harness::verify::{self, Sizes, Theorem};
use adamemento::harness::{run_experiment, RunConfig};
use adamemento::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Usage = 4,
    Contract = 5,
    Numerical = 6,
    Compatibility = 7,
    Io = 8,
    /// The verification ran but at least one instance failed.
    VerifyFailed = 9,
    Panic = 10,
}

fn status_of(e: &Error) -> AmStatus {
    match e {
        Error::Config { .. } | Error::Validation(_) => AmStatus::Config,
        Error::Usage(_) | Error::EmptyBuffer(_) => AmStatus::Usage,
        Error::Contract(_) | Error::DegenerateGap { .. } => AmStatus::Contract,
        Error::Numerical { .. } | Error::NonFiniteLoss { .. } => AmStatus::Numerical,
        Error::Compatibility(_) | Error::Checkpoint(_) => AmStatus::Compatibility,
        Error::Io { .. } => AmStatus::Io,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), AmStatus>) -> AmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            AmStatus::Panic
        }
    }
}

fn fail(e: Error) -> AmStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> AmStatus {
    set_error(format!("{what} is null"));
    AmStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, AmStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not UTF-8"));
        AmStatus::InvalidUtf8
    })
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, AmStatus> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn am_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn am_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// One gridworld episode at a time.
pub struct AmEnv {
    spec: GridSpec,
    state: EnvState,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AmStep {
    pub state: u32,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub fell: bool,
}

/// Builds `name` (`cliff_walking`, `four_rooms`, `dark_chamber`). Zero
/// width or height keeps the layout's own size.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn am_env_new(name: *const c_char, width: u32, height: u32, out: *mut *mut AmEnv) -> AmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name: EnvName = str_arg(name, "name")?.parse().map_err(fail)?;
        let overrides = SpecOverrides {
            width: (width > 0).then_some(width as usize),
            height: (height > 0).then_some(height as usize),
            ..SpecOverrides::default()
        };
        let spec = make_env(name, &overrides).map_err(fail)?;
        let (state, _) = env::reset(&spec, 0);
        *out = Box::into_raw(Box::new(AmEnv { spec, state }));
        Ok(())
    })
}

/// # Safety
/// `env` must come from [`am_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn am_env_free(env: *mut AmEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Number of cells, which is also the observation size.
///
/// # Safety
/// `env` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn am_env_n_cells(env: *mut AmEnv, out: *mut u32) -> AmStatus {
    guard(|| {
        let env = handle(env, "env")?;
        *handle(out, "out")? = env.spec.n_cells() as u32;
        Ok(())
    })
}

/// Starts a new episode and writes the start cell index.
///
/// # Safety
/// `env` must be a live handle and `state` writable.
#[no_mangle]
pub unsafe extern "C" fn am_env_reset(env: *mut AmEnv, state: *mut u32) -> AmStatus {
    guard(|| {
        let env = handle(env, "env")?;
        let (s, obs) = env::reset(&env.spec, 0);
        env.state = s;
        *handle(state, "state")? = obs.index() as u32;
        Ok(())
    })
}

/// Moves 0 up, 1 down, 2 left, 3 right. Stepping a finished episode is a
/// usage error.
///
/// # Safety
/// `env` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn am_env_step(env: *mut AmEnv, action: u32, out: *mut AmStep) -> AmStatus {
    guard(|| {
        let env = handle(env, "env")?;
        let out = handle(out, "out")?;
        if action as usize >= Action::COUNT {
            set_error(format!("action {action} out of range"));
            return Err(AmStatus::Usage);
        }
        let action = Action::from_index(action as usize).map_err(fail)?;
        let (obs, info) = env::step_mut(&mut env.state, &env.spec, action).map_err(fail)?;
        *out = AmStep {
            state: obs.index() as u32,
            reward: info.reward,
            terminated: info.terminated,
            truncated: info.truncated,
            fell: info.fell,
        };
        Ok(())
    })
}

/// Run configuration holding the defaults until keys are set.
pub struct AmConfig {
    cfg: RunConfig,
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn am_config_new(out: *mut *mut AmConfig) -> AmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(AmConfig { cfg: RunConfig::default() }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from [`am_config_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn am_config_free(cfg: *mut AmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Sets one key, e.g. `NumEnv` to `8`. Unknown keys and bad values fail.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn am_config_set(cfg: *mut AmConfig, key: *const c_char, value: *const c_char) -> AmStatus {
    guard(|| {
        let cfg = handle(cfg, "cfg")?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        cfg.cfg.set(key, value).map_err(fail)
    })
}

/// Trains under `cfg` and writes the run's files into `out_dir`.
///
/// # Safety
/// `cfg` must be a live handle and `out_dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn am_run(cfg: *mut AmConfig, out_dir: *const c_char) -> AmStatus {
    guard(|| {
        let cfg = handle(cfg, "cfg")?;
        let dir = str_arg(out_dir, "out_dir")?;
        run_experiment(&cfg.cfg, Path::new(dir)).map(|_| ()).map_err(fail)
    })
}

/// Checks theorem 1 (shaping invariance) or 2 (gated improvement) on
/// `count` random MDPs from `first_seed`, writing the failure count.
/// Returns `VerifyFailed` when it is non-zero.
///
/// # Safety
/// `failures` must be writable.
#[no_mangle]
pub unsafe extern "C" fn am_verify(theorem: u32, first_seed: u64, count: u64, failures: *mut u64) -> AmStatus {
    guard(|| {
        let failures = handle(failures, "failures")?;
        let theorem = match theorem {
            1 => Theorem::ShapingInvariance,
            2 => Theorem::GatedImprovement,
            n => return Err(fail(Error::config("theorem", format!("expected 1 or 2, got {n}")))),
        };
        if count == 0 {
            return Err(fail(Error::config("count", "must be at least 1")));
        }
        let (_, summary) = verify::verify(first_seed..=first_seed + count - 1, &[theorem], &Sizes::default());
        *failures = summary.failures as u64;
        if summary.failures > 0 {
            set_error(format!("{} of {} instances failed", summary.failures, summary.instances));
            return Err(AmStatus::VerifyFailed);
        }
        Ok(())
    })
}
