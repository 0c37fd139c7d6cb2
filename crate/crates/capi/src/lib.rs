//! C interface to the solver: opaque simulation handles built from the
//! same TOML documents the command line reads, plus direct access to the
//! filter stability constants and step-size bounds.
//!
//! Conventions: constructors return null on failure and every fallible
//! call returns an [`LtiStatus`]; the corresponding message is kept per
//! thread and retrieved with [`lti_last_error_message`].  Handles are
//! freed exactly once with [`lti_sim_free`]; all other calls borrow them.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use lti_dg::config::Config;
use lti_dg::filters::{self, FilterSpec};
use lti_dg::integrators::{run, IntegrateError, RunSettings, SchemeSetup};

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Result of a call into this library.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtiStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range (bad filter variant, step size, ...).
    InvalidArgument = 2,
    /// The configuration failed to parse or to build a scheme.
    BadConfig = 3,
    /// The integration itself failed (a solver stalled, or a panic).
    RunFailed = 4,
}

/// Stability constants of a filter.
#[repr(C)]
pub struct LtiFilterConstants {
    /// Lower bound of the auxiliary function on the admissible window.
    pub c_theta: f64,
    /// Squared step-size window of the filter; infinity when unbounded.
    pub beta_sq: f64,
    /// Defect bound entering the error constant.
    pub c_phi: f64,
    /// 1 when the filter carries no stabilization margin.
    pub unstabilized: u8,
}

/// Step-size bounds of a configured scheme.
#[repr(C)]
pub struct LtiCfl {
    /// Filter window bound.
    pub tau_psi: f64,
    /// Coarse-region bound with its safety factor applied.
    pub tau_lf_coarse: f64,
    /// Plain leapfrog bound on the whole mesh.
    pub tau_leapfrog: f64,
    /// Unscaled coarse-only leapfrog bound (hard ceiling).
    pub coarse_leapfrog_raw: f64,
    /// What runs accept without the override flag.
    pub admissible: f64,
}

/// Outcome of one integration.
#[repr(C)]
pub struct LtiRunSummary {
    pub tau: f64,
    pub final_l2_error: f64,
    pub max_l2_error: f64,
    pub wall_seconds: f64,
    pub final_time: f64,
    pub steps: u64,
    /// Step index of divergence; meaningful only when `diverged` is 1.
    pub diverged_at: u64,
    pub diverged: u8,
    /// Inner filter applications (solver iterations or polynomial stages).
    pub filter_applications: u64,
}

/// Opaque simulation handle: a parsed configuration with its mesh,
/// operators, filter constants, and step-size bounds resolved.
pub struct LtiSim {
    config: Config,
    setup: SchemeSetup,
}

fn filter_from_raw(variant: c_int, p: u32, eta: f64) -> Result<FilterSpec, String> {
    match variant {
        0 => Ok(FilterSpec::Leapfrog),
        1 => Ok(FilterSpec::CrankNicolson),
        2 => Ok(FilterSpec::Lfc { p, eta }),
        other => Err(format!(
            "unknown filter variant {other} (0 leapfrog, 1 crank-nicolson, 2 lfc)"
        )),
    }
}

/// Fills `out` with the stability constants of a filter.  `variant` is
/// 0 for leapfrog (then `leapfrog_theta` in (0,1) sets its window and
/// `p`/`eta` are ignored), 1 for Crank--Nicolson, 2 for Chebyshev.
///
/// # Safety
/// `out` must point to writable memory for one `LtiFilterConstants`.
#[no_mangle]
pub unsafe extern "C" fn lti_filter_constants(
    variant: c_int,
    p: u32,
    eta: f64,
    leapfrog_theta: f64,
    out: *mut LtiFilterConstants,
) -> LtiStatus {
    clear_error();
    if out.is_null() {
        set_error("out pointer is null".into());
        return LtiStatus::NullPointer;
    }
    let computed = catch_unwind(|| {
        let spec = filter_from_raw(variant, p, eta)?;
        filters::constants(&spec, leapfrog_theta).map_err(|e| e.to_string())
    });
    match computed {
        Ok(Ok(c)) => {
            *out = LtiFilterConstants {
                c_theta: c.c_theta,
                beta_sq: c.beta_sq,
                c_phi: c.c_phi,
                unstabilized: c.unstabilized as u8,
            };
            LtiStatus::Ok
        }
        Ok(Err(msg)) => {
            set_error(msg);
            LtiStatus::InvalidArgument
        }
        Err(_) => {
            set_error("internal panic".into());
            LtiStatus::RunFailed
        }
    }
}

unsafe fn sim_from_config(text: &str) -> Result<*mut LtiSim, String> {
    let config = Config::parse(text).map_err(|e| e.to_string())?;
    let setup = config.setup().map_err(|e| e.to_string())?;
    Ok(Box::into_raw(Box::new(LtiSim { config, setup })))
}

/// Builds a simulation from a TOML document.  Returns null on failure;
/// the message is available through [`lti_last_error_message`].
///
/// # Safety
/// `text` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lti_sim_new_from_toml(text: *const c_char) -> *mut LtiSim {
    clear_error();
    if text.is_null() {
        set_error("config text is null".into());
        return std::ptr::null_mut();
    }
    let Ok(text) = CStr::from_ptr(text).to_str() else {
        set_error("config text is not valid UTF-8".into());
        return std::ptr::null_mut();
    };
    match catch_unwind(|| sim_from_config(text)) {
        Ok(Ok(sim)) => sim,
        Ok(Err(msg)) => {
            set_error(msg);
            std::ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic".into());
            std::ptr::null_mut()
        }
    }
}

/// Builds a simulation from a TOML file on disk.  Returns null on failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lti_sim_new_from_file(path: *const c_char) -> *mut LtiSim {
    clear_error();
    if path.is_null() {
        set_error("config path is null".into());
        return std::ptr::null_mut();
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_error("config path is not valid UTF-8".into());
        return std::ptr::null_mut();
    };
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) => {
            set_error(format!("reading {path}: {e}"));
            return std::ptr::null_mut();
        }
    };
    match catch_unwind(AssertUnwindSafe(|| sim_from_config(&text))) {
        Ok(Ok(sim)) => sim,
        Ok(Err(msg)) => {
            set_error(msg);
            std::ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic".into());
            std::ptr::null_mut()
        }
    }
}

/// Fills `out` with the step-size bounds of the configured scheme.
///
/// # Safety
/// `sim` must come from a constructor and not have been freed; `out` must
/// point to writable memory for one `LtiCfl`.
#[no_mangle]
pub unsafe extern "C" fn lti_sim_cfl(sim: *const LtiSim, out: *mut LtiCfl) -> LtiStatus {
    clear_error();
    if sim.is_null() || out.is_null() {
        set_error("sim or out pointer is null".into());
        return LtiStatus::NullPointer;
    }
    let cfl = &(*sim).setup.cfl;
    *out = LtiCfl {
        tau_psi: cfl.tau_psi,
        tau_lf_coarse: cfl.tau_lf_coarse,
        tau_leapfrog: cfl.tau_leapfrog,
        coarse_leapfrog_raw: cfl.coarse_leapfrog_raw,
        admissible: cfl.admissible,
    };
    LtiStatus::Ok
}

/// Integrates to the configured end time with step size `tau` (pass a
/// non-positive `tau` for 95% of the admissible bound) and fills `out`.
/// A diverged run reports `Ok` with the `diverged` flag set; `RunFailed`
/// means the integration could not proceed at all.
///
/// # Safety
/// `sim` must come from a constructor and not have been freed; `out` must
/// point to writable memory for one `LtiRunSummary`.
#[no_mangle]
pub unsafe extern "C" fn lti_sim_run(
    sim: *const LtiSim,
    tau: f64,
    out: *mut LtiRunSummary,
) -> LtiStatus {
    clear_error();
    if sim.is_null() || out.is_null() {
        set_error("sim or out pointer is null".into());
        return LtiStatus::NullPointer;
    }
    let sim = &*sim;
    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<_, IntegrateError> {
        let tau = if tau > 0.0 { tau } else { 0.95 * sim.setup.cfl.admissible };
        let mut settings = RunSettings::new(tau, sim.config.time.t_end);
        settings.source_quad = sim.config.source_quad().map_err(|e| {
            IntegrateError::Setup(e.to_string())
        })?;
        settings.override_cfl = sim.config.time.override_cfl;
        settings.cg = sim.config.cg_settings();
        settings.error_every = sim.config.run.error_every;
        run(&sim.setup, &settings)
    }));
    match outcome {
        Ok(Ok(summary)) => {
            *out = LtiRunSummary {
                tau: summary.tau,
                final_l2_error: summary.final_l2_error,
                max_l2_error: summary.max_l2_error,
                wall_seconds: summary.wall_seconds,
                final_time: summary.final_time,
                steps: summary.steps as u64,
                diverged_at: summary.diverged_at.unwrap_or(0) as u64,
                diverged: summary.diverged_at.is_some() as u8,
                filter_applications: summary.filter_applications as u64,
            };
            LtiStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(e.to_string());
            match e {
                IntegrateError::TauTooLarge { .. } | IntegrateError::Setup(_) => {
                    LtiStatus::InvalidArgument
                }
                _ => LtiStatus::RunFailed,
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            LtiStatus::RunFailed
        }
    }
}

/// Frees a simulation handle.  Passing null is a no-op.
///
/// # Safety
/// `sim` must come from a constructor and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lti_sim_free(sim: *mut LtiSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Copies the last error message of this thread into `buf` (truncated to
/// `len - 1` bytes, always NUL-terminated when `len > 0`) and returns the
/// full message length in bytes excluding the NUL; 0 means no error is
/// pending.  Pass a null `buf` to query the length alone.
///
/// # Safety
/// When `buf` is non-null it must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lti_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(msg) = slot.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// The library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lti_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
