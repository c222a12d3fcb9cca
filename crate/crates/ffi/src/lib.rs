//! C interface to blowup-lab.
//!
//! Every function returns a [`BlStatus`]. On failure the message is kept per
//! thread and can be read with [`bl_last_error_message`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use blowup_lab::bouss::{self, BlowupKind};
use blowup_lab::closedform;
use blowup_lab::euler::{self, Regime};
use blowup_lab::fields::{InitialData, Label, Tolerances};
use blowup_lab::lab::{run_scenario, ScenarioConfig};
use blowup_lab::ode::OdeTol;
use blowup_lab::spectral::SpectralState;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    InvalidData = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlRegime {
    Blowup = 0,
    NontrivialSteady = 1,
    TrivialSteady = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlBlowupKind {
    None = 0,
    JToInfinity = 1,
    JToZero = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlRegimeReport {
    pub regime: BlRegime,
    pub alpha_critical: f64,
    pub te: f64,
    /// NaN unless `regime` is `Blowup`.
    pub t_blowup: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlBlowupEstimate {
    pub kind: BlBlowupKind,
    pub t_est: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub t_resolved: f64,
    /// NaN when no rate fit was made.
    pub exponent: f64,
    pub r2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlSpectralDiagnostics {
    pub t: f64,
    pub i_t: f64,
    pub mean_gamma: f64,
    pub sup_gamma: f64,
    pub min_gamma: f64,
    pub bkm_partial: f64,
}

/// Parsed initial data `(γ₀, ρ₀)`.
pub struct BlData {
    data: InitialData,
    tol: Tolerances,
}

/// Pseudo-spectral solver state.
pub struct BlSpectral {
    state: SpectralState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(BlStatus, String);

impl Failure {
    fn new(status: BlStatus, msg: impl ToString) -> Self {
        Self(status, msg.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            BlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(BlStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(BlStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(BlStatus::NullArgument, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(BlStatus::NullArgument, format!("{name} is null")))
}

fn alpha_arg(alpha: f64) -> Result<f64, Failure> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(alpha)
    } else {
        Err(Failure::new(BlStatus::InvalidArgument, format!("alpha must be finite and >= 0, got {alpha}")))
    }
}

fn numerical(e: impl ToString) -> Failure {
    Failure::new(BlStatus::Numerical, e)
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses `gamma0` and `rho0` (expressions in `x`, `y`) on a quadrature base
/// grid of `grid_n` points per axis.
///
/// # Safety
/// `gamma0` and `rho0` must be null or NUL-terminated strings; `out` must be
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn bl_data_new(
    gamma0: *const c_char,
    rho0: *const c_char,
    grid_n: usize,
    out: *mut *mut BlData,
) -> BlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let g = str_arg(gamma0, "gamma0")?;
        let r = str_arg(rho0, "rho0")?;
        let tol = Tolerances::default();
        let data = InitialData::build(g, r, grid_n, &tol).map_err(|e| Failure::new(BlStatus::InvalidData, e))?;
        *out = Box::into_raw(Box::new(BlData { data, tol }));
        Ok(())
    })
}

/// # Safety
/// `data` must be null or come from [`bl_data_new`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn bl_data_free(data: *mut BlData) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Sets the relative tolerance used by the ODE and the quadrature.
///
/// # Safety
/// `data` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bl_data_set_tol_rel(data: *mut BlData, tol_rel: f64) -> BlStatus {
    guard(|| {
        let d = out_arg(data, "data")?;
        let mut tol = d.tol.clone();
        tol.ode_rel = tol_rel;
        tol.quad_rel = tol_rel;
        tol.validate().map_err(|e| Failure::new(BlStatus::InvalidArgument, e))?;
        d.tol = tol;
        Ok(())
    })
}

/// Minimum `m₀` of `γ₀` and the critical time `τ* = −1/m₀`.
///
/// # Safety
/// `data` must be a live handle; outputs must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn bl_data_minimum(
    data: *const BlData,
    out_m0: *mut f64,
    out_tau_star: *mut f64,
    out_count: *mut usize,
) -> BlStatus {
    guard(|| {
        let d = &ref_arg(data, "data")?.data;
        if let Some(m) = out_m0.as_mut() {
            *m = d.m0();
        }
        if let Some(t) = out_tau_star.as_mut() {
            *t = d.tau_star();
        }
        if let Some(c) = out_count.as_mut() {
            *c = d.minima().len();
        }
        Ok(())
    })
}

/// Undamped Euler blowup time `T^E` with its error estimate.
///
/// # Safety
/// `data` must be a live handle; `out_te` writable, `out_err` null or writable.
#[no_mangle]
pub unsafe extern "C" fn bl_euler_blowup_time(data: *const BlData, out_te: *mut f64, out_err: *mut f64) -> BlStatus {
    guard(|| {
        let d = ref_arg(data, "data")?;
        let out = out_arg(out_te, "out_te")?;
        let b = euler::blowup_time_undamped(&d.data, &d.tol).map_err(numerical)?;
        *out = b.te;
        if let Some(e) = out_err.as_mut() {
            *e = b.err_estimate;
        }
        Ok(())
    })
}

/// Damped Euler regime at `alpha`.
///
/// # Safety
/// `data` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bl_euler_classify(data: *const BlData, alpha: f64, out: *mut BlRegimeReport) -> BlStatus {
    guard(|| {
        let d = ref_arg(data, "data")?;
        let out = out_arg(out, "out")?;
        let alpha = alpha_arg(alpha)?;
        let r = euler::classify_regime(&d.data, alpha, &d.tol).map_err(numerical)?;
        *out = BlRegimeReport {
            regime: match r.regime {
                Regime::Blowup => BlRegime::Blowup,
                Regime::NontrivialSteady => BlRegime::NontrivialSteady,
                Regime::TrivialSteady => BlRegime::TrivialSteady,
            },
            alpha_critical: r.alpha_critical,
            te: r.te,
            t_blowup: r.t_blowup.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Boussinesq blowup detection along characteristics, watching the minima
/// of `γ₀` and `n_generic` labels drawn from `seed`.
///
/// # Safety
/// `data` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bl_detect_blowup(
    data: *const BlData,
    alpha: f64,
    seed: u64,
    n_generic: usize,
    out: *mut BlBlowupEstimate,
) -> BlStatus {
    guard(|| {
        let d = ref_arg(data, "data")?;
        let out = out_arg(out, "out")?;
        let alpha = alpha_arg(alpha)?;
        let watch = bouss::watch_labels(&d.data, seed, n_generic);
        let e = bouss::detect_blowup(&d.data, alpha, &watch, &d.tol)
            .map_err(numerical)?
            .estimate;
        *out = BlBlowupEstimate {
            kind: match e.kind {
                BlowupKind::None => BlBlowupKind::None,
                BlowupKind::JToInfinity => BlBlowupKind::JToInfinity,
                BlowupKind::JToZero => BlBlowupKind::JToZero,
            },
            t_est: e.t_est,
            t_lo: e.bracket.0,
            t_hi: e.bracket.1,
            t_resolved: e.t_resolved,
            exponent: e.rate_fit.map_or(f64::NAN, |f| f.exponent),
            r2: e.rate_fit.map_or(f64::NAN, |f| f.r2),
        };
        Ok(())
    })
}

/// `−ln(1 − 2α)/α` for `0 ≤ α < ½`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_part2_blowup_time_formula(alpha: f64, out: *mut f64) -> BlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = closedform::T_alpha_B_formula(alpha).map_err(|e| Failure::new(BlStatus::InvalidArgument, e))?;
        Ok(())
    })
}

/// `μ₁(t) = 4/(2 − t)²` for `0 ≤ t < 2`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_part2_mu1_undamped(t: f64, out: *mut f64) -> BlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = closedform::mu1_exact_undamped(t).map_err(|e| Failure::new(BlStatus::InvalidArgument, e))?;
        Ok(())
    })
}

/// Divergence time of `μ₁` from the reduced ODE system.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_part2_divergence_time(alpha: f64, out: *mut f64) -> BlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let t = Tolerances::default();
        let tol = OdeTol {
            rel: t.ode_rel,
            abs: t.ode_abs,
            event: t.event_tol,
        };
        *out = closedform::solve_N(alpha, &tol).map_err(numerical)?.t_div;
        Ok(())
    })
}

/// Spectral state on an `n × n` grid with tracers at `labels_xy`
/// (`n_labels` pairs `x, y`).
///
/// # Safety
/// `data` must be a live handle, `labels_xy` must point to `2·n_labels`
/// doubles (or be null with `n_labels = 0`), `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_spectral_new(
    data: *const BlData,
    n: usize,
    labels_xy: *const f64,
    n_labels: usize,
    out: *mut *mut BlSpectral,
) -> BlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let d = ref_arg(data, "data")?;
        let labels: Vec<Label> = if n_labels == 0 {
            Vec::new()
        } else {
            if labels_xy.is_null() {
                return Err(Failure::new(BlStatus::NullArgument, "labels_xy is null"));
            }
            std::slice::from_raw_parts(labels_xy, 2 * n_labels)
                .chunks_exact(2)
                .map(|c| Label::new(c[0], c[1]))
                .collect()
        };
        let state = SpectralState::new(&d.data, n, &labels).map_err(|e| Failure::new(BlStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(BlSpectral { state }));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or come from [`bl_spectral_new`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn bl_spectral_free(s: *mut BlSpectral) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// One RK4 step of size `dt`. Fails without changing the state when `dt`
/// violates the CFL limit.
///
/// # Safety
/// `s` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bl_spectral_step(s: *mut BlSpectral, alpha: f64, dt: f64) -> BlStatus {
    guard(|| {
        let s = out_arg(s, "s")?;
        let alpha = alpha_arg(alpha)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Failure::new(BlStatus::InvalidArgument, format!("dt must be positive, got {dt}")));
        }
        s.state.step(alpha, dt).map_err(numerical)
    })
}

/// Largest stable step for the current state.
///
/// # Safety
/// `s` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bl_spectral_cfl_limit(s: *const BlSpectral, out: *mut f64) -> BlStatus {
    guard(|| {
        let s = ref_arg(s, "s")?;
        *out_arg(out, "out")? = s.state.cfl_limit().map_err(numerical)?;
        Ok(())
    })
}

/// # Safety
/// `s` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bl_spectral_diagnostics(s: *const BlSpectral, out: *mut BlSpectralDiagnostics) -> BlStatus {
    guard(|| {
        let s = ref_arg(s, "s")?;
        let out = out_arg(out, "out")?;
        let d = s.state.diagnostics();
        *out = BlSpectralDiagnostics {
            t: s.state.t,
            i_t: d.i_t,
            mean_gamma: d.mean_gamma,
            sup_gamma: d.sup_gamma,
            min_gamma: d.min_gamma,
            bkm_partial: d.bkm_partial,
        };
        Ok(())
    })
}

/// Copies `γ` (row-major, `y` slowest) into `buf`, which must hold `n²`
/// values.
///
/// # Safety
/// `s` must be a live handle and `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bl_spectral_gamma(s: *const BlSpectral, buf: *mut f64, len: usize) -> BlStatus {
    guard(|| {
        let s = ref_arg(s, "s")?;
        let g = &s.state.gamma;
        if len != g.len() {
            return Err(Failure::new(BlStatus::InvalidArgument, format!("buffer holds {len} values, need {}", g.len())));
        }
        if buf.is_null() {
            return Err(Failure::new(BlStatus::NullArgument, "buf is null"));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(g);
        Ok(())
    })
}

/// Runs a scenario given as TOML text and returns the summary as JSON.
/// Per-alpha failures are reported inside the JSON; the status covers
/// configuration errors only. Free the result with [`bl_string_free`].
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn bl_run_scenario(toml: *const c_char, out_json: *mut *mut c_char) -> BlStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let text = str_arg(toml, "toml")?;
        let cfg = ScenarioConfig::from_toml(text).map_err(|e| Failure::new(BlStatus::InvalidArgument, e))?;
        let summary = run_scenario(&cfg).map_err(|e| Failure::new(BlStatus::InvalidData, e))?;
        let json = serde_json::to_string(&summary).map_err(numerical)?;
        *out = CString::new(json).map_err(numerical)?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn bl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
