//! C ABI over `itsa-lab`.
//!
//! Panels and fits are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`ItsaStatus`]; on failure the
//! message is available from [`itsa_last_error_message`] on the same
//! thread until the next failing call.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use itsa_lab::dgp::{gen_panel, read_panel_csv, spectral_radius, ScenarioConfig};
use itsa_lab::model::{wald_test, FitResult, Panel, PanelRow, N_COEF};
use itsa_lab::olsnw::{fit_ols_nw, HacConfig};
use itsa_lab::praisk::{fit_pw, PwConfig};
use itsa_lab::Error;

/// Number of model coefficients.
pub const ITSA_N_COEF: usize = 8;

const _: () = assert!(ITSA_N_COEF == N_COEF);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItsaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Bad panel data, CSV or configuration.
    InputError = 3,
    /// Numerical or estimation failure.
    EstimationError = 4,
    /// Prais-Winsten hit its iteration limit; the fit is still returned.
    NotConverged = 5,
    Panic = 6,
}

/// Opaque panel handle.
pub struct ItsaPanel(Panel);

/// Opaque fit handle.
pub struct ItsaFit(FitResult);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ItsaWald {
    pub estimate: f64,
    pub se: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub df: usize,
    pub rejected: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> ItsaStatus {
    match err {
        Error::NotConverged { .. } => ItsaStatus::NotConverged,
        e if e.is_input_error() => ItsaStatus::InputError,
        _ => ItsaStatus::EstimationError,
    }
}

fn fail(err: Error) -> ItsaStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn guard(f: impl FnOnce() -> ItsaStatus) -> ItsaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            ItsaStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(s: *const c_char) -> Result<&'a str, ItsaStatus> {
    if s.is_null() {
        set_error("null string argument");
        return Err(ItsaStatus::NullPointer);
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        ItsaStatus::InvalidArgument
    })
}

macro_rules! non_null {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            set_error(concat!("null pointer: ", stringify!($p)));
            return ItsaStatus::NullPointer;
        })+
    };
}

/// Message of the last failing call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn itsa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn itsa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Largest modulus of the AR companion matrix eigenvalues; NaN for a null
/// pointer with `k > 0`.
#[no_mangle]
pub unsafe extern "C" fn itsa_spectral_radius(rho: *const f64, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if rho.is_null() {
        return f64::NAN;
    }
    let rho = std::slice::from_raw_parts(rho, k);
    catch_unwind(|| spectral_radius(rho)).unwrap_or(f64::NAN)
}

/// Builds a panel from `n` rows given column-wise. Flags are 0 or 1.
#[no_mangle]
pub unsafe extern "C" fn itsa_panel_from_arrays(
    n: usize,
    unit_id: *const i64,
    t: *const i64,
    treated: *const u8,
    post: *const u8,
    y: *const f64,
    out: *mut *mut ItsaPanel,
) -> ItsaStatus {
    non_null!(unit_id, t, treated, post, y, out);
    guard(|| {
        let (u, tt, tr, po, yy) = (
            std::slice::from_raw_parts(unit_id, n),
            std::slice::from_raw_parts(t, n),
            std::slice::from_raw_parts(treated, n),
            std::slice::from_raw_parts(post, n),
            std::slice::from_raw_parts(y, n),
        );
        if tr.iter().chain(po).any(|f| *f > 1) {
            set_error("treated and post flags must be 0 or 1");
            return ItsaStatus::InvalidArgument;
        }
        let rows = (0..n)
            .map(|i| PanelRow {
                unit_id: u[i],
                t: tt[i],
                y: yy[i],
                is_treated_unit: tr[i] == 1,
                is_post: po[i] == 1,
            })
            .collect();
        match Panel::new(rows) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(ItsaPanel(p)));
                ItsaStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Reads a panel CSV with columns `unit_id,t,treated,post,y`.
#[no_mangle]
pub unsafe extern "C" fn itsa_panel_from_csv(path: *const c_char, out: *mut *mut ItsaPanel) -> ItsaStatus {
    non_null!(out);
    let path = match c_str(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    guard(|| {
        let res = std::fs::File::open(path)
            .map_err(Error::from)
            .and_then(|f| read_panel_csv(std::io::BufReader::new(f)));
        match res {
            Ok(p) => {
                *out = Box::into_raw(Box::new(ItsaPanel(p)));
                ItsaStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Generates a panel from a JSON scenario config (same schema as the
/// `dgp` command).
#[no_mangle]
pub unsafe extern "C" fn itsa_panel_generate(config_json: *const c_char, out: *mut *mut ItsaPanel) -> ItsaStatus {
    non_null!(out);
    let text = match c_str(config_json) {
        Ok(p) => p,
        Err(s) => return s,
    };
    guard(|| {
        let res = serde_json::from_str::<ScenarioConfig>(text)
            .map_err(Error::from)
            .and_then(|cfg| gen_panel(&cfg));
        match res {
            Ok(p) => {
                *out = Box::into_raw(Box::new(ItsaPanel(p)));
                ItsaStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn itsa_panel_len(panel: *const ItsaPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn itsa_panel_n_units(panel: *const ItsaPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.0.segments().len())
}

/// First period flagged as post-intervention.
#[no_mangle]
pub unsafe extern "C" fn itsa_panel_intervention(panel: *const ItsaPanel, out: *mut i64) -> ItsaStatus {
    non_null!(panel, out);
    match (*panel).0.intervention_from_flags() {
        Some(t) => {
            *out = t;
            ItsaStatus::Ok
        }
        None => {
            set_error("post flags do not identify a single intervention period");
            ItsaStatus::InputError
        }
    }
}

/// Copies the outcome column into `out` (capacity `len`, at least the
/// panel length).
#[no_mangle]
pub unsafe extern "C" fn itsa_panel_y(panel: *const ItsaPanel, out: *mut f64, len: usize) -> ItsaStatus {
    non_null!(panel, out);
    let y = (*panel).0.y();
    if len < y.len() {
        set_error(format!("buffer holds {len} values, panel has {}", y.len()));
        return ItsaStatus::InvalidArgument;
    }
    ptr::copy_nonoverlapping(y.as_ptr(), out, y.len());
    ItsaStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn itsa_panel_free(panel: *mut ItsaPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

unsafe fn store_fit(res: itsa_lab::Result<FitResult>, out: *mut *mut ItsaFit) -> ItsaStatus {
    match res {
        Ok(f) => {
            *out = Box::into_raw(Box::new(ItsaFit(f)));
            ItsaStatus::Ok
        }
        Err(Error::NotConverged { iterations, fit }) => {
            set_error(format!("Prais-Winsten did not converge in {iterations} iterations"));
            *out = Box::into_raw(Box::new(ItsaFit(*fit)));
            ItsaStatus::NotConverged
        }
        Err(e) => fail(e),
    }
}

/// OLS with Newey-West covariance. A negative `lag` selects the automatic
/// bandwidth.
#[no_mangle]
pub unsafe extern "C" fn itsa_fit_ols_nw(
    panel: *const ItsaPanel,
    intervention: i64,
    lag: i64,
    small_sample_adjust: bool,
    out: *mut *mut ItsaFit,
) -> ItsaStatus {
    non_null!(panel, out);
    guard(|| {
        let hac = HacConfig {
            lag: usize::try_from(lag).ok(),
            small_sample_adjust,
        };
        store_fit(fit_ols_nw(&(*panel).0, intervention, &hac), out)
    })
}

/// Iterated Prais-Winsten for AR(`k`) errors. Non-positive `tol` or zero
/// `max_iter` select the defaults. On `NotConverged` the last iterate is
/// still written to `out`.
#[no_mangle]
pub unsafe extern "C" fn itsa_fit_pw(
    panel: *const ItsaPanel,
    intervention: i64,
    k: usize,
    tol: f64,
    max_iter: usize,
    out: *mut *mut ItsaFit,
) -> ItsaStatus {
    non_null!(panel, out);
    guard(|| {
        let mut cfg = PwConfig::with_order(k);
        if tol > 0.0 {
            cfg.tol = tol;
        }
        if max_iter > 0 {
            cfg.max_iter = max_iter;
        }
        store_fit(fit_pw(&(*panel).0, intervention, &cfg), out)
    })
}

/// Writes the 8 coefficients.
#[no_mangle]
pub unsafe extern "C" fn itsa_fit_beta(fit: *const ItsaFit, out: *mut f64) -> ItsaStatus {
    non_null!(fit, out);
    ptr::copy_nonoverlapping((*fit).0.beta.as_slice().as_ptr(), out, N_COEF);
    ItsaStatus::Ok
}

/// Writes the 8 standard errors.
#[no_mangle]
pub unsafe extern "C" fn itsa_fit_se(fit: *const ItsaFit, out: *mut f64) -> ItsaStatus {
    non_null!(fit, out);
    ptr::copy_nonoverlapping((*fit).0.se.as_ptr(), out, N_COEF);
    ItsaStatus::Ok
}

/// Writes the 8x8 covariance in row-major order (64 values).
#[no_mangle]
pub unsafe extern "C" fn itsa_fit_cov(fit: *const ItsaFit, out: *mut f64) -> ItsaStatus {
    non_null!(fit, out);
    for (i, row) in (*fit).0.cov.iter().enumerate() {
        ptr::copy_nonoverlapping(row.as_ptr(), out.add(i * N_COEF), N_COEF);
    }
    ItsaStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn itsa_fit_n_obs(fit: *const ItsaFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.n_obs)
}

#[no_mangle]
pub unsafe extern "C" fn itsa_fit_df(fit: *const ItsaFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.df)
}

/// Newey-West lag used, or -1 for a Prais-Winsten fit.
#[no_mangle]
pub unsafe extern "C" fn itsa_fit_lag(fit: *const ItsaFit) -> i64 {
    fit.as_ref()
        .and_then(|f| f.0.lag_used)
        .map_or(-1, |l| l as i64)
}

/// Prais-Winsten iterations, or 0 for an OLS fit.
#[no_mangle]
pub unsafe extern "C" fn itsa_fit_iterations(fit: *const ItsaFit) -> usize {
    fit.as_ref().and_then(|f| f.0.iterations).unwrap_or(0)
}

/// AR order of a Prais-Winsten fit; 0 for OLS.
#[no_mangle]
pub unsafe extern "C" fn itsa_fit_rho_order(fit: *const ItsaFit) -> usize {
    fit.as_ref()
        .and_then(|f| f.0.rho_hat.as_ref())
        .map_or(0, |r| r.len())
}

/// Writes the AR estimates and, if `se` is not NULL, their standard
/// errors. Both buffers need `itsa_fit_rho_order` slots.
#[no_mangle]
pub unsafe extern "C" fn itsa_fit_rho(fit: *const ItsaFit, rho: *mut f64, se: *mut f64, len: usize) -> ItsaStatus {
    non_null!(fit, rho);
    let f = &(*fit).0;
    let (Some(r), Some(s)) = (f.rho_hat.as_ref(), f.rho_se()) else {
        set_error("fit has no AR coefficients");
        return ItsaStatus::InvalidArgument;
    };
    if len < r.len() {
        set_error(format!("buffer holds {len} values, fit has {}", r.len()));
        return ItsaStatus::InvalidArgument;
    }
    ptr::copy_nonoverlapping(r.as_ptr(), rho, r.len());
    if !se.is_null() {
        ptr::copy_nonoverlapping(s.as_ptr(), se, s.len());
    }
    ItsaStatus::Ok
}

/// t test of `beta[index] = null_value` at level `alpha`.
#[no_mangle]
pub unsafe extern "C" fn itsa_fit_wald(
    fit: *const ItsaFit,
    index: usize,
    null_value: f64,
    alpha: f64,
    out: *mut ItsaWald,
) -> ItsaStatus {
    non_null!(fit, out);
    guard(|| match wald_test(&(*fit).0, index, null_value, alpha) {
        Ok(w) => {
            *out = ItsaWald {
                estimate: w.estimate,
                se: w.se,
                statistic: w.statistic,
                p_value: w.p_value,
                ci_low: w.ci_low,
                ci_high: w.ci_high,
                df: w.df,
                rejected: w.rejected,
            };
            ItsaStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// The fit as a JSON string; release it with `itsa_string_free`. NULL on
/// failure.
#[no_mangle]
pub unsafe extern "C" fn itsa_fit_to_json(fit: *const ItsaFit) -> *mut c_char {
    let Some(f) = fit.as_ref() else {
        set_error("null pointer: fit");
        return ptr::null_mut();
    };
    match serde_json::to_string(&f.0).map(CString::new) {
        Ok(Ok(s)) => s.into_raw(),
        _ => {
            set_error("cannot serialise fit");
            ptr::null_mut()
        }
    }
}

#[no_mangle]
pub unsafe extern "C" fn itsa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn itsa_fit_free(fit: *mut ItsaFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::Config("x".into())), ItsaStatus::InputError);
        assert_eq!(status_of(&Error::RankDeficient), ItsaStatus::EstimationError);
    }

    #[test]
    fn error_message_round_trip() {
        set_error("boom");
        let msg = unsafe { CStr::from_ptr(itsa_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "boom");
        set_error("with\0nul");
        let msg = unsafe { CStr::from_ptr(itsa_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "with nul");
    }
}
