//! C ABI over the entropy-bound solvers.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns an [`EbStatus`];
//! on failure [`eb_last_error`] describes the problem.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use entrobound::dist::{mi_ratio, EntropyValue, MarginalPair};
use entrobound::maximize::{maximize_analytic, maximize_entropy, MaxResult};
use entrobound::minimize::{minimize_entropy, MinOptions, MinResult, MinStatus};
use entrobound::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The entropy range collapsed; the ratio is undefined.
    Trivial = 3,
    /// Minimization stopped before reaching the tolerance.
    NotConverged = 4,
    SolverFailure = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Fixed row and column marginals.
pub struct EbMarginals(MarginalPair);

pub struct EbMinResult(MinResult);

pub struct EbMaxResult(MaxResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> EbStatus {
    match e {
        Error::Domain(_) | Error::InvalidDistribution(_) | Error::Inconsistent(_) => {
            EbStatus::InvalidArgument
        }
        Error::TrivialInstance { .. } => EbStatus::Trivial,
        _ => EbStatus::SolverFailure,
    }
}

/// Run `f`, turning errors and panics into a status and the last-error text.
fn guard(f: impl FnOnce() -> Result<EbStatus, (EbStatus, String)>) -> EbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside the library");
            EbStatus::Panic
        }
    }
}

fn fail(e: Error) -> (EbStatus, String) {
    (status_of(&e), e.to_string())
}

fn null() -> (EbStatus, String) {
    (EbStatus::NullPointer, "null pointer argument".into())
}

/// Description of the last failure on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn eb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Create marginals from `n` row and `m` column probabilities.
///
/// # Safety
/// `mu` and `nu` must point to `n` and `m` readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn eb_marginals_new(
    mu: *const f64,
    n: usize,
    nu: *const f64,
    m: usize,
    out: *mut *mut EbMarginals,
) -> EbStatus {
    guard(|| {
        if mu.is_null() || nu.is_null() || out.is_null() {
            return Err(null());
        }
        let mu = slice::from_raw_parts(mu, n).to_vec();
        let nu = slice::from_raw_parts(nu, m).to_vec();
        let marg = MarginalPair::new(mu, nu).map_err(fail)?;
        *out = Box::into_raw(Box::new(EbMarginals(marg)));
        Ok(EbStatus::Ok)
    })
}

/// # Safety
/// `marg` must be null or a handle from [`eb_marginals_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eb_marginals_free(marg: *mut EbMarginals) {
    if !marg.is_null() {
        drop(Box::from_raw(marg));
    }
}

/// Minimum entropy with relative tolerance `eps` (0 selects the default).
///
/// The result handle is written even when the status is `NotConverged`.
///
/// # Safety
/// `marg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_minimize(
    marg: *const EbMarginals,
    eps: f64,
    out: *mut *mut EbMinResult,
) -> EbStatus {
    guard(|| {
        if marg.is_null() || out.is_null() {
            return Err(null());
        }
        let options = if eps == 0.0 {
            MinOptions::default()
        } else {
            MinOptions::with_eps(eps)
        };
        let r = minimize_entropy(&(*marg).0, &options).map_err(fail)?;
        let status = if r.status == MinStatus::Converged {
            EbStatus::Ok
        } else {
            set_error(&format!("minimization stopped early: {:?}", r.status));
            EbStatus::NotConverged
        };
        *out = Box::into_raw(Box::new(EbMinResult(r)));
        Ok(status)
    })
}

/// # Safety
/// `r` must be null or a handle from [`eb_minimize`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eb_min_result_free(r: *mut EbMinResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// True entropy of the returned plan, or NaN for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eb_min_result_entropy(r: *const EbMinResult) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.0.h_min.0)
}

/// Outer iterations performed, or 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eb_min_result_iterations(r: *const EbMinResult) -> usize {
    r.as_ref().map_or(0, |r| r.0.iterations)
}

/// Last relative gap, or NaN for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eb_min_result_final_eps(r: *const EbMinResult) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.0.final_eps())
}

/// Copy the `n x m` plan row-major into `buf` of length `len`.
///
/// # Safety
/// `r` must be a live handle; `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn eb_min_result_plan(
    r: *const EbMinResult,
    buf: *mut f64,
    len: usize,
) -> EbStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(null)?;
        copy_plan(r.0.p_min.as_slice(), buf, len)
    })
}

unsafe fn copy_plan(
    plan: &[f64],
    buf: *mut f64,
    len: usize,
) -> Result<EbStatus, (EbStatus, String)> {
    if buf.is_null() {
        return Err(null());
    }
    if len < plan.len() {
        return Err((
            EbStatus::BufferTooSmall,
            format!("plan has {} entries, buffer holds {len}", plan.len()),
        ));
    }
    ptr::copy_nonoverlapping(plan.as_ptr(), buf, plan.len());
    Ok(EbStatus::Ok)
}

/// Maximum entropy by damped Newton with KKT tolerance `kkt_tol` (0 selects
/// the default), or in closed form when `analytic` is nonzero.
///
/// # Safety
/// `marg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_maximize(
    marg: *const EbMarginals,
    kkt_tol: f64,
    analytic: i32,
    out: *mut *mut EbMaxResult,
) -> EbStatus {
    guard(|| {
        if marg.is_null() || out.is_null() {
            return Err(null());
        }
        let marg = &(*marg).0;
        let r = if analytic != 0 {
            maximize_analytic(marg)
        } else if kkt_tol == 0.0 {
            maximize_entropy(marg, entrobound::maximize::DEFAULT_KKT_TOL)
        } else {
            maximize_entropy(marg, kkt_tol)
        }
        .map_err(fail)?;
        *out = Box::into_raw(Box::new(EbMaxResult(r)));
        Ok(EbStatus::Ok)
    })
}

/// # Safety
/// `r` must be null or a handle from [`eb_maximize`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eb_max_result_free(r: *mut EbMaxResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eb_max_result_entropy(r: *const EbMaxResult) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.0.h_max.0)
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eb_max_result_kkt_residual(r: *const EbMaxResult) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.0.kkt_residual)
}

/// Condition number of the reduced Hessian at the maximizer.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eb_max_result_condition(r: *const EbMaxResult) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.0.reduced_hessian_cond)
}

/// # Safety
/// `r` must be a live handle; `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn eb_max_result_plan(
    r: *const EbMaxResult,
    buf: *mut f64,
    len: usize,
) -> EbStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(null)?;
        copy_plan(r.0.p_max.as_slice(), buf, len)
    })
}

/// Scaled ratio `(h_data - h_max) / (h_min - h_max)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eb_mi_ratio(
    h_data: f64,
    h_min: f64,
    h_max: f64,
    out: *mut f64,
) -> EbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = mi_ratio(
            EntropyValue(h_data),
            EntropyValue(h_min),
            EntropyValue(h_max),
        )
        .map_err(fail)?;
        Ok(EbStatus::Ok)
    })
}
