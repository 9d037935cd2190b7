//! C ABI for `unfold_ci`.
//!
//! Objects cross the boundary as opaque handles created by `uc_*_new`
//! functions and released with the matching `uc_*_free`. Every fallible
//! call returns a [`UcStatus`]; on failure a description is available from
//! [`uc_last_error_message`] on the same thread. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use unfold_ci::constraints::{ConstraintSetup, PolyhedralConstraints, RowKind};
use unfold_ci::intervals::{
    ls_interval, minimax_halfwidth_bounds, osb_dual_interval, osb_interval, po_interval, po_rule,
    ssb_interval, DecisionRule, FunctionalSpec, IntervalResult, Prior,
};
use unfold_ci::model::{whiten, Covariance, GaussianModel};
use unfold_ci::program::SolverSettings;
use unfold_ci::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Config = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

/// Interval methods available through [`uc_interval`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcMethod {
    Osb = 0,
    OsbDual = 1,
    Ls = 2,
    Ssb = 3,
}

/// Built-in shape constraint families.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcConstraintSetup {
    None = 0,
    N = 1,
    ND = 2,
    NDC = 3,
}

/// An interval with its slack diagnostic (`NaN` when not applicable).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcInterval {
    pub lower: f64,
    pub upper: f64,
    pub slack_s2: f64,
    pub pathological: bool,
}

/// Whitened linear Gaussian model.
pub struct UcModel(GaussianModel);

/// Polyhedral constraint set `A λ ≤ b`.
pub struct UcConstraints(PolyhedralConstraints);

/// Data-independent PO decision rule.
pub struct UcRule(DecisionRule);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> UcStatus {
    match e {
        Error::Io(_) => UcStatus::Io,
        Error::Dimension(_) => UcStatus::Dimension,
        Error::Config(_) | Error::Parse(_) | Error::Json(_) => UcStatus::Config,
        e if e.is_numerical() => UcStatus::Numerical,
        _ => UcStatus::InvalidArgument,
    }
}

struct Fail(UcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(UcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            UcStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn to_c(iv: &IntervalResult) -> UcInterval {
    UcInterval {
        lower: iv.lower,
        upper: iv.upper,
        slack_s2: iv.diagnostics.slack_s2.unwrap_or(f64::NAN),
        pathological: iv.diagnostics.pathological,
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn uc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a model from `K` (`m × n`), counts `y` and optional per-bin
/// variances. With `variances` null the data are taken as already whitened.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn uc_model_new(
    k: *const f64,
    m: usize,
    n: usize,
    y: *const f64,
    variances: *const f64,
    out: *mut *mut UcModel,
) -> UcStatus {
    guard(|| {
        let k = slice(k, m * n, "k")?;
        let y = slice(y, m, "y")?;
        let cov = if variances.is_null() {
            Covariance::Identity
        } else {
            Covariance::Diagonal(slice(variances, m, "variances")?.to_vec())
        };
        let model = GaussianModel::new(
            DMatrix::from_row_slice(m, n, k),
            DVector::from_column_slice(y),
            cov,
        )?;
        put(out, UcModel(whiten(&model)?))
    })
}

/// # Safety
/// `model` must come from [`uc_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uc_model_free(model: *mut UcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// One of the built-in constraint families on `n` bins (uniform spacing).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uc_constraints_setup(
    setup: UcConstraintSetup,
    n: usize,
    out: *mut *mut UcConstraints,
) -> UcStatus {
    guard(|| {
        let s = match setup {
            UcConstraintSetup::None => ConstraintSetup::None,
            UcConstraintSetup::N => ConstraintSetup::N,
            UcConstraintSetup::ND => ConstraintSetup::ND,
            UcConstraintSetup::NDC => ConstraintSetup::NDC,
        };
        put(out, UcConstraints(s.build(n, None)?))
    })
}

/// Custom constraints `A λ ≤ b` with `A` of shape `rows × n`.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn uc_constraints_new(
    a: *const f64,
    rows: usize,
    n: usize,
    b: *const f64,
    out: *mut *mut UcConstraints,
) -> UcStatus {
    guard(|| {
        let a = slice(a, rows * n, "a")?;
        let b = slice(b, rows, "b")?;
        let c = PolyhedralConstraints::new(
            DMatrix::from_row_slice(rows, n, a),
            DVector::from_column_slice(b),
            vec![RowKind::Custom; rows],
        )?;
        put(out, UcConstraints(c))
    })
}

/// # Safety
/// `c` must come from a `uc_constraints_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn uc_constraints_free(c: *mut UcConstraints) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Interval for `hᵀλ` (`h` of length `n`). `constraints` may be null for
/// the unconstrained problem and is ignored by LS.
///
/// # Safety
/// Handles must be live; `h` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn uc_interval(
    model: *const UcModel,
    constraints: *const UcConstraints,
    method: UcMethod,
    h: *const f64,
    n: usize,
    alpha: f64,
    out: *mut UcInterval,
) -> UcStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let h = FunctionalSpec::new(slice(h, n, "h")?.to_vec(), "h")?;
        let owned;
        let c = match constraints.as_ref() {
            Some(c) => &c.0,
            None => {
                owned = PolyhedralConstraints::unconstrained(n);
                &owned
            }
        };
        let s = SolverSettings::default();
        let iv = match method {
            UcMethod::Osb => osb_interval(model, &h, c, alpha, &s)?,
            UcMethod::OsbDual => osb_dual_interval(model, &h, c, alpha, &s)?,
            UcMethod::Ls => ls_interval(model, &h, alpha)?,
            UcMethod::Ssb => ssb_interval(model, &h, c, alpha, &s)?,
        };
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = to_c(&iv);
        Ok(())
    })
}

/// Computes the PO rule for `hᵀλ` under a prior with mean `prior_mean`.
/// Only the matrix of `model` is used.
///
/// # Safety
/// Handles must be live; `h` and `prior_mean` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn uc_po_rule_new(
    model: *const UcModel,
    constraints: *const UcConstraints,
    h: *const f64,
    prior_mean: *const f64,
    n: usize,
    alpha: f64,
    out: *mut *mut UcRule,
) -> UcStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let c = &handle(constraints, "constraints")?.0;
        let h = FunctionalSpec::new(slice(h, n, "h")?.to_vec(), "h")?;
        let prior = Prior::new(slice(prior_mean, n, "prior_mean")?.to_vec(), "prior")?;
        let rule = po_rule(&model.k, &h, c, &prior, alpha, &SolverSettings::default())?;
        put(out, UcRule(rule))
    })
}

/// Reads a rule previously produced by [`uc_po_rule_to_json`].
///
/// # Safety
/// `json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn uc_po_rule_from_json(
    json: *const c_char,
    out: *mut *mut UcRule,
) -> UcStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Fail(UcStatus::InvalidArgument, e.to_string()))?;
        put(out, UcRule(DecisionRule::from_json(text)?))
    })
}

/// Serialises a rule; free the result with [`uc_string_free`].
///
/// # Safety
/// `rule` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn uc_po_rule_to_json(
    rule: *const UcRule,
    out: *mut *mut c_char,
) -> UcStatus {
    guard(|| {
        let text = handle(rule, "rule")?.0.to_json()?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = CString::new(text).expect("json has no NUL").into_raw();
        Ok(())
    })
}

/// Applies a rule to whitened data of length `m`.
///
/// # Safety
/// `rule` must be live; `y` must hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn uc_po_rule_apply(
    rule: *const UcRule,
    y: *const f64,
    m: usize,
    out: *mut UcInterval,
) -> UcStatus {
    guard(|| {
        let iv = po_interval(&handle(rule, "rule")?.0, slice(y, m, "y")?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = to_c(&iv);
        Ok(())
    })
}

/// # Safety
/// `rule` must come from a `uc_po_rule_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn uc_po_rule_free(rule: *mut UcRule) {
    if !rule.is_null() {
        drop(Box::from_raw(rule));
    }
}

/// # Safety
/// `s` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn uc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Lower and upper bounds on the minimax expected half-width for unit noise.
/// Infinite values mean the functional is not identifiable.
///
/// # Safety
/// Handles must be live; `h` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn uc_minimax_bounds(
    model: *const UcModel,
    constraints: *const UcConstraints,
    h: *const f64,
    n: usize,
    alpha: f64,
    lower: *mut f64,
    upper: *mut f64,
) -> UcStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let c = &handle(constraints, "constraints")?.0;
        let h = FunctionalSpec::new(slice(h, n, "h")?.to_vec(), "h")?;
        let b = minimax_halfwidth_bounds(
            &model.k,
            &h,
            c,
            alpha,
            1.0,
            false,
            &SolverSettings::default(),
        )?;
        if lower.is_null() || upper.is_null() {
            return Err(null("output pointer"));
        }
        *lower = b.lower;
        *upper = b.upper;
        Ok(())
    })
}
