//! C interface to `tensortree`.
//!
//! Models are opaque handles owned by the caller and released with
//! `tt_model_free`. Every fallible call returns a `TtStatus`; the message of the
//! last failure on the calling thread is available from `tt_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensortree::adaptation::{adaptive_fit, AdaptConfig};
use tensortree::basis::FeatureBasis;
use tensortree::learning::Sample;
use tensortree::network::TreeTensorNetwork;
use tensortree::tensor::Matrix;
use tensortree::tree::{DimensionTree, TreeKind};
use tensortree::Error;

/// Opaque model handle.
pub struct TtModel {
    net: TreeTensorNetwork,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Numerical = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TtStatus {
    match e {
        Error::Io(_) => TtStatus::Io,
        Error::Json(_) | Error::Parse(_) => TtStatus::Parse,
        Error::NonFinite(_) | Error::SizeGuard { .. } => TtStatus::Numerical,
        _ => TtStatus::InvalidArgument,
    }
}

struct Failure(TtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TtStatus::Ok,
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
            set_error(format!("internal panic: {msg}"));
            TtStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TtStatus::NullPointer, format!("{what} is null"))
}

unsafe fn model<'a>(m: *const TtModel) -> Result<&'a TtModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn string<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(TtStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

fn boxed(net: TreeTensorNetwork) -> *mut TtModel {
    Box::into_raw(Box::new(TtModel { net }))
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn tt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a model saved in the JSON network format.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tt_model_load(path: *const c_char, out: *mut *mut TtModel) -> TtStatus {
    guard(|| {
        let p = string(path, "path")?;
        let net = TreeTensorNetwork::load(Path::new(p))?;
        put(out, boxed(net))
    })
}

/// Parses a model from a JSON document.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tt_model_from_json(json: *const c_char, out: *mut *mut TtModel) -> TtStatus {
    guard(|| {
        let s = string(json, "json")?;
        put(out, boxed(TreeTensorNetwork::from_json(s)?))
    })
}

/// # Safety
/// `m` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tt_model_save(m: *const TtModel, path: *const c_char) -> TtStatus {
    guard(|| {
        let m = model(m)?;
        let p = string(path, "path")?;
        m.net.save(Path::new(p))?;
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tt_model_free(m: *mut TtModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tt_model_dim(m: *const TtModel, out: *mut usize) -> TtStatus {
    guard(|| put(out, model(m)?.net.dim()))
}

/// Number of stored coefficients.
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tt_model_storage(m: *const TtModel, out: *mut usize) -> TtStatus {
    guard(|| put(out, model(m)?.net.storage_complexity()))
}

/// L² norm of the represented function.
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tt_model_norm(m: *const TtModel, out: *mut f64) -> TtStatus {
    guard(|| put(out, model(m)?.net.norm()))
}

unsafe fn points(xs: *const f64, n: usize, d: usize) -> Result<Matrix, Failure> {
    if xs.is_null() {
        return Err(null("points"));
    }
    let len = n.checked_mul(d).ok_or_else(|| Failure(TtStatus::InvalidArgument, "size overflow".into()))?;
    Ok(Matrix::from_row_slice(n, d, std::slice::from_raw_parts(xs, len)))
}

/// Evaluates the model at `n` points stored row-major in `xs` (`n * d` values).
///
/// # Safety
/// `xs` must hold `n * d` values and `out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn tt_model_evaluate(m: *const TtModel, xs: *const f64, n: usize, d: usize, out: *mut f64) -> TtStatus {
    guard(|| {
        let m = model(m)?;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        let v = m.net.evaluate(&points(xs, n, d)?)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&v);
        Ok(())
    })
}

/// New model truncated at relative precision `eps`.
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tt_model_truncate(m: *const TtModel, eps: f64, out: *mut *mut TtModel) -> TtStatus {
    guard(|| {
        let t = model(m)?.net.truncate(eps)?;
        put(out, boxed(t))
    })
}

/// Fits a model with rank and tree adaptation on `n` samples in `[-1, 1]^d`,
/// with Legendre features of the given degree. `config_json` may be null for
/// the default adaptation settings.
///
/// # Safety
/// `xs` must hold `n * d` values, `ys` `n` values, `config_json` must be null or
/// nul-terminated, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tt_fit(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    d: usize,
    degree: usize,
    seed: u64,
    config_json: *const c_char,
    out: *mut *mut TtModel,
) -> TtStatus {
    guard(|| {
        if ys.is_null() {
            return Err(null("values"));
        }
        let cfg: AdaptConfig = if config_json.is_null() {
            AdaptConfig::default()
        } else {
            serde_json::from_str(string(config_json, "config")?).map_err(Error::from)?
        };
        let sample = Sample::new(points(xs, n, d)?, std::slice::from_raw_parts(ys, n).to_vec())?;
        let tree = DimensionTree::build(TreeKind::Balanced, d, &(0..d).collect::<Vec<_>>())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fit = adaptive_fit(&sample, tree, vec![FeatureBasis::legendre(degree); d], &cfg, &mut rng)?;
        put(out, boxed(fit.net))
    })
}
