//! C interface to trained deepmaps models.
//!
//! Models are opaque handles created by [`dm_model_load`] or
//! [`dm_model_from_text`] and released with [`dm_model_free`]. Every fallible
//! call returns a [`DmStatus`]; on failure [`dm_last_error`] describes the
//! most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use deepmaps::gbdt::GbdtModel;
use deepmaps::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Input = 3,
    Io = 4,
    Schema = 5,
    Shape = 6,
    Config = 7,
    Numeric = 8,
    Panic = 9,
}

impl From<&Error> for DmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Input(_) | Error::Coverage { .. } => DmStatus::Input,
            Error::Io { .. } | Error::MissingArtifacts(_) => DmStatus::Io,
            Error::Schema(_) => DmStatus::Schema,
            Error::Shape(_) => DmStatus::Shape,
            Error::Config(_) => DmStatus::Config,
            Error::SingularFit { .. } | Error::Singular(_) => DmStatus::Numeric,
        }
    }
}

/// A loaded model.
pub struct DmModel {
    model: GbdtModel,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: DmStatus, msg: impl Into<String>) -> DmStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> DmStatus) -> DmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(DmStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DmStatus> {
    if p.is_null() {
        return Err(fail(DmStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn finish(parsed: deepmaps::Result<GbdtModel>, out: *mut *mut DmModel) -> DmStatus {
    match parsed {
        Ok(model) => {
            let names = model
                .columns
                .iter()
                .map(|c| CString::new(c.as_str()).unwrap_or_default())
                .collect();
            let handle = Box::new(DmModel { model, names });
            unsafe { *out = Box::into_raw(handle) };
            DmStatus::Ok
        }
        Err(e) => fail(DmStatus::from(&e), e.to_string()),
    }
}

/// Load a model file. On success `*out` holds a handle to free with
/// [`dm_model_free`]; otherwise it is set to null.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_model_load(path: *const c_char, out: *mut *mut DmModel) -> DmStatus {
    guard(|| {
        if out.is_null() {
            return fail(DmStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        match str_arg(path, "path") {
            Ok(p) => finish(GbdtModel::load(Path::new(p)), out),
            Err(s) => s,
        }
    })
}

/// Parse a model from the text of a model file.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_model_from_text(text: *const c_char, out: *mut *mut DmModel) -> DmStatus {
    guard(|| {
        if out.is_null() {
            return fail(DmStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        match str_arg(text, "text") {
            Ok(t) => finish(GbdtModel::from_text(t), out),
            Err(s) => s,
        }
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dm_model_free(model: *mut DmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of feature columns a row must hold; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dm_model_num_features(model: *const DmModel) -> usize {
    model.as_ref().map_or(0, |m| m.names.len())
}

/// Name of column `index`, or null when out of range. The string lives as
/// long as the handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dm_model_feature_name(model: *const DmModel, index: usize) -> *const c_char {
    model
        .as_ref()
        .and_then(|m| m.names.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Predict `n_rows` row-major rows of `n_cols` values each, in the model's
/// column order, writing one value per row to `out`.
///
/// # Safety
/// `rows` must point to `n_rows * n_cols` doubles and `out` to `n_rows`.
#[no_mangle]
pub unsafe extern "C" fn dm_model_predict(
    model: *const DmModel,
    rows: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
) -> DmStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(DmStatus::NullArgument, "model is null");
        };
        if n_rows == 0 {
            return DmStatus::Ok;
        }
        if rows.is_null() || out.is_null() {
            return fail(DmStatus::NullArgument, "rows or out is null");
        }
        if n_cols != m.names.len() {
            return fail(
                DmStatus::Shape,
                format!("model expects {} columns, got {n_cols}", m.names.len()),
            );
        }
        let Some(len) = n_rows.checked_mul(n_cols) else {
            return fail(DmStatus::Shape, "row buffer size overflows");
        };
        let data = std::slice::from_raw_parts(rows, len);
        let out = std::slice::from_raw_parts_mut(out, n_rows);
        if data.iter().any(|v| !v.is_finite()) {
            return fail(DmStatus::Input, "rows contain non-finite values");
        }
        for (o, row) in out.iter_mut().zip(data.chunks_exact(n_cols.max(1))) {
            *o = m.model.predict_row(row);
        }
        DmStatus::Ok
    })
}

/// Message of the last failure on this thread; empty when none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
