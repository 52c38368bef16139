//! C ABI over the robust-missing toolkit.
//!
//! Every fallible function returns an [`RmStatus`]; on failure the message is
//! kept per thread and read with [`rm_last_error_message`]. Models are opaque
//! handles released with their `*_free` function. Strings returned to the
//! caller are released with [`rm_string_free`]. Missing feature values are
//! passed as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use robust_missing::cli::{parse_model, AnyModel};
use robust_missing::data::load_csv;
use robust_missing::inference::{self, FitConfig, ImputeConfig, RegressionModel};
use robust_missing::lda::{self, EmConfig, LdaModel};
use robust_missing::{Error, MaskedMatrix};

/// Status codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Dimension = 6,
    Numerical = 7,
    NotConverged = 8,
    Panic = 9,
}

/// Trained regression model.
pub struct RmRegressionModel(RegressionModel);

/// Trained discriminant model.
pub struct RmLdaModel(LdaModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let msg = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> RmStatus {
    match e {
        Error::Io { .. } => RmStatus::Io,
        Error::Format(_) | Error::Parse { .. } | Error::Json(_) => RmStatus::Parse,
        Error::Dimension(_) | Error::MissingColumns(_) => RmStatus::Dimension,
        Error::InvalidParameter(_) | Error::EmptyClass(_) | Error::EmptyColumn(_) => RmStatus::InvalidArgument,
        _ => RmStatus::Numerical,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (RmStatus, String)>) -> RmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RmStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RmStatus::Panic
        }
    }
}

type FfiResult<T> = Result<T, (RmStatus, String)>;

fn lib<T>(r: robust_missing::Result<T>) -> FfiResult<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null() -> (RmStatus, String) {
    (RmStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (RmStatus::InvalidUtf8, "argument is not valid UTF-8".into()))
}

/// Parses an optional JSON config; null selects the defaults.
unsafe fn config_arg<T: serde::de::DeserializeOwned + Default>(p: *const c_char) -> FfiResult<T> {
    if p.is_null() {
        return Ok(T::default());
    }
    let text = str_arg(p)?;
    serde_json::from_str(text).map_err(|e| (RmStatus::Parse, format!("config: {e}")))
}

unsafe fn row_arg(values: *const f64, len: usize) -> FfiResult<Vec<Option<f64>>> {
    if values.is_null() && len > 0 {
        return Err(null());
    }
    let s = if len == 0 { &[][..] } else { std::slice::from_raw_parts(values, len) };
    Ok(s.iter().map(|v| if v.is_nan() { None } else { Some(*v) }).collect())
}

fn string_out(s: String, out: *mut *mut c_char) -> FfiResult<()> {
    let c = CString::new(s).map_err(|_| (RmStatus::Parse, "string holds a NUL byte".into()))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fits a regression of column `target` on the other columns of a CSV.
/// `config_json` is a serialized fit configuration or null for defaults.
/// Returns `NotConverged` with a valid model when the solver stopped early.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_regression_fit_csv(
    path: *const c_char,
    target: *const c_char,
    missing_token: *const c_char,
    config_json: *const c_char,
    out: *mut *mut RmRegressionModel,
) -> RmStatus {
    let mut converged = true;
    let status = guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let path = str_arg(path)?;
        let target = str_arg(target)?;
        let token = if missing_token.is_null() { robust_missing::data::DEFAULT_MISSING_TOKEN } else { str_arg(missing_token)? };
        let cfg: FitConfig = config_arg(config_json)?;
        let data = lib(load_csv(path, token))?;
        let j = data
            .column_index(target)
            .ok_or_else(|| (RmStatus::Dimension, format!("no column named {target:?}")))?;
        let (x, y) = data.split_target(j);
        let fit = lib(inference::fit_regression(&x, &y, target, &cfg))?;
        converged = fit.report.converged;
        *out = Box::into_raw(Box::new(RmRegressionModel(fit.model)));
        Ok(())
    });
    if status == RmStatus::Ok && !converged {
        set_error("solver stopped before reaching its tolerance");
        return RmStatus::NotConverged;
    }
    status
}

/// Loads a regression model from a training artifact or bare model JSON.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_regression_from_json(json: *const c_char, out: *mut *mut RmRegressionModel) -> RmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        match lib(parse_model(str_arg(json)?))? {
            AnyModel::Regression(m) => {
                *out = Box::into_raw(Box::new(RmRegressionModel(m)));
                Ok(())
            }
            AnyModel::Lda(_) => Err((RmStatus::InvalidArgument, "JSON holds a discriminant model".into())),
        }
    })
}

/// Serializes the model; free the string with [`rm_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_regression_to_json(model: *const RmRegressionModel, out: *mut *mut c_char) -> RmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        string_out(lib(model.0.to_json())?, out)
    })
}

/// Number of features the model expects; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rm_regression_dim(model: *const RmRegressionModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Predicts one row of `len` values.
///
/// # Safety
/// `row` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_regression_predict(
    model: *const RmRegressionModel,
    row: *const f64,
    len: usize,
    out: *mut f64,
) -> RmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        *out = lib(inference::predict(&model.0, &row_arg(row, len)?))?;
        Ok(())
    })
}

/// Predicts `nrows` rows stored row-major in `values`, writing `nrows`
/// predictions to `out`.
///
/// # Safety
/// `values` must hold `nrows * ncols` doubles and `out` `nrows`.
#[no_mangle]
pub unsafe extern "C" fn rm_regression_predict_batch(
    model: *const RmRegressionModel,
    values: *const f64,
    nrows: usize,
    ncols: usize,
    out: *mut f64,
) -> RmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(null)?;
        if out.is_null() && nrows > 0 {
            return Err(null());
        }
        let cells = nrows
            .checked_mul(ncols)
            .ok_or_else(|| (RmStatus::InvalidArgument, "matrix size overflows".into()))?;
        let rows: Vec<Vec<Option<f64>>> = row_arg(values, cells)?.chunks(ncols.max(1)).map(<[_]>::to_vec).collect();
        let rows = if ncols == 0 { vec![Vec::new(); nrows] } else { rows };
        let m = lib(MaskedMatrix::from_rows(&rows))?;
        let m = lib(m.with_column_names(model.0.feature_names.clone()))?;
        let pred = lib(inference::predict_batch(&model.0, &m))?;
        if nrows > 0 {
            std::slice::from_raw_parts_mut(out, nrows).copy_from_slice(&pred);
        }
        Ok(())
    })
}

/// Releases a regression handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rm_regression_free(model: *mut RmRegressionModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fits a discriminant on a CSV with a 0/1 column `label`. Empty label cells
/// are inferred by EM. `config_json` is a serialized EM configuration or null.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_lda_fit_csv(
    path: *const c_char,
    label: *const c_char,
    missing_token: *const c_char,
    config_json: *const c_char,
    out: *mut *mut RmLdaModel,
) -> RmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let path = str_arg(path)?;
        let label = str_arg(label)?;
        let token = if missing_token.is_null() { robust_missing::data::DEFAULT_MISSING_TOKEN } else { str_arg(missing_token)? };
        let cfg: EmConfig = config_arg(config_json)?;
        let data = lib(load_csv(path, token))?;
        let j = data
            .column_index(label)
            .ok_or_else(|| (RmStatus::Dimension, format!("no column named {label:?}")))?;
        let (x, y) = data.split_target(j);
        let labels = y
            .iter()
            .map(|v| match v {
                None => Ok(None),
                Some(v) if *v == 0.0 => Ok(Some(0)),
                Some(v) if *v == 1.0 => Ok(Some(1)),
                Some(v) => Err((RmStatus::Parse, format!("label {v} is not 0 or 1"))),
            })
            .collect::<FfiResult<Vec<_>>>()?;
        let em = lib(lda::em_rnda_train(&x, &labels, &cfg))?;
        *out = Box::into_raw(Box::new(RmLdaModel(em.fit.model)));
        Ok(())
    })
}

/// Loads a discriminant model from a training artifact or bare model JSON.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_lda_from_json(json: *const c_char, out: *mut *mut RmLdaModel) -> RmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        match lib(parse_model(str_arg(json)?))? {
            AnyModel::Lda(m) => {
                *out = Box::into_raw(Box::new(RmLdaModel(m)));
                Ok(())
            }
            AnyModel::Regression(_) => Err((RmStatus::InvalidArgument, "JSON holds a regression model".into())),
        }
    })
}

/// Serializes the model; free the string with [`rm_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_lda_to_json(model: *const RmLdaModel, out: *mut *mut c_char) -> RmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        string_out(lib(model.0.to_json())?, out)
    })
}

/// Number of features the model expects; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rm_lda_dim(model: *const RmLdaModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Classifies one row; either output pointer may be null.
///
/// # Safety
/// `row` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rm_lda_predict(
    model: *const RmLdaModel,
    row: *const f64,
    len: usize,
    label: *mut u8,
    probability: *mut f64,
) -> RmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(null)?;
        let p = lib(model.0.probability(&row_arg(row, len)?))?;
        if !label.is_null() {
            *label = u8::from(p >= model.0.threshold);
        }
        if !probability.is_null() {
            *probability = p;
        }
        Ok(())
    })
}

/// Releases a discriminant handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rm_lda_free(model: *mut RmLdaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Imputes every missing cell of `input` and writes the completed CSV to
/// `output`. `config_json` is a serialized imputation configuration or null.
///
/// # Safety
/// String arguments must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rm_impute_csv(
    input: *const c_char,
    output: *const c_char,
    missing_token: *const c_char,
    config_json: *const c_char,
) -> RmStatus {
    guard(|| {
        let input = str_arg(input)?;
        let output = str_arg(output)?;
        let token = if missing_token.is_null() { robust_missing::data::DEFAULT_MISSING_TOKEN } else { str_arg(missing_token)? };
        let cfg: ImputeConfig = config_arg(config_json)?;
        let data = lib(load_csv(input, token))?;
        let filled = lib(inference::impute(&data, &cfg))?;
        lib(robust_missing::data::save_csv(&filled, output))
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
