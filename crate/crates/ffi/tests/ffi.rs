use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use robust_missing::data::{apply_mcar, save_csv, two_gaussians, with_target, LinearModelSpec};
use robust_missing_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(rm_last_error_message()) }.to_string_lossy().into_owned()
}

fn regression_csv(dir: &Path) -> CString {
    let spec = LinearModelSpec::random(3, 0.1, 1).unwrap();
    let (x, y) = spec.sample(200, 2).unwrap();
    let y: Vec<Option<f64>> = y.into_iter().map(Some).collect();
    let m = apply_mcar(&with_target(&x, &y, "y").unwrap(), 0.2, 3).unwrap();
    let path = dir.join("train.csv");
    save_csv(&m, &path).unwrap();
    c(path.to_str().unwrap())
}

#[test]
fn regression_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = regression_csv(dir.path());
    let target = c("y");
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(rm_regression_fit_csv(path.as_ptr(), target.as_ptr(), ptr::null(), ptr::null(), &mut model), RmStatus::Ok);
        assert_eq!(rm_regression_dim(model), 3);

        let row = [0.5, f64::NAN, -1.0];
        let mut single = 0.0;
        assert_eq!(rm_regression_predict(model, row.as_ptr(), 3, &mut single), RmStatus::Ok);
        let batch_in = [0.5, f64::NAN, -1.0, 1.0, 2.0, 3.0];
        let mut batch = [0.0; 2];
        assert_eq!(rm_regression_predict_batch(model, batch_in.as_ptr(), 2, 3, batch.as_mut_ptr()), RmStatus::Ok);
        assert_eq!(batch[0], single);

        let mut json = ptr::null_mut();
        assert_eq!(rm_regression_to_json(model, &mut json), RmStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(rm_regression_from_json(json, &mut again), RmStatus::Ok);
        let mut other = 0.0;
        assert_eq!(rm_regression_predict(again, row.as_ptr(), 3, &mut other), RmStatus::Ok);
        assert_eq!(other, single);

        // a regression model is not a discriminant
        let mut lda = ptr::null_mut();
        assert_eq!(rm_lda_from_json(json, &mut lda), RmStatus::InvalidArgument);
        assert!(lda.is_null());

        rm_string_free(json);
        rm_regression_free(model);
        rm_regression_free(again);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let path = regression_csv(dir.path());
    let mut model = ptr::null_mut();
    unsafe {
        let nope = c("nope");
        assert_eq!(rm_regression_fit_csv(path.as_ptr(), nope.as_ptr(), ptr::null(), ptr::null(), &mut model), RmStatus::Dimension);
        assert!(last_error().contains("nope"));
        let missing = c("/nonexistent/file.csv");
        let y = c("y");
        assert_eq!(rm_regression_fit_csv(missing.as_ptr(), y.as_ptr(), ptr::null(), ptr::null(), &mut model), RmStatus::Io);
        assert_eq!(rm_regression_fit_csv(ptr::null(), y.as_ptr(), ptr::null(), ptr::null(), &mut model), RmStatus::NullPointer);
        let bad = c("{not json");
        assert_eq!(rm_regression_fit_csv(path.as_ptr(), y.as_ptr(), ptr::null(), bad.as_ptr(), &mut model), RmStatus::Parse);
        assert!(model.is_null());

        assert_eq!(rm_regression_fit_csv(path.as_ptr(), y.as_ptr(), ptr::null(), ptr::null(), &mut model), RmStatus::Ok);
        assert_eq!(last_error(), "");
        let mut out = 0.0;
        let short = [1.0];
        assert_eq!(rm_regression_predict(model, short.as_ptr(), 1, &mut out), RmStatus::Dimension);
        assert_eq!(rm_regression_predict(ptr::null(), short.as_ptr(), 1, &mut out), RmStatus::NullPointer);
        rm_regression_free(model);
        rm_regression_free(ptr::null_mut());
        rm_string_free(ptr::null_mut());
    }
}

#[test]
fn unconverged_fit_still_returns_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = regression_csv(dir.path());
    let y = c("y");
    let cfg = serde_json::json!({
        "envelope": {"k": 10, "c": 2.0, "seed": 0},
        "solver": {
            "solver": "pga",
            "lambda": 1.0,
            "ascent": {"max_iter": 1, "step": null, "tol": 1e-12},
            "admm": {"rho": 1.0, "max_iter": 1, "tol": 1e-12}
        }
    });
    let cfg = c(&cfg.to_string());
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(rm_regression_fit_csv(path.as_ptr(), y.as_ptr(), ptr::null(), cfg.as_ptr(), &mut model), RmStatus::NotConverged);
        assert!(!model.is_null());
        rm_regression_free(model);
    }
}

#[test]
fn lda_fit_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let (x, labels) = two_gaussians(200, 2, 5.0, 1);
    let y: Vec<Option<f64>> = labels.iter().map(|&l| Some(f64::from(l))).collect();
    let path = dir.path().join("train.csv");
    save_csv(&with_target(&x, &y, "label").unwrap(), &path).unwrap();
    let path = c(path.to_str().unwrap());
    let label = c("label");
    let mut cfg = serde_json::to_value(robust_missing::lda::EmConfig::default()).unwrap();
    cfg["lda"]["iterations"] = 100.into();
    cfg["lda"]["n_mc"] = 128.into();
    cfg["lda"]["alpha"] = 0.5.into();
    let cfg = c(&cfg.to_string());
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(rm_lda_fit_csv(path.as_ptr(), label.as_ptr(), ptr::null(), cfg.as_ptr(), &mut model), RmStatus::Ok, "{}", last_error());
        assert_eq!(rm_lda_dim(model), 2);
        let (mut l, mut p) = (9u8, 0.0);
        let far = [10.0, 3.0];
        assert_eq!(rm_lda_predict(model, far.as_ptr(), 2, &mut l, &mut p), RmStatus::Ok);
        assert_eq!(l, 1);
        assert!(p > 0.5);
        let near = [-10.0, -3.0];
        assert_eq!(rm_lda_predict(model, near.as_ptr(), 2, &mut l, ptr::null_mut()), RmStatus::Ok);
        assert_eq!(l, 0);

        let mut json = ptr::null_mut();
        assert_eq!(rm_lda_to_json(model, &mut json), RmStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(rm_lda_from_json(json, &mut again), RmStatus::Ok);
        rm_string_free(json);
        rm_lda_free(model);
        rm_lda_free(again);
    }
}

#[test]
fn impute_writes_complete_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = LinearModelSpec::random(3, 0.1, 4).unwrap();
    let (x, _) = spec.sample(100, 5).unwrap();
    let input = dir.path().join("in.csv");
    let output = dir.path().join("out.csv");
    save_csv(&apply_mcar(&x, 0.2, 6).unwrap(), &input).unwrap();
    let (i, o) = (c(input.to_str().unwrap()), c(output.to_str().unwrap()));
    unsafe {
        assert_eq!(rm_impute_csv(i.as_ptr(), o.as_ptr(), ptr::null(), ptr::null()), RmStatus::Ok, "{}", last_error());
    }
    let filled = robust_missing::data::load_csv(&output, "NA").unwrap();
    assert!(filled.is_complete());
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(rm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/robust_missing.h");
    assert!(header.exists());
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in ["rm_regression_fit_csv", "rm_lda_predict", "rm_last_error_message", "RM_STATUS_NOT_CONVERGED"] {
        assert!(text.contains(symbol), "{symbol}");
    }
    // only checked where a C compiler is installed
    if Command::new("cc").arg("--version").output().is_ok() {
        let status = Command::new("cc")
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
            .arg(&header)
            .status()
            .unwrap();
        assert!(status.success());
    }
}
