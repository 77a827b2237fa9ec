use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use deepmaps::featurize::FeatureMatrix;
use deepmaps::gbdt::{self, GbdtParams};
use deepmaps_ffi::*;

fn trained() -> (deepmaps::gbdt::GbdtModel, Vec<Vec<f64>>) {
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|i| vec![(i % 17) as f64, (i % 5) as f64 * 0.5])
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - r[1]).collect();
    let m = FeatureMatrix::from_rows(&["a", "b"], &rows).unwrap();
    let params = GbdtParams {
        num_trees: 30,
        min_samples_leaf: 5,
        ..GbdtParams::default()
    };
    (gbdt::fit(&m, &y, &params).unwrap(), rows)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dm_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn predictions_match_the_library() {
    let (model, rows) = trained();
    let text = CString::new(model.to_text(&[])).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { dm_model_from_text(text.as_ptr(), &mut h) }, DmStatus::Ok);
    assert_eq!(unsafe { dm_model_num_features(h) }, 2);
    let name = unsafe { CStr::from_ptr(dm_model_feature_name(h, 1)) };
    assert_eq!(name.to_str().unwrap(), "b");
    assert!(unsafe { dm_model_feature_name(h, 2) }.is_null());

    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let mut out = vec![0.0; rows.len()];
    let s = unsafe { dm_model_predict(h, flat.as_ptr(), rows.len(), 2, out.as_mut_ptr()) };
    assert_eq!(s, DmStatus::Ok);
    for (r, o) in rows.iter().zip(&out) {
        assert_eq!(*o, model.predict_row(r));
    }
    unsafe { dm_model_free(h) };
}

#[test]
fn load_from_file() {
    let (model, _) = trained();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.gbdt");
    model.save(&p, &["config_hash=0".into()]).unwrap();
    let c = CString::new(p.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { dm_model_load(c.as_ptr(), &mut h) }, DmStatus::Ok);
    assert!(!h.is_null());
    unsafe { dm_model_free(h) };
}

#[test]
fn failures_set_status_and_message() {
    let mut h = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.gbdt").unwrap();
    assert_eq!(unsafe { dm_model_load(missing.as_ptr(), &mut h) }, DmStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("/nonexistent/model.gbdt"));

    let junk = CString::new("not a model").unwrap();
    assert_eq!(unsafe { dm_model_from_text(junk.as_ptr(), &mut h) }, DmStatus::Schema);
    assert_eq!(unsafe { dm_model_load(ptr::null(), &mut h) }, DmStatus::NullArgument);
    assert_eq!(unsafe { dm_model_free(ptr::null_mut()) }, ());

    let (model, _) = trained();
    let text = CString::new(model.to_text(&[])).unwrap();
    assert_eq!(unsafe { dm_model_from_text(text.as_ptr(), &mut h) }, DmStatus::Ok);
    let row = [1.0, 2.0, 3.0];
    let mut out = [0.0];
    assert_eq!(unsafe { dm_model_predict(h, row.as_ptr(), 1, 3, out.as_mut_ptr()) }, DmStatus::Shape);
    assert!(last_error().contains("expects 2 columns"));
    let bad = [f64::NAN, 0.0];
    assert_eq!(unsafe { dm_model_predict(h, bad.as_ptr(), 1, 2, out.as_mut_ptr()) }, DmStatus::Input);
    assert_eq!(unsafe { dm_model_predict(ptr::null(), row.as_ptr(), 1, 2, out.as_mut_ptr()) }, DmStatus::NullArgument);
    unsafe { dm_model_free(h) };
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(dm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_interface() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/deepmaps.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "dm_model_load",
        "dm_model_from_text",
        "dm_model_free",
        "dm_model_num_features",
        "dm_model_feature_name",
        "dm_model_predict",
        "dm_last_error",
        "DM_STATUS_OK",
        "typedef struct DmModel DmModel",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    // Compile a caller against the header when a C compiler is around.
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", "-"])
        .arg("-I")
        .arg(header.parent().unwrap())
        .stdin(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut c| {
            use std::io::Write;
            c.stdin
                .take()
                .unwrap()
                .write_all(b"#include \"deepmaps.h\"\nint main(void){DmModel*m=0;return dm_model_load(\"x\",&m)==DM_STATUS_OK;}\n")?;
            c.wait_with_output()
        })
    else {
        return;
    };
    assert!(out.status.success());
}
