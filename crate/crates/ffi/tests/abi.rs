//! Exercises the C ABI from Rust and from a C program linked against the static library.

use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use hte_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(hte_last_error_message()) }.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"schemaVersion": 1, "dgp": {"n": 300}, "sampler": {"iterations": 300, "warmup": 100, "chains": 2}}"#;

fn config(json: &str) -> *mut HteConfig {
    let mut c = ptr::null_mut();
    let j = CString::new(json).unwrap();
    assert_eq!(unsafe { hte_config_from_json(j.as_ptr(), &mut c) }, HteStatus::Ok, "{}", last_error());
    c
}

#[test]
fn simulate_fit_and_read_results() {
    unsafe {
        let cfg = config(SMALL);
        let mut data = ptr::null_mut();
        assert_eq!(hte_dataset_simulate(cfg, 3, &mut data), HteStatus::Ok);
        assert_eq!(hte_dataset_len(data), 300);
        assert_eq!(hte_dataset_dim(data), 1);
        let mut fit = ptr::null_mut();
        assert_eq!(hte_estimate(data, cfg, 7, &mut fit), HteStatus::Ok, "{}", last_error());
        let k = hte_fit_param_count(fit);
        assert_eq!(k, 11);
        let names: Vec<String> =
            (0..k).map(|i| CStr::from_ptr(hte_fit_param_name(fit, i)).to_string_lossy().into_owned()).collect();
        assert!(names.iter().any(|n| n == "sigma0"), "{names:?}");
        assert!(hte_fit_param_name(fit, k).is_null());
        let mut s = HteSummary::default();
        assert_eq!(hte_fit_param_summary(fit, 0, &mut s), HteStatus::Ok);
        assert!(s.lo95 <= s.mean && s.mean <= s.hi95 && s.sd > 0.0);
        assert_eq!(hte_fit_param_summary(fit, k, &mut s), HteStatus::OutOfRange);
        assert!(last_error().contains("out of range"));
        let mut ate = HteSummary::default();
        assert_eq!(hte_fit_effect(fit, HteEffect::Ate, &mut ate), HteStatus::Ok);
        assert!(ate.mean.is_finite() && ate.lo95 < ate.hi95);
        assert_eq!(hte_fit_effect(fit, HteEffect::HteAtZero, &mut ate), HteStatus::Estimand);
        let n = hte_fit_curve_len(fit);
        assert!(n > 0);
        let mut pt = HteCurvePoint::default();
        assert_eq!(hte_fit_curve_point(fit, 0, &mut pt), HteStatus::Ok);
        assert_eq!(hte_fit_curve_point(fit, n, &mut pt), HteStatus::OutOfRange);
        let dir = tempfile::tempdir().unwrap();
        let d = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(hte_fit_write(fit, d.as_ptr()), HteStatus::Ok);
        for f in ["params.json", "estimands.json", "hte_curve.csv", "diagnostics.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        hte_fit_free(fit);
        hte_dataset_free(data);
        hte_config_free(cfg);
    }
}

#[test]
fn errors_are_reported_not_panicked() {
    unsafe {
        let mut c = ptr::null_mut();
        let bad = CString::new(r#"{"schemaVersion": 1, "bogus": true}"#).unwrap();
        assert_eq!(hte_config_from_json(bad.as_ptr(), &mut c), HteStatus::Config);
        assert!(c.is_null());
        assert!(last_error().contains("bogus"), "{}", last_error());
        assert_eq!(hte_config_from_json(ptr::null(), &mut c), HteStatus::NullPointer);
        assert_eq!(hte_config_new_default(ptr::null_mut()), HteStatus::NullPointer);

        let mut data = ptr::null_mut();
        let missing = CString::new("/nonexistent/data.csv").unwrap();
        assert_eq!(hte_dataset_read_csv(missing.as_ptr(), HteSetup::RctOneSided, 0, &mut data), HteStatus::Io);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "id,r,z,y1,y0,x1\na,1,1,2,3,0\n").unwrap();
        let cp = CString::new(p.to_str().unwrap()).unwrap();
        assert_eq!(hte_dataset_read_csv(cp.as_ptr(), HteSetup::RctOneSided, 0, &mut data), HteStatus::Parse);
        assert!(last_error().contains("line 2"), "{}", last_error());

        let mut cfg = ptr::null_mut();
        assert_eq!(hte_config_new_default(&mut cfg), HteStatus::Ok);
        assert_eq!(hte_config_set_iterations(cfg, 10, 20, 2), HteStatus::Config);
        assert_eq!(last_error().is_empty(), false);
        assert_eq!(hte_config_set_iterations(cfg, 200, 50, 2), HteStatus::Ok);
        assert!(last_error().is_empty());
        hte_config_free(cfg);

        hte_config_free(ptr::null_mut());
        hte_dataset_free(ptr::null_mut());
        hte_fit_free(ptr::null_mut());
        assert_eq!(hte_dataset_len(ptr::null()), 0);
    }
}

#[test]
fn dataset_from_arrays_validates_patterns() {
    unsafe {
        let r = [1, 1, 0];
        let z = [1, 0, -1];
        let y1 = [2.0, f64::NAN, f64::NAN];
        let y0 = [f64::NAN, 1.0, 0.5];
        let x = [0.1, 0.2, 0.3];
        let mut data = ptr::null_mut();
        let st = hte_dataset_from_arrays(3, 1, r.as_ptr(), z.as_ptr(), y1.as_ptr(), y0.as_ptr(), x.as_ptr(), HteSetup::RctOneSided, &mut data);
        assert_eq!(st, HteStatus::Ok, "{}", last_error());
        assert_eq!((hte_dataset_len(data), hte_dataset_dim(data)), (3, 1));
        hte_dataset_free(data);

        let y0_bad = [3.0, 1.0, 0.5];
        let st = hte_dataset_from_arrays(3, 1, r.as_ptr(), z.as_ptr(), y1.as_ptr(), y0_bad.as_ptr(), x.as_ptr(), HteSetup::RctOneSided, &mut data);
        assert_eq!(st, HteStatus::Data);
        assert!(last_error().starts_with("row 1"), "{}", last_error());
        let z_bad = [1, 2, -1];
        let st = hte_dataset_from_arrays(3, 1, r.as_ptr(), z_bad.as_ptr(), y1.as_ptr(), y0.as_ptr(), x.as_ptr(), HteSetup::RctOneSided, &mut data);
        assert_eq!(st, HteStatus::Data);
        let st = hte_dataset_from_arrays(3, 1, r.as_ptr(), ptr::null(), y1.as_ptr(), y0.as_ptr(), x.as_ptr(), HteSetup::RctOneSided, &mut data);
        assert_eq!(st, HteStatus::NullPointer);
    }
}

fn profile_dir() -> PathBuf {
    // target/<profile>/deps/abi-<hash> -> target/<profile>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_is_current_and_usable_from_c() {
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(include.join("hte.h")).unwrap();
    for sym in ["hte_estimate", "hte_last_error_message", "HTE_STATUS_OK", "typedef struct HteFit HteFit"] {
        assert!(header.contains(sym), "{sym}");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping C link check: no C compiler");
        return;
    }
    let lib = [profile_dir().join("libhte_ffi.a"), profile_dir().join("deps").join("libhte_ffi.a")]
        .into_iter()
        .find(|p| p.exists())
        .expect("libhte_ffi.a not built next to the test binary");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "hte.h"
int main(void) {
    HteConfig *cfg = NULL;
    if (hte_config_from_json("{\"schemaVersion\": 1, \"dgp\": {\"n\": 200}, \"sampler\": {\"iterations\": 200, \"warmup\": 50}}", &cfg) != HTE_STATUS_OK) return 2;
    HteDataset *data = NULL;
    if (hte_dataset_simulate(cfg, 5, &data) != HTE_STATUS_OK) return 3;
    HteFit *fit = NULL;
    if (hte_estimate(data, cfg, 9, &fit) != HTE_STATUS_OK) { fprintf(stderr, "%s\n", hte_last_error_message()); return 4; }
    HteSummary ate;
    if (hte_fit_effect(fit, HTE_EFFECT_ATE, &ate) != HTE_STATUS_OK) return 5;
    HteConfig *bad = NULL;
    if (hte_config_from_json("{", &bad) != HTE_STATUS_CONFIG || strlen(hte_last_error_message()) == 0) return 6;
    printf("version=%s params=%zu ate=%.3f\n", hte_version(), hte_fit_param_count(fit), ate.mean);
    hte_fit_free(fit);
    hte_dataset_free(data);
    hte_config_free(cfg);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let out = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "cc failed: {}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "C program exited {:?}: {}", run.status, String::from_utf8_lossy(&run.stderr));
    let text = String::from_utf8_lossy(&run.stdout);
    assert!(text.starts_with("version=0.1.0 params=11"), "{text}");
}
