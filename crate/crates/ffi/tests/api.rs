use std::ffi::{CStr, CString};
use std::ptr;

use blowup_lab_ffi::*;

const COS_COS: &str = "cos(2*pi*x)*cos(2*pi*y)";

fn last_error() -> String {
    let p = bl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn data(g: &str, r: &str) -> *mut BlData {
    let (g, r) = (CString::new(g).unwrap(), CString::new(r).unwrap());
    let mut out = ptr::null_mut();
    let st = unsafe { bl_data_new(g.as_ptr(), r.as_ptr(), 16, &mut out) };
    assert_eq!(st, BlStatus::Ok, "{}", last_error());
    out
}

#[test]
fn data_minimum_matches_cos_cos() {
    let d = data(COS_COS, "0");
    let (mut m0, mut ts, mut n) = (0.0, 0.0, 0usize);
    assert_eq!(unsafe { bl_data_minimum(d, &mut m0, &mut ts, &mut n) }, BlStatus::Ok);
    assert!((m0 + 1.0).abs() < 1e-12);
    assert!((ts - 1.0).abs() < 1e-12);
    assert_eq!(n, 2);
    unsafe { bl_data_free(d) };
}

#[test]
fn bad_inputs_report_status_and_message() {
    let mut out = ptr::null_mut();
    let g = CString::new("cos(2*pi*x").unwrap();
    let r = CString::new("0").unwrap();
    assert_eq!(unsafe { bl_data_new(g.as_ptr(), r.as_ptr(), 16, &mut out) }, BlStatus::InvalidData);
    assert!(out.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { bl_data_new(ptr::null(), r.as_ptr(), 16, &mut out) }, BlStatus::NullArgument);
    assert!(last_error().contains("gamma0"));

    let pos = CString::new("3").unwrap();
    assert_eq!(unsafe { bl_data_new(pos.as_ptr(), r.as_ptr(), 16, &mut out) }, BlStatus::InvalidData);

    let mut v = 0.0;
    assert_eq!(unsafe { bl_part2_blowup_time_formula(0.7, &mut v) }, BlStatus::InvalidArgument);
    assert_eq!(unsafe { bl_part2_mu1_undamped(2.5, &mut v) }, BlStatus::InvalidArgument);
    assert_eq!(unsafe { bl_part2_mu1_undamped(1.0, ptr::null_mut()) }, BlStatus::NullArgument);

    let d = data(COS_COS, "0");
    let mut rep = BlRegimeReport {
        regime: BlRegime::Blowup,
        alpha_critical: 0.0,
        te: 0.0,
        t_blowup: 0.0,
    };
    assert_eq!(unsafe { bl_euler_classify(d, -1.0, &mut rep) }, BlStatus::InvalidArgument);
    assert_eq!(unsafe { bl_data_set_tol_rel(d, -1.0) }, BlStatus::InvalidArgument);
    unsafe { bl_data_free(d) };
}

#[test]
fn free_accepts_null() {
    unsafe {
        bl_data_free(ptr::null_mut());
        bl_spectral_free(ptr::null_mut());
        bl_string_free(ptr::null_mut());
    }
}

#[test]
fn part2_closed_forms() {
    let mut v = 0.0;
    assert_eq!(unsafe { bl_part2_mu1_undamped(1.0, &mut v) }, BlStatus::Ok);
    assert_eq!(v, 4.0);
    assert_eq!(unsafe { bl_part2_blowup_time_formula(0.0, &mut v) }, BlStatus::Ok);
    assert_eq!(v, 2.0);
    assert_eq!(unsafe { bl_part2_blowup_time_formula(0.25, &mut v) }, BlStatus::Ok);
    assert!((v - 4.0 * 2f64.ln()).abs() < 1e-15);
    assert_eq!(unsafe { bl_part2_divergence_time(0.0, &mut v) }, BlStatus::Ok);
    assert!((v - 2.0).abs() < 1e-6, "{v}");
}

#[test]
fn euler_blowup_time_and_regimes() {
    let d = data(COS_COS, "0");
    let (mut te, mut err) = (0.0, 0.0);
    assert_eq!(unsafe { bl_euler_blowup_time(d, &mut te, &mut err) }, BlStatus::Ok, "{}", last_error());
    assert!((te - 1.418002429).abs() < 1e-6, "{te}");
    let mut rep = BlRegimeReport {
        regime: BlRegime::TrivialSteady,
        alpha_critical: 0.0,
        te: 0.0,
        t_blowup: 0.0,
    };
    assert_eq!(unsafe { bl_euler_classify(d, 0.5 / te, &mut rep) }, BlStatus::Ok);
    assert_eq!(rep.regime, BlRegime::Blowup);
    let a = 0.5 / te;
    assert!((rep.t_blowup - (-(1.0 - a * te).ln() / a)).abs() < 1e-9);
    assert_eq!(unsafe { bl_euler_classify(d, 2.0 / te, &mut rep) }, BlStatus::Ok);
    assert_eq!(rep.regime, BlRegime::TrivialSteady);
    assert!(rep.t_blowup.is_nan());
    unsafe { bl_data_free(d) };
}

#[test]
fn part2_detection_through_handle() {
    let d = data("cos(4*pi*x)", "-sin(2*pi*x)^2");
    let mut e = BlBlowupEstimate {
        kind: BlBlowupKind::None,
        t_est: 0.0,
        t_lo: 0.0,
        t_hi: 0.0,
        t_resolved: 0.0,
        exponent: 0.0,
        r2: 0.0,
    };
    assert_eq!(unsafe { bl_detect_blowup(d, 0.0, 1, 8, &mut e) }, BlStatus::Ok, "{}", last_error());
    assert_eq!(e.kind, BlBlowupKind::JToZero);
    assert!((e.t_est - 2.0).abs() < 1e-4, "{}", e.t_est);
    assert!(e.t_lo <= e.t_est && e.t_est <= e.t_hi);
    unsafe { bl_data_free(d) };
}

#[test]
fn spectral_handle_steps_and_rejects_large_dt() {
    let d = data(COS_COS, "0");
    let labels = [0.0, 0.5, 0.25, 0.25];
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { bl_spectral_new(d, 32, labels.as_ptr(), 2, &mut s) }, BlStatus::Ok, "{}", last_error());
    let mut cfl = 0.0;
    assert_eq!(unsafe { bl_spectral_cfl_limit(s, &mut cfl) }, BlStatus::Ok);
    assert!(cfl > 0.0);
    assert_eq!(unsafe { bl_spectral_step(s, 0.0, 4.0 * cfl) }, BlStatus::Numerical);
    for _ in 0..10 {
        assert_eq!(unsafe { bl_spectral_step(s, 0.0, 0.5 * cfl) }, BlStatus::Ok);
    }
    let mut diag = BlSpectralDiagnostics {
        t: 0.0,
        i_t: 0.0,
        mean_gamma: 0.0,
        sup_gamma: 0.0,
        min_gamma: 0.0,
        bkm_partial: 0.0,
    };
    assert_eq!(unsafe { bl_spectral_diagnostics(s, &mut diag) }, BlStatus::Ok);
    assert!((diag.t - 5.0 * cfl).abs() < 1e-12);
    assert!(diag.mean_gamma.abs() < 1e-10);
    assert!(diag.min_gamma < -1.0);

    let mut buf = vec![0.0; 32 * 32];
    assert_eq!(unsafe { bl_spectral_gamma(s, buf.as_mut_ptr(), 10) }, BlStatus::InvalidArgument);
    assert_eq!(unsafe { bl_spectral_gamma(s, buf.as_mut_ptr(), buf.len()) }, BlStatus::Ok);
    let min = buf.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(min, diag.min_gamma);
    unsafe {
        bl_spectral_free(s);
        bl_data_free(d);
    }
}

#[test]
fn scenario_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let toml = format!(
        "name = \"ffi\"\nsystem = \"part2\"\nalpha_list = [0.0]\n[outputs]\nsummary_json = \"{}\"\n",
        dir.path().join("s.json").display()
    );
    let t = CString::new(toml).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { bl_run_scenario(t.as_ptr(), &mut out) }, BlStatus::Ok, "{}", last_error());
    let json: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    unsafe { bl_string_free(out) };
    assert_eq!(json["records"].as_array().unwrap().len(), 1);

    let bad = CString::new("name = \"x\"\nsystem = \"euler\"\nalpha_list = []\n").unwrap();
    assert_eq!(unsafe { bl_run_scenario(bad.as_ptr(), &mut out) }, BlStatus::InvalidArgument);
    assert!(out.is_null());
    assert!(last_error().contains("alpha_list"));
}
