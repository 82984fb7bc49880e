use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use suplab_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; suplab_last_error_length() + 1];
    let n = unsafe { suplab_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    assert_eq!(s.len(), n);
    s
}

fn params(seed: u64) -> SuplabEngineParams {
    SuplabEngineParams {
        beta: 0.8,
        d: 3,
        mass_scale: 200,
        truncation: 0.0,
        horizon: 0.5,
        seed,
        snapshot_times: ptr::null(),
        snapshot_count: 0,
    }
}

fn unit_dirac() -> *mut SuplabMeasure {
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(suplab_measure_new(3, &mut m), SuplabStatus::Ok);
        assert_eq!(suplab_measure_push(m, [0.0; 3].as_ptr(), 1.0), SuplabStatus::Ok);
    }
    m
}

#[test]
fn offspring_law_round_trip() {
    let mut law = ptr::null_mut();
    unsafe {
        assert_eq!(suplab_offspring_law_new(0.5, 4096, &mut law), SuplabStatus::Ok);
        let (mut p0, mut p1, mut p2) = (0.0, 0.0, 0.0);
        suplab_offspring_law_prob(law, 0, &mut p0);
        suplab_offspring_law_prob(law, 1, &mut p1);
        suplab_offspring_law_prob(law, 2, &mut p2);
        assert!((p0 - 1.0 / 1.5).abs() < 1e-12);
        assert_eq!(p1, 0.0);
        assert!((p2 - 0.25).abs() < 1e-12);
        let mut tail = 0.0;
        assert_eq!(suplab_offspring_law_tail(law, 1, &mut tail), SuplabStatus::Ok);
        assert!((tail - (1.0 - p0 - p1)).abs() < 1e-10);
        suplab_offspring_law_free(law);
    }
}

#[test]
fn invalid_beta_reports_error() {
    let mut law = ptr::null_mut();
    let s = unsafe { suplab_offspring_law_new(1.5, 100, &mut law) };
    assert_eq!(s, SuplabStatus::InvalidArgument);
    assert!(law.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_pointers_are_rejected() {
    let s = unsafe { suplab_offspring_law_new(0.5, 100, ptr::null_mut()) };
    assert_eq!(s, SuplabStatus::NullPointer);
    assert!(last_error().contains("null"));
    let mut v = 0.0;
    let s = unsafe { suplab_measure_total_mass(ptr::null(), &mut v) };
    assert_eq!(s, SuplabStatus::NullPointer);
    // freeing null is a no-op
    unsafe {
        suplab_offspring_law_free(ptr::null_mut());
        suplab_measure_free(ptr::null_mut());
        suplab_trajectory_free(ptr::null_mut());
        suplab_string_free(ptr::null_mut());
    }
}

#[test]
fn success_clears_last_error() {
    let mut law = ptr::null_mut();
    unsafe { suplab_offspring_law_new(2.0, 10, &mut law) };
    assert!(suplab_last_error_length() > 0);
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { suplab_measure_new(3, &mut m) }, SuplabStatus::Ok);
    assert_eq!(suplab_last_error_length(), 0);
    unsafe { suplab_measure_free(m) };
}

#[test]
fn oracles_match_closed_forms() {
    let (m, t, l, b): (f64, f64, f64, f64) = (0.7, 1.3, 2.0, 0.8);
    let v = (l.powf(-b) + b * t).powf(-1.0 / b);
    assert!((suplab_mass_laplace_oracle(m, t, l, b) - (-m * v).exp()).abs() < 1e-14);
    let ext = (-m * (b * t).powf(-1.0 / b)).exp();
    assert!((suplab_extinction_prob_oracle(m, t, b) - ext).abs() < 1e-14);
    assert!((suplab_cluster_normalizer(t, b) - (b * t).powf(1.0 / b)).abs() < 1e-14);
}

#[test]
fn simulation_snapshots_and_truncation() {
    let init = unit_dirac();
    let times = [0.25, 0.5];
    let mut p = params(9);
    p.truncation = 0.05;
    p.snapshot_times = times.as_ptr();
    p.snapshot_count = times.len();
    let mut tr = ptr::null_mut();
    unsafe {
        assert_eq!(suplab_simulate(&p, init, &mut tr), SuplabStatus::Ok);
        let mut n = 0;
        suplab_trajectory_snapshot_count(tr, &mut n);
        assert_eq!(n, 2);
        for (i, &expected) in times.iter().enumerate() {
            let (mut time, mut full, mut kept) = (0.0, 0.0, 0.0);
            assert_eq!(
                suplab_trajectory_snapshot(tr, i, &mut time, &mut full, &mut kept),
                SuplabStatus::Ok
            );
            assert_eq!(time, expected);
            assert!(kept <= full);
        }
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        assert_eq!(
            suplab_trajectory_snapshot(tr, 5, &mut a, &mut b, &mut c),
            SuplabStatus::InvalidArgument
        );
        let mut tau = 0.0;
        suplab_trajectory_tau_k(tr, &mut tau);
        assert!(tau > 0.0);
        suplab_trajectory_free(tr);
        suplab_measure_free(init);
    }
}

#[test]
fn simulation_is_deterministic_in_seed() {
    let init = unit_dirac();
    let run = |seed| unsafe {
        let mut tr = ptr::null_mut();
        assert_eq!(suplab_simulate(&params(seed), init, &mut tr), SuplabStatus::Ok);
        let (mut t, mut f, mut k) = (0.0, 0.0, 0.0);
        suplab_trajectory_snapshot(tr, 0, &mut t, &mut f, &mut k);
        suplab_trajectory_free(tr);
        f
    };
    assert_eq!(run(3), run(3));
    unsafe { suplab_measure_free(init) };
}

#[test]
fn hit_probability_is_a_probability() {
    let init = unit_dirac();
    let (mut v, mut se) = (0.0, 0.0);
    let s = unsafe {
        suplab_hit_probability(&params(4), init, 0.5, [0.0; 3].as_ptr(), 0.3, 200, &mut v, &mut se)
    };
    assert_eq!(s, SuplabStatus::Ok, "{}", last_error());
    assert!((0.0..=1.0).contains(&v) && se >= 0.0);
    unsafe { suplab_measure_free(init) };
}

#[test]
fn verify_json_for_offspring_criterion() {
    let tier = CString::new("fast").unwrap();
    let mut json = ptr::null_mut();
    let ids = [1u8];
    unsafe {
        assert_eq!(suplab_verify_json(tier.as_ptr(), 1, ids.as_ptr(), 1, &mut json), SuplabStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap();
        let v: serde_json::Value = serde_json::from_str(text).unwrap();
        assert_eq!(v["results"][0]["status"], "pass");
        suplab_string_free(json);
        let bad = CString::new("medium").unwrap();
        assert_eq!(
            suplab_verify_json(bad.as_ptr(), 1, ids.as_ptr(), 1, &mut json),
            SuplabStatus::InvalidArgument
        );
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(suplab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/suplab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["suplab_simulate", "suplab_last_error_message", "suplab_verify_json", "SUPLAB_STATUS_OK"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let probe = std::env::temp_dir().join("suplab_header_probe.c");
    std::fs::write(&probe, "#include \"suplab.h\"\nint main(void) { return SUPLAB_STATUS_OK; }\n").unwrap();
    let status = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(header.parent().unwrap())
        .arg(&probe)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(_) => eprintln!("no C compiler; skipped header compile"),
    }
}
