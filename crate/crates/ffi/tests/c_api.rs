use std::ffi::{CStr, CString};
use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use conic_ffi::*;

const WARPED: &str = r#"
schema = 1
name = "ffi"

[boundaries.circle]
kind = "circle"
circumference = 6.283185307179586

[metrics.warped]
kind = "conic"
boundary = "circle"
height = 1.0
family = { family = "warped", scale = 1.0, profile = { kind = "polynomial", coefficients = [1.0, 0.5] } }
"#;

fn last_error() -> String {
    let p = conic_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cone() -> *mut ConicEngine {
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { conic_engine_new_cone(2.0 * PI, 1.0, &mut e) }, ConicStatus::Ok);
    e
}

fn distance(e: *const ConicEngine, a: (f64, f64), b: (f64, f64)) -> (ConicStatus, f64) {
    let mut d = f64::NAN;
    let s = unsafe { conic_engine_distance(e, &a.0, 1, a.1, &b.0, 1, b.1, &mut d) };
    (s, d)
}

#[test]
fn cone_distance_is_the_plane_distance() {
    let e = cone();
    let (s, d) = distance(e, (0.0, 0.5), (PI / 2.0, 0.5));
    assert_eq!(s, ConicStatus::Ok);
    assert!((d - 0.5 * 2f64.sqrt()).abs() < 1e-12, "{d}");
    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(unsafe { conic_engine_radial_domain(e, &mut lo, &mut hi) }, ConicStatus::Ok);
    assert_eq!((lo, hi), (0.0, 1.0));
    unsafe { conic_engine_free(e) };
}

#[test]
fn graph_distance_is_close_to_the_closed_form() {
    let e = cone();
    let exact = distance(e, (0.3, 0.4), (2.0, 0.7)).1;
    assert_eq!(unsafe { conic_engine_set_options(e, false, true) }, ConicStatus::Ok);
    let (s, d) = distance(e, (0.3, 0.4), (2.0, 0.7));
    assert_eq!(s, ConicStatus::Ok);
    assert!(((d - exact) / exact).abs() < 0.02, "{d} vs {exact}");
    unsafe { conic_engine_free(e) };
}

#[test]
fn scenario_metric_engine() {
    let toml = CString::new(WARPED).unwrap();
    let name = CString::new("warped").unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { conic_engine_from_scenario(toml.as_ptr(), name.as_ptr(), &mut e) }, ConicStatus::Ok);
    let (s, d) = distance(e, (0.0, 0.2), (0.0, 0.6));
    assert_eq!(s, ConicStatus::Ok);
    assert!((d - 0.4).abs() < 1e-6, "{d}");
    unsafe { conic_engine_free(e) };

    let missing = CString::new("nope").unwrap();
    let s = unsafe { conic_engine_from_scenario(toml.as_ptr(), missing.as_ptr(), &mut e) };
    assert_eq!(s, ConicStatus::Config);
    assert!(last_error().contains("nope"));
}

#[test]
fn errors_map_to_codes() {
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { conic_engine_new_cone(-1.0, 1.0, &mut e) }, ConicStatus::InvalidInput);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { conic_engine_new_cone(1.0, 1.0, ptr::null_mut()) }, ConicStatus::NullPointer);
    assert_eq!(distance(ptr::null(), (0.0, 0.1), (0.0, 0.2)).0, ConicStatus::NullPointer);

    let e = cone();
    let (s, _) = distance(e, (0.0, 0.5), (0.0, 3.0));
    assert_ne!(s, ConicStatus::Ok);
    let y = [0.0, 1.0];
    let mut d = 0.0;
    let s = unsafe { conic_engine_distance(e, y.as_ptr(), 2, 0.5, y.as_ptr(), 1, 0.5, &mut d) };
    assert_eq!(s, ConicStatus::InvalidInput);
    unsafe { conic_engine_free(e) };
    unsafe { conic_engine_free(ptr::null_mut()) };
}

#[test]
fn success_clears_the_last_error() {
    let mut e = ptr::null_mut();
    let _ = unsafe { conic_engine_new_cone(-1.0, 1.0, &mut e) };
    let e = cone();
    assert!(conic_last_error().is_null());
    unsafe { conic_engine_free(e) };
}

#[test]
fn bad_scenario_text_is_a_config_error() {
    let toml = CString::new("schema = 1\nname = \"x\"\n[[tasks]]\ntask = \"bogus\"\n").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { conic_scenario_parse(toml.as_ptr(), &mut s) }, ConicStatus::Config);
    assert!(s.is_null());
    let name = CString::new("no-such-scenario").unwrap();
    assert_eq!(unsafe { conic_scenario_bundled(name.as_ptr(), &mut s) }, ConicStatus::Config);
}

#[test]
fn bundled_scenario_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let name = CString::new("log-spiral").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { conic_scenario_bundled(name.as_ptr(), &mut s) }, ConicStatus::Ok);
    let mut n = 0usize;
    let seed = 3u64;
    assert_eq!(unsafe { conic_scenario_run(s, out.as_ptr(), &seed, &mut n) }, ConicStatus::Ok);
    assert!(n > 0);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), n);
    unsafe { conic_scenario_free(s) };
}

#[test]
fn version_matches_the_package() {
    let v = unsafe { CStr::from_ptr(conic_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/conic_geom.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in [
        "conic_last_error",
        "conic_version",
        "conic_engine_new_cone",
        "conic_engine_from_scenario",
        "conic_engine_set_options",
        "conic_engine_radial_domain",
        "conic_engine_distance",
        "conic_engine_free",
        "conic_scenario_parse",
        "conic_scenario_bundled",
        "conic_scenario_run",
        "conic_scenario_free",
        "typedef struct conic_engine conic_engine",
        "CONIC_STATUS_VIOLATIONS = 10",
    ] {
        assert!(h.contains(f), "header lacks {f}");
    }
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "conic_geom.h"

int main(void) {
    conic_engine *e = NULL;
    if (conic_engine_new_cone(6.283185307179586, 1.0, &e) != CONIC_STATUS_OK) return 1;
    double a = 0.0, b = 1.5707963267948966, d = 0.0;
    if (conic_engine_distance(e, &a, 1, 0.5, &b, 1, 0.5, &d) != CONIC_STATUS_OK) return 2;
    conic_engine_free(e);
    if (fabs(d - 0.7071067811865476) > 1e-12) return 3;
    if (conic_engine_new_cone(-1.0, 1.0, &e) != CONIC_STATUS_INVALID_INPUT) return 4;
    if (conic_last_error() == NULL) return 5;
    printf("%.12f\n", d);
    return 0;
}
"#;

/// Compiles a C client against the static library when a C compiler exists.
#[test]
fn c_client_links_against_the_static_library() {
    let Ok(exe) = std::env::current_exe() else { return };
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libconic_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static library or C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    let bin = dir.path().join("client");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let include = header().parent().unwrap().to_path_buf();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C client failed to compile");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C client exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.707106781187");
}
