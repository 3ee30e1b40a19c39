use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use splitflow::flow::{coupled_sample, SamplerConfig, Scheme};
use splitflow::net::{Checkpoint, CheckpointMetadata};
use splitflow::{NetConfig, NetParams, RngState};
use splitflow_ffi::*;

fn last_error() -> String {
    let len = unsafe { sf_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as std::ffi::c_char; len + 1];
    unsafe { sf_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn set_from(points: &[f64], n: usize) -> *mut SfSampleSet {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { sf_sample_set_new(points.as_ptr(), n, 1, 1, &mut out) },
        SfStatus::Ok
    );
    assert!(!out.is_null());
    out
}

#[test]
fn version_and_error_buffer() {
    let v = unsafe { CStr::from_ptr(sf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sf_net_load(ptr::null(), &mut out) }, SfStatus::NullPointer);
    assert_eq!(last_error(), "null pointer: path");
    // Truncation keeps the terminator and reports the full length.
    let mut small = [1 as std::ffi::c_char; 5];
    let full = unsafe { sf_last_error_message(small.as_mut_ptr(), small.len()) };
    assert_eq!(full, "null pointer: path".len());
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_str().unwrap(), "null");
}

#[test]
fn missing_checkpoint_maps_to_its_status() {
    let mut out = ptr::null_mut();
    let path = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(
        unsafe { sf_net_load(path.as_ptr(), &mut out) },
        SfStatus::MissingArtifact
    );
    assert!(out.is_null());
    assert!(last_error().contains("/nonexistent/model.json"));
}

#[test]
fn metrics_closed_forms_through_the_abi() {
    let a = set_from(&[0.0, 0.0], 1);
    let b = set_from(&[3.0, 4.0], 1);
    let mut m = SfMetrics::default();
    assert_eq!(unsafe { sf_metrics(a, b, 2048, 0, &mut m) }, SfStatus::Ok);
    assert_eq!(m.w1, 5.0);
    assert!((m.energy - 10.0).abs() < 1e-12);
    let mut w = 0.0;
    assert_eq!(unsafe { sf_w1_exact(a, a, &mut w) }, SfStatus::Ok);
    assert_eq!(w, 0.0);
    let c = set_from(&[0.0, 0.0, 1.0, 1.0], 2);
    assert_eq!(unsafe { sf_w1_exact(a, c, &mut w) }, SfStatus::Failure);
    assert!(last_error().contains("1") && last_error().contains("2"));
    assert_eq!(
        unsafe { sf_metrics(a, ptr::null(), 10, 0, &mut m) },
        SfStatus::NullPointer
    );
    unsafe {
        sf_sample_set_free(a);
        sf_sample_set_free(b);
        sf_sample_set_free(c);
        sf_sample_set_free(ptr::null_mut());
        sf_net_free(ptr::null_mut());
    }
}

#[test]
fn sample_set_copy_and_csv_roundtrip() {
    let pts = [0.5, -1.0, 2.0, 3.25, -0.125, 7.0];
    let s = set_from(&pts, 3);
    assert_eq!(unsafe { (sf_sample_set_len(s), sf_sample_set_dim(s)) }, (3, 2));
    let mut buf = [0.0; 6];
    assert_eq!(
        unsafe { sf_sample_set_copy_points(s, buf.as_mut_ptr(), 5) },
        SfStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { sf_sample_set_copy_points(s, buf.as_mut_ptr(), 6) },
        SfStatus::Ok
    );
    assert_eq!(buf, pts);
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&dir.path().join("s.csv"));
    assert_eq!(unsafe { sf_sample_set_write_csv(s, path.as_ptr()) }, SfStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(
        unsafe { sf_sample_set_read_csv(path.as_ptr(), &mut back) },
        SfStatus::Ok
    );
    let mut buf2 = [0.0; 6];
    assert_eq!(
        unsafe { sf_sample_set_copy_points(back, buf2.as_mut_ptr(), 6) },
        SfStatus::Ok
    );
    assert_eq!(buf2, pts);
    let mut bad = ptr::null_mut();
    assert_eq!(
        unsafe { sf_sample_set_new(pts.as_ptr(), 0, 1, 1, &mut bad) },
        SfStatus::InvalidArgument
    );
    unsafe {
        sf_sample_set_free(s);
        sf_sample_set_free(back);
    }
}

fn write_checkpoint(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let cfg = NetConfig {
        input_dim: 2,
        output_dim: 1,
        hidden_width: 8,
        hidden_layers: 2,
        time_feature_dim: 4,
    };
    let p = NetParams::init(cfg, &mut RngState::new(seed)).unwrap();
    let path = dir.join(name);
    Checkpoint::new(&p, None, CheckpointMetadata::default())
        .write(&path)
        .unwrap();
    path
}

#[test]
fn coupled_sampling_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (pf, pg) = (
        write_checkpoint(dir.path(), "f.json", 1),
        write_checkpoint(dir.path(), "g.json", 2),
    );
    let (mut nf, mut ng) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { sf_net_load(cstr(&pf).as_ptr(), &mut nf) }, SfStatus::Ok);
    assert_eq!(unsafe { sf_net_load(cstr(&pg).as_ptr(), &mut ng) }, SfStatus::Ok);
    assert_eq!(unsafe { sf_net_output_dim(nf) }, 1);
    for (scheme, lib_scheme) in [
        (SfScheme::LieTrotter, Scheme::LieTrotter),
        (SfScheme::Strang, Scheme::Strang),
    ] {
        let mut out = ptr::null_mut();
        assert_eq!(
            unsafe { sf_sample_coupled(nf, ng, 64, 12, scheme, 9, &mut out) },
            SfStatus::Ok
        );
        let mut buf = vec![0.0; 128];
        assert_eq!(
            unsafe { sf_sample_set_copy_points(out, buf.as_mut_ptr(), buf.len()) },
            SfStatus::Ok
        );
        let vf = Checkpoint::read(&pf).unwrap().params().unwrap();
        let vg = Checkpoint::read(&pg).unwrap().params().unwrap();
        let cfg = SamplerConfig {
            n_steps: 12,
            scheme: lib_scheme,
            seed: 9,
        };
        let want = coupled_sample(&vf, &vg, 64, &cfg, &mut RngState::new(9)).unwrap();
        assert_eq!(buf, want.points().iter().copied().collect::<Vec<_>>());
        unsafe { sf_sample_set_free(out) };
    }
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { sf_sample_coupled(nf, ng, 10, 0, SfScheme::LieTrotter, 0, &mut out) },
        SfStatus::InvalidArgument
    );
    assert!(out.is_null());
    unsafe {
        sf_net_free(nf);
        sf_net_free(ng);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/splitflow.h")).unwrap();
    for name in [
        "sf_version",
        "sf_last_error_message",
        "sf_net_load",
        "sf_net_output_dim",
        "sf_net_free",
        "sf_sample_coupled",
        "sf_sample_set_new",
        "sf_sample_set_read_csv",
        "sf_sample_set_write_csv",
        "sf_sample_set_len",
        "sf_sample_set_dim",
        "sf_sample_set_copy_points",
        "sf_sample_set_free",
        "sf_w1_exact",
        "sf_metrics",
        "typedef struct SfNet SfNet",
        "typedef struct SfSampleSet SfSampleSet",
        "SF_STATUS_NON_FINITE = 4",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Compiles and runs a C program against the static library when a C
/// compiler and the archive are available.
#[test]
fn c_program_links_against_the_static_library() {
    let exe = std::env::current_exe().unwrap();
    let target_dir = exe.parent().and_then(Path::parent).unwrap();
    let archive = target_dir.join("libsplitflow_ffi.a");
    let have_cc = Command::new("cc")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success());
    if !archive.exists() || !have_cc {
        eprintln!(
            "skipping: archive at {} present={}, cc present={have_cc}",
            archive.display(),
            archive.exists()
        );
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "splitflow.h"
int main(void) {
    double a_pts[2] = {0.0, 0.0}, b_pts[2] = {3.0, 4.0};
    SfSampleSet *a = NULL, *b = NULL;
    if (sf_sample_set_new(a_pts, 1, 1, 1, &a) != SF_STATUS_OK) return 10;
    if (sf_sample_set_new(b_pts, 1, 1, 1, &b) != SF_STATUS_OK) return 11;
    SfMetrics m;
    if (sf_metrics(a, b, 16, 0, &m) != SF_STATUS_OK) return 12;
    SfNet *net = NULL;
    SfStatus s = sf_net_load("/nonexistent.json", &net);
    char msg[256];
    sf_last_error_message(msg, sizeof msg);
    printf("%s %.17g %.17g %d %s\n", sf_version(), m.w1, m.energy, (int)s, msg);
    sf_sample_set_free(a);
    sf_sample_set_free(b);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C build failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(
        line.starts_with(&format!("{} 5 10 3 missing artifact", env!("CARGO_PKG_VERSION"))),
        "{line}"
    );
}
