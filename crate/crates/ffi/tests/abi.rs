use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use lid_align::knn::{NeighborList, Points};
use lid_align_ffi::*;

fn make(shape: &[usize], data: &[f32]) -> *mut LidTensor {
    let mut t = ptr::null_mut();
    let s = unsafe { lid_tensor_new(shape.as_ptr(), shape.len(), data.as_ptr(), data.len(), &mut t) };
    assert_eq!(s, LidStatus::Ok);
    t
}

fn last_error() -> String {
    let p = lid_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Deterministic pseudo-random values in [-1, 1).
fn values(n: usize, seed: u64) -> Vec<f32> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
        })
        .collect()
}

#[test]
fn tensor_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = values(12, 1);
    let t = make(&[3, 4], &data);
    let path = CString::new(dir.path().join("t.dt").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(lid_tensor_save(t, path.as_ptr()), LidStatus::Ok);
        let mut u = ptr::null_mut();
        assert_eq!(lid_tensor_load(path.as_ptr(), &mut u), LidStatus::Ok);
        assert_eq!(lid_tensor_ndim(u), 2);
        assert_eq!(std::slice::from_raw_parts(lid_tensor_shape(u), 2), &[3, 4]);
        assert_eq!(std::slice::from_raw_parts(lid_tensor_data(u), lid_tensor_len(u)), &data[..]);
        lid_tensor_free(t);
        lid_tensor_free(u);
        lid_tensor_free(ptr::null_mut());
        assert_eq!(lid_tensor_ndim(ptr::null()), 0);
    }
}

#[test]
fn estimators_match_core() {
    let (n, d) = (64, 5);
    let z_data = values(n * d, 2);
    let y_data = values(8 * d, 3);
    let z = make(&[n, d], &z_data);
    let y = make(&[8, d], &y_data);
    let y0 = make(&[d], &y_data[..d]);
    let wide = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
    let zp = Points::new(d, wide(&z_data)).unwrap();
    let yp = Points::new(d, wide(&y_data)).unwrap();
    unsafe {
        let mut v = 0.0;
        assert_eq!(lid_ilid(y0, z, 8, &mut v), LidStatus::Ok);
        assert_eq!(v, lid_align::ilid(yp.row(0), &zp, 8).unwrap().value);
        assert_eq!(lid_ilid_loss(y, z, 8, &mut v), LidStatus::Ok);
        assert_eq!(v, lid_align::ilid_loss(&yp, &zp, 8).unwrap());
        // Same neighborhood math for patches.
        let mut p = 0.0;
        assert_eq!(lid_plid(y0, z, 5, &mut p), LidStatus::Ok);
        assert_eq!(p, lid_align::ilid(yp.row(0), &zp, 5).unwrap().value);

        let sets = [z as *const LidTensor, y as *const LidTensor];
        let origs = [y as *const LidTensor, z as *const LidTensor];
        assert_eq!(lid_plid_loss(origs.as_ptr(), sets.as_ptr(), 2, 5, &mut v), LidStatus::Ok);
        let a = lid_align::ilid_loss(&yp, &zp, 5).unwrap();
        let b = lid_align::ilid_loss(&zp, &yp, 5).unwrap();
        assert!((v - (a + b) / 2.0).abs() < 1e-12, "{v} vs {}", (a + b) / 2.0);

        let dist = [0.5, 1.0, 1.5, 2.0];
        assert_eq!(lid_mle(dist.as_ptr(), 4, &mut v), LidStatus::Ok);
        let want = lid_align::lid_mle(NeighborList::from_distances(dist.to_vec()).unwrap()).unwrap().value;
        assert_eq!(v, want);
        for t in [y, z, y0] {
            lid_tensor_free(t);
        }
    }
}

#[test]
fn metrics_identity() {
    let img = values(16 * 16, 4).iter().map(|v| (v + 1.0) / 2.0).collect::<Vec<_>>();
    let a = make(&[16, 16, 1], &img);
    unsafe {
        let mut v = 0.0;
        assert_eq!(lid_psnr(a, a, 1.0, &mut v), LidStatus::Ok);
        assert_eq!(v, f64::INFINITY);
        assert_eq!(lid_ssim(a, a, &mut v), LidStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        lid_tensor_free(a);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let a = make(&[4, 4], &[0.5; 16]);
    let b = make(&[4, 5], &[0.5; 20]);
    unsafe {
        let mut v = 0.0;
        assert_eq!(lid_psnr(a, b, 1.0, &mut v), LidStatus::ShapeMismatch);
        assert!(last_error().contains("shape"));
        assert_eq!(lid_psnr(ptr::null(), b, 1.0, &mut v), LidStatus::NullPointer);
        assert_eq!(lid_psnr(a, a, 1.0, ptr::null_mut()), LidStatus::NullPointer);

        let dup = [1.0, 1.0, 1.0];
        assert_eq!(lid_mle(dup.as_ptr(), 3, &mut v), LidStatus::Degenerate);
        let zero = [0.0, 1.0, 2.0];
        assert_eq!(lid_mle(zero.as_ptr(), 3, &mut v), LidStatus::Degenerate);
        assert!(last_error().contains("zero"), "{}", last_error());

        let y = make(&[4], &[0.0; 4]);
        assert_eq!(lid_ilid(y, a, 8, &mut v), LidStatus::Degenerate);
        assert_eq!(lid_ilid(a, a, 2, &mut v), LidStatus::ShapeMismatch);

        let shape = [2usize, 2];
        let mut t = ptr::null_mut();
        let s = lid_tensor_new(shape.as_ptr(), 2, [1.0f32; 3].as_ptr(), 3, &mut t);
        assert_ne!(s, LidStatus::Ok);
        assert!(t.is_null());

        let missing = CString::new("/nonexistent/x.dt").unwrap();
        assert_eq!(lid_tensor_load(missing.as_ptr(), &mut t), LidStatus::Io);
        for t in [a, b, y] {
            lid_tensor_free(t);
        }
    }
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/lid_align.h")
}

#[test]
fn header_declares_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "typedef struct LidTensor LidTensor",
        "LID_STATUS_OK = 0",
        "lid_last_error",
        "lid_tensor_new",
        "lid_tensor_load",
        "lid_tensor_save",
        "lid_tensor_free",
        "lid_mle",
        "lid_ilid_loss",
        "lid_plid_loss",
        "lid_psnr",
        "lid_ssim",
    ] {
        assert!(text.contains(name), "{name}");
    }
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "lid_align.h"

int main(void) {
    const size_t shape[2] = {4, 4};
    float data[16];
    for (int i = 0; i < 16; i++) data[i] = (float)(i % 5) / 5.0f;
    LidTensor *a = NULL;
    if (lid_tensor_new(shape, 2, data, 16, &a) != LID_STATUS_OK) return 1;
    double psnr = 0.0;
    if (lid_psnr(a, a, 1.0, &psnr) != LID_STATUS_OK || !isinf(psnr)) return 2;
    const double d[3] = {0.0, 1.0, 2.0};
    double v = 0.0;
    if (lid_mle(d, 3, &v) != LID_STATUS_DEGENERATE) return 3;
    if (lid_last_error() == NULL) return 4;
    lid_tensor_free(a);
    printf("ok\n");
    return 0;
}
"#;

/// Compiles a C client against the header and the static library built for
/// this test run.
#[test]
fn c_client_links() {
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib_dir = deps.parent().unwrap();
    let lib = lib_dir.join("liblid_align_ffi.a");
    if !lib.exists() {
        let status = Command::new(env!("CARGO"))
            .args(["build", "-p", "lid-align-ffi", "--lib"])
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert!(lib.exists(), "{}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    let exe = dir.path().join("client");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("a C compiler is installed");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&run.stdout), "ok\n");
}
