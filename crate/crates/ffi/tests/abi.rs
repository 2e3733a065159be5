use std::ffi::{c_char, CString};
use std::ptr;

use crlm_core::synthgen::sphere_phantom;
use crlm_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { crlm_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn segment_sphere_through_handles() {
    let ph = sphere_phantom(32, 8.0, 0.05, 2).unwrap();
    let dims = [32usize; 3];
    let spacing = [1.0f64; 3];
    let data = ph.volume.data();
    let mut vol = ptr::null_mut();
    unsafe {
        assert_eq!(crlm_volume_from_data(dims.as_ptr(), spacing.as_ptr(), data.as_ptr(), data.len(), &mut vol), CrlmStatus::Ok);
        let mut d = [0usize; 3];
        assert_eq!(crlm_volume_dims(vol, d.as_mut_ptr()), CrlmStatus::Ok);
        assert_eq!(d, dims);

        let [cx, cy, cz] = ph.center;
        let mut mask = ptr::null_mut();
        assert_eq!(crlm_samonai_segment(vol, 0, cz, cy, cx, ptr::null(), 2, &mut mask), CrlmStatus::Ok);
        let mut count = 0usize;
        assert_eq!(crlm_mask_count(mask, 2, &mut count), CrlmStatus::Ok);
        assert!(count > 0);

        let mut labels = vec![0u8; data.len()];
        assert_eq!(crlm_mask_copy_labels(mask, labels.as_mut_ptr(), labels.len()), CrlmStatus::Ok);
        assert_eq!(labels.iter().filter(|&&l| l == 2).count(), count);
        assert_eq!(crlm_mask_copy_labels(mask, labels.as_mut_ptr(), 10), CrlmStatus::InvalidArgument);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.nii").to_str().unwrap()).unwrap();
        assert_eq!(crlm_mask_save(mask, path.as_ptr()), CrlmStatus::Ok);
        let mut reloaded = ptr::null_mut();
        assert_eq!(crlm_mask_load(path.as_ptr(), &mut reloaded), CrlmStatus::Ok);
        let mut d = 0.0;
        assert_eq!(crlm_dice(mask, reloaded, 2, &mut d), CrlmStatus::Ok);
        assert_eq!(d, 1.0);

        crlm_mask_free(reloaded);
        crlm_mask_free(mask);
        crlm_volume_free(vol);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    unsafe {
        let mut vol = ptr::null_mut();
        let missing = CString::new("/nonexistent/volume.nii").unwrap();
        assert_eq!(crlm_volume_load(missing.as_ptr(), &mut vol), CrlmStatus::Io);
        assert!(vol.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(crlm_volume_load(ptr::null(), &mut vol), CrlmStatus::NullPointer);
        let mut count = 0;
        assert_eq!(crlm_mask_count(ptr::null(), 2, &mut count), CrlmStatus::NullPointer);

        let dims = [2usize, 2, 2];
        let spacing = [1.0; 3];
        let data = [0.0; 7];
        assert_eq!(crlm_volume_from_data(dims.as_ptr(), spacing.as_ptr(), data.as_ptr(), 7, &mut vol), CrlmStatus::InvalidArgument);
        let data = [0.0; 8];
        assert_eq!(crlm_volume_from_data(dims.as_ptr(), spacing.as_ptr(), data.as_ptr(), 8, &mut vol), CrlmStatus::Ok);
        let mut mask = ptr::null_mut();
        assert_eq!(crlm_samonai_segment(vol, 7, 0, 0, 0, ptr::null(), 2, &mut mask), CrlmStatus::InvalidArgument);
        assert!(last_error().contains("view"));
        crlm_volume_free(vol);
        crlm_volume_free(ptr::null_mut());

        // success clears the message
        let t = [1.0, 2.0, 3.0];
        let e = [1u8, 1, 1];
        let r = [3.0, 2.0, 1.0];
        let mut c = 0.0;
        assert_eq!(crlm_concordance_index(t.as_ptr(), e.as_ptr(), r.as_ptr(), 3, &mut c), CrlmStatus::Ok);
        assert_eq!(c, 1.0);
        assert_eq!(last_error(), "");
        assert_eq!(crlm_run_pipeline(missing.as_ptr()), CrlmStatus::InvalidArgument);
    }
}

#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include "crlm.h"
#include <stdio.h>
int main(void) {
    double t[3] = {1, 2, 3}, r[3] = {3, 2, 1}, c = 0;
    uint8_t e[3] = {1, 1, 1};
    if (crlm_concordance_index(t, e, r, 3, &c) != CrlmStatus_Ok) return 1;
    CrlmVolume *v = NULL;
    if (crlm_volume_load("/nonexistent.nii", &v) != CrlmStatus_Io) return 2;
    char buf[128];
    crlm_last_error(buf, sizeof buf);
    printf("%.3f %s\n", c, buf[0] ? "error-set" : "error-empty");
    return 0;
}
"#,
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let syntax = std::process::Command::new(&cc).args(["-fsyntax-only", "-Wall", "-Werror", "-I", header_dir]).arg(&src).status();
    let Ok(status) = syntax else {
        eprintln!("no C compiler available; skipping");
        return;
    };
    assert!(status.success(), "header does not compile");

    // target/<profile>/ holds the static library next to deps/
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libcrlm_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; link step skipped", lib.display());
        return;
    }
    let bin = dir.path().join("main");
    let out = std::process::Command::new(&cc)
        .args(["-I", header_dir])
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = std::process::Command::new(&bin).output().unwrap();
    assert!(run.status.success());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "1.000 error-set");
}
