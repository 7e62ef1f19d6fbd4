use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use msabn_ffi::*;

fn last_error() -> String {
    let p = msabn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_model() -> *mut MsabnModel {
    let cfg = CString::new(r#"{"backbone":"resnet8","num_classes":3,"input_size":16,"width":4}"#).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { msabn_model_new(cfg.as_ptr(), 7, &mut handle) };
    assert_eq!(status, MsabnStatus::Ok);
    assert!(!handle.is_null());
    handle
}

#[test]
fn predict_fills_logits_and_attention() {
    let m = new_model();
    unsafe {
        assert_eq!(msabn_model_num_classes(m), 3);
        assert_eq!(msabn_model_input_size(m), 16);
        let side = msabn_model_attention_side(m);
        assert_eq!(side, 16);
        let pixels: Vec<u8> = (0..16 * 16 * 3).map(|i| (i % 251) as u8).collect();
        let mut logits = [f32::NAN; 3];
        let mut attention = vec![f32::NAN; side * side];
        let status = msabn_model_predict(
            m,
            pixels.as_ptr(),
            16,
            16,
            3,
            logits.as_mut_ptr(),
            3,
            attention.as_mut_ptr(),
            attention.len(),
        );
        assert_eq!(status, MsabnStatus::Ok);
        assert!(logits.iter().all(|v| v.is_finite()));
        assert!(attention.iter().all(|v| (0.0..=1.0).contains(v)));

        let status = msabn_model_predict(m, pixels.as_ptr(), 8, 8, 3, logits.as_mut_ptr(), 3, ptr::null_mut(), 0);
        assert_eq!(status, MsabnStatus::Shape);
        assert!(last_error().contains("expects 16x16"));
        let status = msabn_model_predict(m, ptr::null(), 16, 16, 3, logits.as_mut_ptr(), 3, ptr::null_mut(), 0);
        assert_eq!(status, MsabnStatus::NullPointer);
        msabn_model_free(m);
        msabn_model_free(ptr::null_mut());
    }
}

#[test]
fn bad_inputs_map_to_codes() {
    let mut handle = ptr::null_mut();
    let missing = CString::new("/nonexistent/checkpoint").unwrap();
    assert_eq!(unsafe { msabn_model_load(missing.as_ptr(), &mut handle) }, MsabnStatus::Io);
    assert!(handle.is_null());
    let bad = CString::new(r#"{"backbone":"resnet8","num_classes":1,"input_size":16}"#).unwrap();
    assert_eq!(unsafe { msabn_model_new(bad.as_ptr(), 0, &mut handle) }, MsabnStatus::InvalidArgument);
    assert!(last_error().contains("at least 2 classes"));
    assert_eq!(unsafe { msabn_model_new(ptr::null(), 0, &mut handle) }, MsabnStatus::NullPointer);
    assert_eq!(unsafe { msabn_model_num_classes(ptr::null()) }, 0);
}

#[test]
fn attention_fraction_and_paste() {
    // 4x4 map, on-pixels at (0,0), (1,1) inside the box and (3,3) outside
    let mut map = [0f32; 16];
    map[0] = 0.9;
    map[5] = 0.5;
    map[15] = 0.3;
    let b = MsabnBox { x_min: 0, y_min: 0, x_max: 2, y_max: 2 };
    let mut frac = -1.0;
    assert_eq!(unsafe { msabn_frac_attention_outside(map.as_ptr(), 4, 4, b, 0.2, &mut frac) }, MsabnStatus::Ok);
    assert!((frac - 1.0 / 3.0).abs() < 1e-15);
    let bad = MsabnBox { x_min: 0, y_min: 0, x_max: 5, y_max: 2 };
    assert_eq!(
        unsafe { msabn_frac_attention_outside(map.as_ptr(), 4, 4, bad, 0.2, &mut frac) },
        MsabnStatus::InvalidArgument
    );

    let src = [200u8; 4 * 4 * 3];
    let dst = [10u8; 6 * 6 * 3];
    let mut out = vec![0u8; 6 * 6 * 3];
    let sb = MsabnBox { x_min: 0, y_min: 0, x_max: 4, y_max: 4 };
    let tb = MsabnBox { x_min: 1, y_min: 1, x_max: 3, y_max: 3 };
    let status = unsafe { msabn_copy_replace(src.as_ptr(), 4, 4, sb, dst.as_ptr(), 6, 6, tb, 3, out.as_mut_ptr()) };
    assert_eq!(status, MsabnStatus::Ok);
    for y in 0..6 {
        for x in 0..6 {
            let inside = (1..3).contains(&x) && (1..3).contains(&y);
            assert_eq!(out[(y * 6 + x) * 3], if inside { 200 } else { 10 });
        }
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/msabn.h");
    assert!(std::path::Path::new(header).exists());
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler; header syntax not checked");
        return;
    };
    assert!(status.success());
}

#[test]
fn c_program_links_and_runs() {
    let deps = std::env::current_exe().unwrap();
    let lib_dir = deps.parent().and_then(|d| d.parent()).unwrap();
    let lib = lib_dir.join("libmsabn_ffi.a");
    if !lib.exists() {
        eprintln!("static library not built at {}; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("predict");
    let manifest = env!("CARGO_MANIFEST_DIR");
    let Ok(status) = Command::new("cc")
        .arg(format!("{manifest}/examples/predict.c"))
        .arg(format!("-I{manifest}/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("logits "));
}
