use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use seqlens::ingest::write_bundle;
use seqlens::model::{AttentionTensor, FeatureKind, FeatureSpec, InstanceRecord, SequenceDataset};
use seqlens_ffi::*;

fn bundle(dir: &Path) -> PathBuf {
    let t = 8;
    let features = vec![FeatureSpec { id: 0, name: "v".into(), value_min: -10.0, value_max: 10.0, kind: FeatureKind::Numeric }];
    let mut instances = Vec::new();
    let mut event_level = Vec::new();
    for i in 0..40usize {
        let label = i % 2;
        let shift = (i % 4) as f64 * 2.0 - 3.0;
        let values = (0..t).map(|s| ((s as f64 * 0.7 + i as f64).sin() + shift).clamp(-10.0, 10.0)).collect();
        instances.push(InstanceRecord { id: format!("i{i}"), label, values, attributes: BTreeMap::new(), embedding: None });
        event_level.push((0..t).map(|s| ((i * 7 + s * 3) % 10) as f64 / 10.0).collect());
    }
    let ds = SequenceDataset { time_steps: t, class_count: 2, features, instances };
    write_bundle(dir, &ds, &AttentionTensor { event_level, feature_level: None }).unwrap()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = sl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    sl_string_free(s);
    out
}

#[test]
fn open_analyze_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = cstr(&bundle(dir.path()));
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(sl_dataset_open(manifest.as_ptr(), &mut ds), SlStatus::Ok);
        let (mut n, mut t, mut l) = (0, 0, 0);
        assert_eq!(sl_dataset_shape(ds, &mut n, &mut t, ptr::null_mut(), &mut l), SlStatus::Ok);
        assert_eq!((n, t, l), (40, 8, 2));

        let mut json = ptr::null_mut();
        assert_eq!(sl_rank_json(ds, ptr::null(), &mut json), SlStatus::Ok);
        let ranking: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(ranking[0]["feature_id"], 0);

        let params = CString::new(r#"{"seed": 5}"#).unwrap();
        let mut a = ptr::null_mut();
        let mut b = ptr::null_mut();
        assert_eq!(sl_analyze(ds, params.as_ptr(), &mut a), SlStatus::Ok);
        assert_eq!(sl_analyze(ds, params.as_ptr(), &mut b), SlStatus::Ok);
        let (mut ja, mut jb) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(sl_result_json(a, &mut ja), SlStatus::Ok);
        assert_eq!(sl_result_json(b, &mut jb), SlStatus::Ok);
        assert_eq!(take(ja), take(jb));

        let mut s = ptr::null_mut();
        assert_eq!(sl_result_summary_json(a, 0, 0, 1, 2, 6, &mut s), SlStatus::Ok);
        let summary: serde_json::Value = serde_json::from_str(&take(s)).unwrap();
        assert_eq!(summary["comparison"]["time_range"], serde_json::json!([2, 6]));
        assert_eq!(sl_result_summary_json(a, 0, 0, 1, 6, 2, &mut s), SlStatus::InvalidParams);

        let out = cstr(&dir.path().join("out.json"));
        assert_eq!(sl_result_export(a, out.as_ptr()), SlStatus::Ok);
        assert!(dir.path().join("out.json").exists());

        sl_result_free(a);
        sl_result_free(b);
        sl_dataset_free(ds);
    }
}

#[test]
fn errors_set_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = bundle(dir.path());
    unsafe {
        let mut ds = ptr::null_mut();
        let missing = cstr(&dir.path().join("nope.toml"));
        assert_eq!(sl_dataset_open(missing.as_ptr(), &mut ds), SlStatus::MissingFile);
        assert!(last_error().contains("nope.toml"));
        assert!(ds.is_null());

        assert_eq!(sl_dataset_open(ptr::null(), &mut ds), SlStatus::NullArgument);
        let m = cstr(&manifest);
        assert_eq!(sl_dataset_open(m.as_ptr(), ptr::null_mut()), SlStatus::NullArgument);

        assert_eq!(sl_dataset_open(m.as_ptr(), &mut ds), SlStatus::Ok);
        let mut r = ptr::null_mut();
        for bad in [r#"{"n_ref": 0}"#, r#"{"bogus": 1}"#, "not json"] {
            let p = CString::new(bad).unwrap();
            assert_eq!(sl_analyze(ds, p.as_ptr(), &mut r), SlStatus::InvalidParams, "{bad}");
        }
        let bytes = [0xffu8, 0];
        assert_eq!(sl_rank_json(ds, bytes.as_ptr().cast(), &mut ptr::null_mut()), SlStatus::InvalidUtf8);
        assert_eq!(sl_analyze(ptr::null(), ptr::null(), &mut r), SlStatus::NullArgument);
        sl_dataset_free(ds);
        sl_dataset_free(ptr::null_mut());
        sl_result_free(ptr::null_mut());
        sl_string_free(ptr::null_mut());
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(sl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compiles the C smoke program against the generated header and static library.
#[test]
fn c_program_links_and_runs() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = exe_dir.join("libseqlens_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = std::process::Command::new(cc)
        .args(["-std=c11", "-Wall", "-Werror", "-I"])
        .arg(root.join("include"))
        .arg(root.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());

    let manifest = bundle(&dir.path().join("b"));
    let export = dir.path().join("c.json");
    let out = std::process::Command::new(&bin).arg(&manifest).arg(&export).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "exit {:?}\n{stdout}\n{}", out.status, String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("shape 40 8 1 2"), "{stdout}");
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&export).unwrap()).unwrap();
    assert_eq!(v["params"]["seed"], 7);
}
