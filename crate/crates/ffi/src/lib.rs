//! C ABI over the seqlens engine.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every fallible call returns an `SlStatus`; on failure
//! `sl_last_error_message` describes the error for the calling thread.
//! Parameters and payloads cross the boundary as UTF-8 JSON.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use seqlens::cancel::CancelToken;
use seqlens::ingest::{export_summary, load_bundle};
use seqlens::model::AnalysisParams;
use seqlens::pipeline::{AnalysisResult, Cache, Pipeline};
use seqlens::service::merge_params;
use seqlens::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    MissingFile = 3,
    Io = 4,
    Parse = 5,
    SchemaMismatch = 6,
    ValueOutOfRange = 7,
    VersionUnsupported = 8,
    InvalidDataset = 9,
    InvalidParams = 10,
    UnknownFeature = 11,
    Cancelled = 12,
    Internal = 13,
    Panic = 14,
}

impl From<&Error> for SlStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::MissingFile(_) => SlStatus::MissingFile,
            Error::Io { .. } => SlStatus::Io,
            Error::Parse { .. } => SlStatus::Parse,
            Error::SchemaMismatch { .. } => SlStatus::SchemaMismatch,
            Error::ValueOutOfRange { .. } => SlStatus::ValueOutOfRange,
            Error::VersionUnsupported { .. } => SlStatus::VersionUnsupported,
            Error::InvalidDataset(_) => SlStatus::InvalidDataset,
            Error::InvalidParams(_) | Error::Json(_) | Error::FeatureAttentionMissing => SlStatus::InvalidParams,
            Error::UnknownFeature(_) => SlStatus::UnknownFeature,
            Error::Cancelled => SlStatus::Cancelled,
            _ => SlStatus::Internal,
        }
    }
}

/// A loaded dataset bundle with its attention tensor.
pub struct SlDataset {
    pipeline: Pipeline,
}

/// The outcome of one full analysis run.
pub struct SlResult {
    result: AnalysisResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Fail(SlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(SlStatus::from(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SlStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(SlStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn params_arg(p: *const c_char) -> Result<AnalysisParams, Fail> {
    if p.is_null() {
        return Ok(AnalysisParams::default());
    }
    let text = str_arg(p, "params_json")?;
    let value: serde_json::Value = serde_json::from_str(text).map_err(Error::from)?;
    Ok(merge_params(&AnalysisParams::default(), value)?)
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(SlStatus::NullArgument, format!("{name} is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(SlStatus::NullArgument, "output pointer is null".into()));
    }
    out.write(value);
    Ok(())
}

fn json_string<T: serde::Serialize>(v: &T) -> Result<*mut c_char, Fail> {
    let s = serde_json::to_string(v).map_err(Error::from)?;
    Ok(CString::new(s).map_err(|e| Fail(SlStatus::Internal, e.to_string()))?.into_raw())
}

/// Message for the last failed call on this thread, or null if none.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads and validates the bundle described by `manifest_path`.
///
/// # Safety
/// `manifest_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_open(manifest_path: *const c_char, out: *mut *mut SlDataset) -> SlStatus {
    guard(|| {
        let path = str_arg(manifest_path, "manifest_path")?;
        let (dataset, attention) = load_bundle(Path::new(path))?;
        let handle = Box::new(SlDataset { pipeline: Pipeline::new(dataset, attention) });
        write_out(out, Box::into_raw(handle))
    })
}

/// # Safety
/// `dataset` must come from `sl_dataset_open` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_free(dataset: *mut SlDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Instance, time-step, feature and class counts. Any output may be null.
///
/// # Safety
/// `dataset` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sl_dataset_shape(
    dataset: *const SlDataset,
    instances: *mut usize,
    time_steps: *mut usize,
    features: *mut usize,
    classes: *mut usize,
) -> SlStatus {
    guard(|| {
        let d = &ref_arg(dataset, "dataset")?.pipeline.dataset;
        for (p, v) in [
            (instances, d.instances.len()),
            (time_steps, d.time_steps),
            (features, d.feature_count()),
            (classes, d.class_count),
        ] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// Feature ranking under `params_json` (null for defaults) as a JSON array.
/// Release the string with `sl_string_free`.
///
/// # Safety
/// `dataset` must be a live handle; `params_json` null or NUL-terminated;
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_rank_json(
    dataset: *const SlDataset,
    params_json: *const c_char,
    out_json: *mut *mut c_char,
) -> SlStatus {
    guard(|| {
        let p = &ref_arg(dataset, "dataset")?.pipeline;
        let params = params_arg(params_json)?;
        write_out(out_json, json_string(&p.rank(&params)?)?)
    })
}

/// Runs the full pipeline under `params_json` (null for defaults).
///
/// # Safety
/// `dataset` must be a live handle; `params_json` null or NUL-terminated;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_analyze(
    dataset: *const SlDataset,
    params_json: *const c_char,
    out: *mut *mut SlResult,
) -> SlStatus {
    guard(|| {
        let p = &ref_arg(dataset, "dataset")?.pipeline;
        let params = params_arg(params_json)?;
        let (_, result) = p.run(&Cache::default(), &params, &CancelToken::new(), &|_| {})?;
        write_out(out, Box::into_raw(Box::new(SlResult { result })))
    })
}

/// # Safety
/// `result` must come from `sl_analyze` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_result_free(result: *mut SlResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// The whole result as JSON. Release with `sl_string_free`.
///
/// # Safety
/// `result` must be a live handle; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_result_json(result: *const SlResult, out_json: *mut *mut c_char) -> SlStatus {
    guard(|| write_out(out_json, json_string(&ref_arg(result, "result")?.result)?))
}

/// Two-class comparison for `feature`. Negative `t0`/`t1` select the full
/// time range.
///
/// # Safety
/// `result` must be a live handle; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_result_summary_json(
    result: *const SlResult,
    feature: usize,
    class_a: usize,
    class_b: usize,
    t0: i64,
    t1: i64,
    out_json: *mut *mut c_char,
) -> SlStatus {
    guard(|| {
        let r = &ref_arg(result, "result")?.result;
        let focus = (t0 >= 0 && t1 >= 0).then_some((t0 as usize, t1 as usize));
        write_out(out_json, json_string(&r.summary(feature, Some((class_a, class_b)), focus)?)?)
    })
}

/// Writes the result to `path` as deterministic pretty JSON.
///
/// # Safety
/// `result` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sl_result_export(result: *const SlResult, path: *const c_char) -> SlStatus {
    guard(|| {
        let r = &ref_arg(result, "result")?.result;
        Ok(export_summary(r, Path::new(str_arg(path, "path")?))?)
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
