mod common;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use seqlens::ingest::write_bundle;
use seqlens::service::{router, AppState};

struct Api {
    app: Router,
    _dir: tempfile::TempDir,
    manifest: PathBuf,
}

impl Api {
    fn new(per_class: &[usize], time_steps: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (ds, att) = common::synthetic(5, per_class, time_steps);
        let manifest = write_bundle(&dir.path().join("b"), &ds, &att).unwrap();
        Self { app: router(Arc::new(AppState::default())), _dir: dir, manifest }
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
        let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    async fn create(&self, manifest: &Path, params: Option<Value>) -> (String, u64) {
        let mut body = json!({ "manifest_path": manifest });
        if let Some(p) = params {
            body["params"] = p;
        }
        let (status, v) = self.call(Method::POST, "/sessions", Some(body)).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        (v["session_id"].as_str().unwrap().to_string(), v["job_id"].as_u64().unwrap())
    }

    async fn wait(&self, session: &str, job: u64) -> Value {
        let (status, v) = self.get(&format!("/sessions/{session}/jobs/{job}?wait=60")).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        v
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn session_lifecycle_and_payloads() {
    let api = Api::new(&[24, 30], 10);
    let (s, job) = api.create(&api.manifest, Some(json!({ "seed": 3 }))).await;
    let report = api.wait(&s, job).await;
    assert_eq!(report["status"]["state"], "idle");

    let (status, dash) = api.get(&format!("/sessions/{s}/dashboard")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(dash["class_sizes"], json!([24, 30]));
    assert_eq!(dash["attributes"]["cohort"]["x"], json!([12, 15]));
    assert_eq!(dash["embedding"].as_array().unwrap().len(), 54);
    assert_eq!(dash["ranking"].as_array().unwrap().len(), 2);
    assert_eq!(dash["params"]["seed"], 3);

    let (status, hist) = api.get(&format!("/sessions/{s}/attention-distribution?mode=percentile")).await;
    assert_eq!(status, StatusCode::OK, "{hist}");

    let (status, sum) = api.get(&format!("/sessions/{s}/summary/0?t0=2&t1=6")).await;
    assert_eq!(status, StatusCode::OK, "{sum}");
    assert_eq!(sum["comparison"]["time_range"], json!([2, 6]));
    assert_eq!(sum["payload_version"], "1");
    assert_eq!(sum["noise"].as_array().unwrap().len(), 2);

    // identical requests give identical payloads
    let (_, again) = api.get(&format!("/sessions/{s}/summary/0?t0=2&t1=6")).await;
    assert_eq!(sum, again);
    let (_, e1) = api.get(&format!("/sessions/{s}/export")).await;
    let (_, e2) = api.get(&format!("/sessions/{s}/export")).await;
    assert_eq!(e1, e2);
    assert_eq!(e1["features"].as_array().unwrap().len(), 2);

    let (status, err) = api.get(&format!("/sessions/{s}/summary/9")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "unknown_feature");

    let (status, _) = api.get(&format!("/sessions/{s}/jobs/999")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = api.get("/sessions/nope/ranking").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn cluster_count_patch_rebuilds_only_downstream() {
    let api = Api::new(&[24, 30], 10);
    let (s, job) = api.create(&api.manifest, None).await;
    let first = api.wait(&s, job).await;
    assert_eq!(first["builds"], json!({ "filter": 1, "sample": 1, "denoise": 1, "cut": 1, "summarize": 1 }));

    let (status, acc) = api.call(Method::PATCH, &format!("/sessions/{s}/params"), Some(json!({ "cluster_count": 2 }))).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{acc}");
    assert_eq!(acc["params"]["cluster_count"], 2);
    let second = api.wait(&s, acc["job_id"].as_u64().unwrap()).await;
    assert_eq!(second["status"]["state"], "idle");
    assert_eq!(second["builds"], json!({ "filter": 1, "sample": 1, "denoise": 1, "cut": 2, "summarize": 2 }));

    let (_, sum) = api.get(&format!("/sessions/{s}/summary/1")).await;
    for side in ["class_a", "class_b"] {
        assert!(sum["comparison"][side]["clusters"].as_array().unwrap().len() <= 2);
    }
    let (_, p) = api.get(&format!("/sessions/{s}/params")).await;
    assert_eq!(p["cluster_count"], 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn invalid_patches_are_rejected_without_a_job() {
    let api = Api::new(&[12, 12], 6);
    let (s, job) = api.create(&api.manifest, None).await;
    api.wait(&s, job).await;
    for bad in [json!({ "sample_fraction": 0.0 }), json!({ "aoi": [[0.1, 0.5], [0.4, 0.9]] }), json!({ "no_such": 1 })] {
        let (status, v) = api.call(Method::PATCH, &format!("/sessions/{s}/params"), Some(bad.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad} -> {v}");
        if bad.get("aoi").is_some() {
            assert!(v["message"].as_str().unwrap().contains("overlap"), "{v}");
        }
    }
    // the finished result is still served
    let (status, _) = api.get(&format!("/sessions/{s}/export")).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread")]
async fn new_parameters_cancel_the_running_job() {
    let api = Api::new(&[400, 400], 48);
    let (s, first) = api.create(&api.manifest, None).await;

    let (status, v) = api.get(&format!("/sessions/{s}/export")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "not_ready");
    assert!(["filter", "sample", "denoise", "cut", "summarize"].contains(&v["stage"].as_str().unwrap()), "{v}");

    let (_, acc) = api.call(Method::PATCH, &format!("/sessions/{s}/params"), Some(json!({ "seed": 9 }))).await;
    let second = acc["job_id"].as_u64().unwrap();
    assert_eq!(api.wait(&s, first).await["status"]["state"], "cancelled");
    assert_eq!(api.wait(&s, second).await["status"]["state"], "idle");
    let (_, export) = api.get(&format!("/sessions/{s}/export")).await;
    assert_eq!(export["params"]["seed"], 9);
}

#[tokio::test(flavor = "multi_thread")]
async fn failed_job_reports_reason() {
    let api = Api::new(&[12, 12], 6);
    let (s, job) = api.create(&api.manifest, Some(json!({ "attention_level": "feature" }))).await;
    let report = api.wait(&s, job).await;
    assert_eq!(report["status"]["state"], "failed");
    let (status, v) = api.get(&format!("/sessions/{s}/summary/0")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(v["stage"].as_str().unwrap().starts_with("failed"), "{v}");
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_are_independent() {
    let api = Api::new(&[12, 14], 6);
    let (a, ja) = api.create(&api.manifest, Some(json!({ "seed": 1 }))).await;
    let (b, jb) = api.create(&api.manifest, Some(json!({ "seed": 2, "cluster_count": 1 }))).await;
    assert_ne!(a, b);
    api.wait(&a, ja).await;
    api.wait(&b, jb).await;
    let (_, pa) = api.get(&format!("/sessions/{a}/params")).await;
    let (_, pb) = api.get(&format!("/sessions/{b}/params")).await;
    assert_eq!((pa["seed"].as_u64(), pb["seed"].as_u64()), (Some(1), Some(2)));
    let (_, sb) = api.get(&format!("/sessions/{b}/summary/0")).await;
    assert_eq!(sb["comparison"]["class_a"]["clusters"].as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn missing_attention_file_is_named() {
    let api = Api::new(&[6, 6], 4);
    std::fs::remove_file(api.manifest.parent().unwrap().join("attention.csv")).unwrap();
    let (status, v) =
        api.call(Method::POST, "/sessions", Some(json!({ "manifest_path": api.manifest }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "missing_file");
    assert!(v["message"].as_str().unwrap().contains("attention.csv"), "{v}");
}
