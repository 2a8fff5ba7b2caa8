//! HTTP sessions over the pipeline.
//!
//! Every parameter update starts a new job and cancels the one in flight, so
//! the latest request wins. A session only serves results computed for its
//! current parameters; while a job runs, reads report the stage in progress.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Notify;

use crate::attribution::{attention_distribution, default_percentiles, AttentionDistribution, FeatureScore};
use crate::cancel::CancelToken;
use crate::error::Error;
use crate::ingest::load_bundle;
use crate::model::{AnalysisParams, AttentionMode, AttentionRange};
use crate::pipeline::{AnalysisResult, BuildCounts, Cache, Pipeline, Stage, SummaryPayload, PAYLOAD_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobStatus {
    Idle,
    Running { stage: Stage },
    Cancelled,
    Failed { reason: String },
}

impl JobStatus {
    fn is_terminal(&self) -> bool {
        !matches!(self, JobStatus::Running { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub job_id: u64,
    pub status: JobStatus,
    pub builds: BuildCounts,
}

struct SessionState {
    params: AnalysisParams,
    cache: Cache,
    /// Result for `params`, present only once the current job has finished.
    result: Option<Arc<AnalysisResult>>,
    current_job: u64,
    cancel: CancelToken,
    jobs: BTreeMap<u64, JobStatus>,
}

pub struct Session {
    pipeline: Pipeline,
    state: Mutex<SessionState>,
    changed: Notify,
}

impl Session {
    fn lock(&self) -> std::sync::MutexGuard<'_, SessionState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn report(&self, job: u64) -> Option<JobReport> {
        let st = self.lock();
        st.jobs.get(&job).map(|s| JobReport { job_id: job, status: s.clone(), builds: st.cache.builds })
    }

    /// Cancels the job in flight and starts one for `params`.
    fn start(self: &Arc<Self>, params: AnalysisParams) -> u64 {
        let (job, cache, cancel) = {
            let mut st = self.lock();
            st.cancel.cancel();
            let prev = st.current_job;
            if let Some(s) = st.jobs.get_mut(&prev) {
                if !s.is_terminal() {
                    *s = JobStatus::Cancelled;
                }
            }
            st.current_job += 1;
            let job = st.current_job;
            st.cancel = CancelToken::new();
            st.params = params;
            st.result = None;
            st.jobs.insert(job, JobStatus::Running { stage: Stage::Filter });
            (job, st.cache.clone(), st.cancel.clone())
        };
        self.changed.notify_waiters();

        let session = Arc::clone(self);
        tokio::task::spawn_blocking(move || {
            let params = session.lock().params.clone();
            let on_stage = |stage: Stage| {
                let mut st = session.lock();
                if st.current_job == job {
                    st.jobs.insert(job, JobStatus::Running { stage });
                }
                drop(st);
                session.changed.notify_waiters();
            };
            let outcome = session.pipeline.run(&cache, &params, &cancel, &on_stage);
            let mut st = session.lock();
            let status = match outcome {
                Ok((cache, result)) if st.current_job == job => {
                    st.cache = cache;
                    st.result = Some(Arc::new(result));
                    JobStatus::Idle
                }
                Ok(_) | Err(Error::Cancelled) => JobStatus::Cancelled,
                Err(e) => {
                    tracing::warn!(job, error = %e, "pipeline job failed");
                    JobStatus::Failed { reason: e.to_string() }
                }
            };
            st.jobs.insert(job, status);
            drop(st);
            session.changed.notify_waiters();
        });
        job
    }

    /// The finished result for the current parameters, or the stage still running.
    fn ready(&self) -> Result<Arc<AnalysisResult>, Error> {
        let st = self.lock();
        if let Some(r) = &st.result {
            return Ok(Arc::clone(r));
        }
        Err(match st.jobs.get(&st.current_job) {
            Some(JobStatus::Running { stage }) => Error::NotReady(stage.name().into()),
            Some(JobStatus::Failed { reason }) => Error::NotReady(format!("failed: {reason}")),
            _ => Error::NotReady("cancelled".into()),
        })
    }
}

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl AppState {
    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let map = self.sessions.read().unwrap_or_else(|e| e.into_inner());
        map.get(id).cloned().ok_or_else(|| Error::UnknownSession(id.into()).into())
    }
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = self.0;
        let (status, kind) = match &e {
            Error::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            Error::UnknownFeature(_) => (StatusCode::NOT_FOUND, "unknown_feature"),
            Error::UnknownJob(_) => (StatusCode::NOT_FOUND, "unknown_job"),
            Error::NotReady(_) => (StatusCode::CONFLICT, "not_ready"),
            Error::InvalidParams(_) | Error::Json(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_params"),
            Error::MissingFile(_) => (StatusCode::BAD_REQUEST, "missing_file"),
            Error::Parse { .. } => (StatusCode::BAD_REQUEST, "parse"),
            Error::SchemaMismatch { .. } => (StatusCode::BAD_REQUEST, "schema_mismatch"),
            Error::ValueOutOfRange { .. } => (StatusCode::BAD_REQUEST, "value_out_of_range"),
            Error::VersionUnsupported { .. } => (StatusCode::BAD_REQUEST, "version_unsupported"),
            Error::InvalidDataset(_) => (StatusCode::BAD_REQUEST, "invalid_dataset"),
            Error::FeatureAttentionMissing => (StatusCode::UNPROCESSABLE_ENTITY, "feature_attention_missing"),
            Error::FeatureMismatch(..) => (StatusCode::UNPROCESSABLE_ENTITY, "feature_mismatch"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let mut body = serde_json::json!({ "error": kind, "message": e.to_string() });
        if let Error::NotReady(stage) = &e {
            body["stage"] = Value::String(stage.clone());
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/dashboard", get(dashboard))
        .route("/sessions/{id}/ranking", get(ranking))
        .route("/sessions/{id}/attention-distribution", get(attention))
        .route("/sessions/{id}/params", patch(update_params).get(get_params))
        .route("/sessions/{id}/summary/{feature}", get(summary))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/jobs/{job}", get(job_status))
        .with_state(state)
}

pub async fn serve(addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(Arc::new(AppState::default()))).await
}

#[derive(Deserialize)]
struct CreateSession {
    manifest_path: PathBuf,
    #[serde(default)]
    params: Option<Value>,
}

#[derive(Serialize)]
struct Created {
    session_id: String,
    job_id: u64,
}

async fn create_session(State(app): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> ApiResult<(StatusCode, Json<Created>)> {
    let path = req.manifest_path.clone();
    let (dataset, attention) = tokio::task::spawn_blocking(move || load_bundle(&path))
        .await
        .map_err(|e| Error::InvalidParams(e.to_string()))??;
    let params = match req.params {
        Some(p) => merge_params(&AnalysisParams::default(), p)?,
        None => AnalysisParams::default(),
    };
    let session = Arc::new(Session {
        pipeline: Pipeline::new(dataset, attention),
        state: Mutex::new(SessionState {
            params: params.clone(),
            cache: Cache::default(),
            result: None,
            current_job: 0,
            cancel: CancelToken::new(),
            jobs: BTreeMap::new(),
        }),
        changed: Notify::new(),
    });
    let n = app.next_id.fetch_add(1, Ordering::Relaxed);
    let session_id = format!("s{n}");
    app.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(session_id.clone(), Arc::clone(&session));
    let job_id = session.start(params);
    Ok((StatusCode::CREATED, Json(Created { session_id, job_id })))
}

/// Applies a JSON merge patch to `base` and validates the result.
pub fn merge_params(base: &AnalysisParams, patch: Value) -> Result<AnalysisParams, Error> {
    let Value::Object(fields) = patch else {
        return Err(Error::InvalidParams("patch must be an object".into()));
    };
    let mut merged = serde_json::to_value(base)?;
    for (k, v) in fields {
        if merged.get(&k).is_none() {
            return Err(Error::InvalidParams(format!("unknown parameter {k:?}")));
        }
        merged[&k] = v;
    }
    let params: AnalysisParams = serde_json::from_value(merged).map_err(|e| Error::InvalidParams(e.to_string()))?;
    params.validate()?;
    Ok(params)
}

#[derive(Serialize)]
struct Dashboard {
    payload_version: &'static str,
    params: AnalysisParams,
    time_steps: usize,
    class_sizes: Vec<usize>,
    features: Vec<crate::model::FeatureSpec>,
    /// attribute -> value -> per-class counts
    attributes: BTreeMap<String, BTreeMap<String, Vec<usize>>>,
    attention: AttentionDistribution,
    embedding: Option<Vec<EmbeddedPoint>>,
    /// Ranking on unfiltered data.
    ranking: Vec<FeatureScore>,
}

#[derive(Serialize)]
struct EmbeddedPoint {
    id: String,
    label: usize,
    x: f64,
    y: f64,
}

async fn dashboard(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Dashboard>> {
    let s = app.session(&id)?;
    let params = s.lock().params.clone();
    let ds = &s.pipeline.dataset;
    let mut attributes: BTreeMap<String, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
    for inst in &ds.instances {
        for (k, v) in &inst.attributes {
            let counts = attributes.entry(k.clone()).or_default().entry(v.clone()).or_insert_with(|| vec![0; ds.class_count]);
            counts[inst.label] += 1;
        }
    }
    let embedding = ds.has_embedding().then(|| {
        ds.instances
            .iter()
            .map(|i| {
                let [x, y] = i.embedding.unwrap_or_default();
                EmbeddedPoint { id: i.id.clone(), label: i.label, x, y }
            })
            .collect()
    });
    let full = AnalysisParams { aoi: vec![AttentionRange::FULL], ..params.clone() };
    Ok(Json(Dashboard {
        payload_version: PAYLOAD_VERSION,
        time_steps: ds.time_steps,
        class_sizes: s.pipeline.class_members().iter().map(Vec::len).collect(),
        features: ds.features.clone(),
        attributes,
        attention: attention_distribution(&s.pipeline.attention, params.attention_mode, &default_percentiles()),
        embedding,
        ranking: s.pipeline.rank(&full)?,
        params,
    }))
}

#[derive(Serialize)]
struct Ranking {
    payload_version: &'static str,
    params: AnalysisParams,
    ranking: Vec<FeatureScore>,
}

async fn ranking(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Ranking>> {
    let s = app.session(&id)?;
    let params = s.lock().params.clone();
    let ranking = s.pipeline.rank(&params)?;
    Ok(Json(Ranking { payload_version: PAYLOAD_VERSION, params, ranking }))
}

#[derive(Deserialize)]
struct ModeQuery {
    mode: Option<AttentionMode>,
}

async fn attention(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ModeQuery>,
) -> ApiResult<Json<AttentionDistribution>> {
    let s = app.session(&id)?;
    let mode = q.mode.unwrap_or_else(|| s.lock().params.attention_mode);
    Ok(Json(attention_distribution(&s.pipeline.attention, mode, &default_percentiles())))
}

async fn get_params(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<AnalysisParams>> {
    Ok(Json(app.session(&id)?.lock().params.clone()))
}

#[derive(Serialize)]
struct Accepted {
    job_id: u64,
    params: AnalysisParams,
}

async fn update_params(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(patch): Json<Value>,
) -> ApiResult<(StatusCode, Json<Accepted>)> {
    let s = app.session(&id)?;
    let current = s.lock().params.clone();
    let params = merge_params(&current, patch)?;
    let job_id = s.start(params.clone());
    Ok((StatusCode::ACCEPTED, Json(Accepted { job_id, params })))
}

#[derive(Deserialize)]
struct SummaryQuery {
    t0: Option<usize>,
    t1: Option<usize>,
    class_a: Option<usize>,
    class_b: Option<usize>,
}

async fn summary(
    State(app): State<Arc<AppState>>,
    Path((id, feature)): Path<(String, usize)>,
    Query(q): Query<SummaryQuery>,
) -> ApiResult<Json<SummaryPayload>> {
    let s = app.session(&id)?;
    let ds = &s.pipeline.dataset;
    if feature >= ds.feature_count() {
        return Err(Error::UnknownFeature(feature).into());
    }
    let focus = match (q.t0, q.t1) {
        (None, None) => None,
        (a, b) => Some((a.unwrap_or(0), b.unwrap_or(ds.time_steps))),
    };
    let classes = Some((q.class_a.unwrap_or(0), q.class_b.unwrap_or(1)));
    let result = s.ready()?;
    Ok(Json(result.summary(feature, classes, focus)?))
}

async fn export(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<AnalysisResult>> {
    let result = app.session(&id)?.ready()?;
    Ok(Json((*result).clone()))
}

#[derive(Deserialize)]
struct WaitQuery {
    /// Seconds to wait for the job to finish.
    wait: Option<f64>,
}

async fn job_status(
    State(app): State<Arc<AppState>>,
    Path((id, job)): Path<(String, u64)>,
    Query(q): Query<WaitQuery>,
) -> ApiResult<Json<JobReport>> {
    let s = app.session(&id)?;
    let unknown = || ApiError(Error::UnknownJob(job));
    let deadline = tokio::time::Instant::now() + Duration::from_secs_f64(q.wait.unwrap_or(0.0).clamp(0.0, 600.0));
    loop {
        let notified = s.changed.notified();
        let report = s.report(job).ok_or_else(unknown)?;
        if report.status.is_terminal() || tokio::time::Instant::now() >= deadline {
            return Ok(Json(report));
        }
        let _ = tokio::time::timeout_at(deadline, notified).await;
    }
}
