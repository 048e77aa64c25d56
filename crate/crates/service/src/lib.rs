//! Annotation service: serves anonymized benchmark cases, stores human
//! judgements and recomputes the metrics report on request.
//!
//! Routes:
//! - `GET /api/cases` (optional `?annotator=ID` marks cases already judged)
//! - `GET /api/cases/{id}`
//! - `POST /api/annotations`
//! - `GET /api/metrics`
//! - static assets at `/`

pub mod cases;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use orca_core::agent::{EpisodeTrace, Policy};
use orca_core::bench::{group_cases, load_traces, write_report, AnnotationRecord, ReportError, ReportOptions};
use rand::Rng;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use cases::{AnonymousCase, CaseBundle, CaseSummary};
use store::{AnnotationStore, StoreError};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const SALT_FILE: &str = "salt";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Holds the annotation log and the label salt.
    pub data_dir: PathBuf,
    pub traces_dir: PathBuf,
    /// Defaults to `data_dir/static`.
    pub static_dir: Option<PathBuf>,
    /// Overrides the salt stored in the data directory.
    pub salt: Option<String>,
    pub pps_surrogate: bool,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>, traces_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            traces_dir: traces_dir.into(),
            static_dir: None,
            salt: None,
            pps_surrogate: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("traces: {0}")]
    Traces(#[from] ReportError),
    #[error("annotation store: {0}")]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct AppState {
    traces: Vec<EpisodeTrace>,
    cases: BTreeMap<String, AnonymousCase>,
    store: Mutex<AnnotationStore>,
    report: ReportOptions,
    static_dir: PathBuf,
}

impl AppState {
    /// Loads traces, groups them into cases and replays the annotation log.
    /// A missing trace directory yields an empty case list.
    pub fn load(config: &ServiceConfig) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(&config.data_dir)?;
        let salt = match &config.salt {
            Some(s) => s.clone(),
            None => load_or_create_salt(&config.data_dir)?,
        };
        let traces = if config.traces_dir.exists() { load_traces(&config.traces_dir)? } else { Vec::new() };
        let cases = group_cases(&traces)?
            .into_iter()
            .map(|c| (c.id.clone(), AnonymousCase::new(c, &salt)))
            .collect();
        let store = AnnotationStore::open(config.data_dir.join(ANNOTATIONS_FILE))?;
        Ok(AppState {
            traces,
            cases,
            store: Mutex::new(store),
            report: ReportOptions { pps_surrogate: config.pps_surrogate },
            static_dir: config.static_dir.clone().unwrap_or_else(|| config.data_dir.join("static")),
        })
    }

    pub fn case_count(&self) -> usize {
        self.cases.len()
    }

    /// Current latest-wins records, policies resolved.
    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.lock_store().records()
    }

    fn lock_store(&self) -> std::sync::MutexGuard<'_, AnnotationStore> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

fn load_or_create_salt(dir: &Path) -> std::io::Result<String> {
    let path = dir.join(SALT_FILE);
    match std::fs::read_to_string(&path) {
        Ok(s) if !s.trim().is_empty() => return Ok(s.trim().to_string()),
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(e),
    }
    let bytes: [u8; 16] = rand::rng().random();
    let salt: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
    std::fs::write(&path, &salt)?;
    Ok(salt)
}

/// Error body: `{"error": kind, "detail": message}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    detail: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, detail: impl Into<String>) -> Self {
        ApiError { status, kind, detail: detail.into() }
    }

    fn validation(detail: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", detail)
    }

    fn internal(detail: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail)
    }
}

#[derive(Serialize, Deserialize)]
struct ErrorBody {
    error: String,
    detail: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.kind.to_string(), detail: self.detail })).into_response()
    }
}

/// What the annotation form posts. Labels are the anonymous letters shown
/// for the case.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub annotator_id: String,
    pub case_id: String,
    pub pps: BTreeMap<String, u8>,
    #[serde(default)]
    pub checkmarks: BTreeMap<String, Vec<String>>,
    pub best: String,
    pub worst: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub case_id: String,
    /// Distinct (annotator, case) records held after this submission.
    pub stored: usize,
    /// True when this replaced the annotator's earlier record for the case.
    pub replaced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseIndex {
    pub cases: Vec<CaseListing>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseListing {
    #[serde(flatten)]
    pub summary: CaseSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotated: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    annotator: Option<String>,
}

pub fn router(state: Arc<AppState>) -> Router {
    let assets = ServeDir::new(&state.static_dir);
    Router::new()
        .route("/api/cases", get(list_cases))
        .route("/api/cases/{id}", get(get_case))
        .route("/api/annotations", post(submit_annotation))
        .route("/api/metrics", get(get_metrics))
        .fallback_service(assets)
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

async fn list_cases(State(state): State<Arc<AppState>>, Query(q): Query<ListQuery>) -> Json<CaseIndex> {
    let done: Option<BTreeSet<String>> =
        q.annotator.map(|a| state.lock_store().annotated_by(&a).map(str::to_string).collect());
    let cases = state
        .cases
        .values()
        .map(|c| CaseListing { summary: c.summary(), annotated: done.as_ref().map(|d| d.contains(&c.case.id)) })
        .collect();
    Json(CaseIndex { cases })
}

async fn get_case(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<CaseBundle>, ApiError> {
    state
        .cases
        .get(&id)
        .map(|c| Json(c.bundle()))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown case `{id}`")))
}

/// Resolves labels to policies and checks the record against its case.
fn resolve(state: &AppState, s: Submission, timestamp: u64) -> Result<AnnotationRecord, ApiError> {
    let case = state
        .cases
        .get(&s.case_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_case", format!("unknown case `{}`", s.case_id)))?;
    let label = |l: &str| -> Result<Policy, ApiError> {
        case.policy(l).ok_or_else(|| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_label", format!("case {} has no label `{l}`", case.case.id))
        })
    };
    let mut pps = BTreeMap::new();
    for (l, &score) in &s.pps {
        pps.insert(label(l)?, score);
    }
    let missing: Vec<&str> = case.labels.keys().filter(|l| !s.pps.contains_key(*l)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(ApiError::validation(format!("pps missing for {}", missing.join(", "))));
    }
    let subgoals: BTreeSet<&str> = case.case.subgoals.iter().map(|g| g.id.as_str()).collect();
    let mut checkmarks = BTreeMap::new();
    for (l, ids) in &s.checkmarks {
        let mut seen = BTreeSet::new();
        for id in ids {
            if !subgoals.contains(id.as_str()) {
                return Err(ApiError::validation(format!("`{id}` is not a subgoal of case {}", case.case.id)));
            }
            if !seen.insert(id.as_str()) {
                return Err(ApiError::validation(format!("`{id}` checked twice for {l}")));
            }
        }
        checkmarks.insert(label(l)?, ids.clone());
    }
    let record = AnnotationRecord {
        annotator_id: s.annotator_id.trim().to_string(),
        case_id: s.case_id.clone(),
        pps,
        checkmarks,
        best: label(&s.best)?,
        worst: label(&s.worst)?,
        timestamp,
    };
    if s.best == s.worst {
        return Err(ApiError::validation(format!("best and worst must differ, both are {}", s.best)));
    }
    record.validate(Some(subgoals.len())).map_err(ApiError::validation)?;
    Ok(record)
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or_default()
}

async fn submit_annotation(
    State(state): State<Arc<AppState>>,
    body: Result<Json<Submission>, JsonRejection>,
) -> Result<Json<Ack>, ApiError> {
    let Json(submission) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    let record = resolve(&state, submission, now_ms())?;
    // The store's lock makes this the single writer; the ack goes out only
    // after the line is synced.
    tokio::task::spawn_blocking(move || {
        let mut store = state.lock_store();
        let before = store.len();
        let case_id = record.case_id.clone();
        store.append(record).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Json(Ack { case_id, stored: store.len(), replaced: store.len() == before }))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn get_metrics(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    if state.traces.is_empty() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "no_traces", "no traces are loaded, so there is nothing to report"));
    }
    tokio::task::spawn_blocking(move || {
        let records = state.records();
        let report = write_report(&state.traces, &records, state.report).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(([(header::CONTENT_TYPE, "application/json")], report.to_json()).into_response())
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}
