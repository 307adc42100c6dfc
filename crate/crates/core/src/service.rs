//! HTTP API over an artifact store.
//!
//! Reads go against an immutable snapshot of one revision; contestations are
//! serialised by the store lock and publish a new snapshot when they land.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{info, warn};

use crate::contest::{CaseInput, ContestEdit, ContestError, LogEntry};
use crate::eval::{evaluate_run, infer_dataset, EvalError, Gains, LabelledDataset};
use crate::llm::Generator;
use crate::ontology::EntityId;
use crate::pipeline::PipelineError;
use crate::qbaf::Semantics;
use crate::store::{ArtifactStore, Snapshot, StoreError};

pub struct ServiceState {
    store: Mutex<ArtifactStore>,
    current: RwLock<Arc<Snapshot>>,
    generator: Option<Generator>,
    semantics: Semantics,
    /// Relative dataset paths in `/evaluate` resolve against this directory.
    dataset_root: Option<PathBuf>,
}

impl ServiceState {
    pub fn new(store: ArtifactStore, generator: Option<Generator>, dataset_root: Option<PathBuf>) -> Arc<Self> {
        let current = RwLock::new(store.snapshot());
        Arc::new(ServiceState {
            store: Mutex::new(store),
            current,
            generator,
            semantics: Semantics::default(),
            dataset_root,
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.current.read().unwrap_or_else(|e| e.into_inner()))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    details: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, kind, message: message.into(), details: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({"kind": self.kind, "message": self.message});
        if let Some(d) = self.details {
            error["details"] = Value::String(d);
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

impl From<ContestError> for ApiError {
    fn from(e: ContestError) -> Self {
        match e {
            ContestError::Rejected(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "rejected", m),
            ContestError::NotFound(m) => ApiError::new(StatusCode::NOT_FOUND, "not_found", m),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Contest(c) => c.into(),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store", other.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Invalid(m) => ApiError::new(StatusCode::BAD_REQUEST, "invalid", m),
            PipelineError::NoFrameworks => ApiError::new(StatusCode::CONFLICT, "no_frameworks", e.to_string()),
            PipelineError::Extraction { ref last_output, .. } => ApiError {
                details: Some(last_output.clone()),
                ..ApiError::new(StatusCode::BAD_GATEWAY, "extraction", e.to_string())
            },
            PipelineError::Llm(_) => ApiError::new(StatusCode::BAD_GATEWAY, "llm", e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "pipeline", other.to_string()),
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Domain(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "domain", m),
            EvalError::Dataset { .. } => ApiError::new(StatusCode::BAD_REQUEST, "dataset", e.to_string()),
        }
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/artifacts/revision", get(revision))
        .route("/ontology", get(ontology))
        .route("/qbafs", get(qbafs))
        .route("/qbafs/{option}", get(qbaf))
        .route("/schema", get(schema))
        .route("/infer", post(infer))
        .route("/contest", post(contest))
        .route("/contest/log", get(contest_log))
        .route("/contest/replay", post(replay))
        .route("/evaluate", post(evaluate))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Arc<ServiceState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

async fn revision(State(state): State<Arc<ServiceState>>) -> ApiResult {
    let snap = state.snapshot();
    let base = state.store.lock().unwrap_or_else(|e| e.into_inner()).base_revision();
    Ok(Json(json!({"revision": snap.revision, "base_revision": base})))
}

async fn ontology(State(state): State<Arc<ServiceState>>) -> ApiResult {
    let snap = state.snapshot();
    Ok(Json(json!({"revision": snap.revision, "ontology": snap.artifacts.ontology})))
}

async fn qbafs(State(state): State<Arc<ServiceState>>) -> ApiResult {
    let snap = state.snapshot();
    Ok(Json(json!({"revision": snap.revision, "qbafs": snap.artifacts.generals()})))
}

async fn qbaf(State(state): State<Arc<ServiceState>>, Path(option): Path<String>) -> ApiResult {
    let snap = state.snapshot();
    let general = snap
        .artifacts
        .generals
        .get(&EntityId::new(option.clone()))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("framework for {option}")))?;
    Ok(Json(json!({"revision": snap.revision, "qbaf": general})))
}

async fn schema(State(state): State<Arc<ServiceState>>) -> ApiResult {
    let snap = state.snapshot();
    Ok(Json(json!({
        "revision": snap.revision,
        "schema": snap.artifacts.schema,
        "case_overrides": snap.artifacts.case_overrides,
    })))
}

async fn infer(State(state): State<Arc<ServiceState>>, Json(input): Json<CaseInput>) -> ApiResult {
    let snap = state.snapshot();
    blocking(move || {
        let inference = snap.artifacts.infer(state.generator.as_ref(), &input, state.semantics)?;
        Ok(Json(json!({
            "revision": snap.revision,
            "params": inference.params,
            "results": inference.ranked(),
            "failures": inference.failures,
        })))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ContestRequest {
    pub edit: ContestEdit,
    pub justification: String,
}

async fn contest(State(state): State<Arc<ServiceState>>, Json(req): Json<ContestRequest>) -> ApiResult {
    blocking(move || {
        let mut store = state.store.lock().unwrap_or_else(|e| e.into_inner());
        let entry: LogEntry =
            store.apply(req.edit, &req.justification).inspect_err(|e| warn!("contestation refused: {e}"))?;
        *state.current.write().unwrap_or_else(|e| e.into_inner()) = store.snapshot();
        Ok(Json(json!({"revision": entry.revision, "entry": entry})))
    })
    .await
}

async fn contest_log(State(state): State<Arc<ServiceState>>) -> ApiResult {
    let store = state.store.lock().unwrap_or_else(|e| e.into_inner());
    Ok(Json(json!({
        "revision": store.revision(),
        "base_revision": store.base_revision(),
        "entries": store.log(),
    })))
}

#[derive(Debug, Deserialize)]
struct ReplayRequest {
    to_revision: u64,
}

async fn replay(State(state): State<Arc<ServiceState>>, Json(req): Json<ReplayRequest>) -> ApiResult {
    blocking(move || {
        let snap = state.store.lock().unwrap_or_else(|e| e.into_inner()).replay_to(req.to_revision)?;
        Ok(Json(json!({
            "revision": snap.revision,
            "ontology": snap.artifacts.ontology,
            "schema": snap.artifacts.schema,
            "qbafs": snap.artifacts.generals(),
            "case_overrides": snap.artifacts.case_overrides,
        })))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct EvaluateRequest {
    dataset: PathBuf,
    #[serde(default)]
    gains: Gains,
}

async fn evaluate(State(state): State<Arc<ServiceState>>, Json(req): Json<EvaluateRequest>) -> ApiResult {
    let snap = state.snapshot();
    blocking(move || {
        let dir = match &state.dataset_root {
            Some(root) if req.dataset.is_relative() => root.join(&req.dataset),
            _ => req.dataset.clone(),
        };
        let dataset = LabelledDataset::load(&dir)?;
        let results = infer_dataset(state.generator.as_ref(), &snap.artifacts, &dataset, state.semantics)?;
        let usage = state.generator.as_ref().map(|g| g.usage_report(true));
        let report = evaluate_run(&results, &dataset, &req.gains, usage)?;
        Ok(Json(json!({"revision": snap.revision, "report": report})))
    })
    .await
}
