//! Local JSON-over-HTTP service around [`racemag_core::Session`] and the
//! experiment harness.
//!
//! Sessions are driven by the same command engine as the terminal console, so
//! `POST /sessions/{id}/command` returns exactly what the REPL would print.
//! Commands on one session are serialized by a per-session mutex; experiments
//! run on the blocking pool and are polled.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use racemag_core::harness::{run_sweep, summaries_to_csv};
use racemag_core::{ExperimentConfig, ExperimentSummary, FeeSchedule, OrderingPolicy, Session};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

type SessionHandle = Arc<Mutex<Session>>;

#[derive(Debug, Clone)]
enum Experiment {
    Running,
    Done { summaries: Vec<ExperimentSummary>, single: bool },
    Failed(String),
}

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, SessionHandle>>,
    experiments: RwLock<HashMap<String, Experiment>>,
}

impl AppState {
    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session with id {id}")))
    }
}

/// Error response: `{"error": text}` with a 4xx status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> ApiError {
        ApiError { status: StatusCode::NOT_FOUND, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &str) -> ApiResult<T> {
    serde_json::from_str(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

/// Accepts either an embedded JSON document or a string holding one.
fn as_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct NewSession {
    /// Assembly source; the bundled deposit pool when absent.
    contract: Option<String>,
    state: Option<Value>,
    queue: Option<Value>,
    fees: Option<Value>,
    #[serde(default)]
    seed: u64,
}

async fn create_session(State(app): State<Arc<AppState>>, body: String) -> ApiResult<impl IntoResponse> {
    let req: NewSession = if body.trim().is_empty() { NewSession::default() } else { parse_body(&body)? };
    let fees = match &req.fees {
        None => FeeSchedule::default(),
        Some(v) => {
            FeeSchedule::from_json(&as_text(v)).map_err(|e| ApiError::bad_request(format!("fees: {e}")))?
        }
    };
    let state = req.state.as_ref().map(as_text);
    let queue = req.queue.as_ref().map(as_text);
    let session =
        Session::from_sources(req.contract.as_deref(), state.as_deref(), queue.as_deref(), fees, req.seed)
            .map_err(|e| ApiError::bad_request(e.0))?;
    let id = uuid::Uuid::new_v4().to_string();
    app.sessions.write().unwrap().insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

async fn session_state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = app.session(&id)?;
    let s = s.lock().unwrap();
    Ok(Json(s.state_json()))
}

async fn session_queue(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = app.session(&id)?;
    let s = s.lock().unwrap();
    Ok(Json(json!({ "queue": s.queue_json(), "text": s.queue_text() })))
}

async fn session_log(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = app.session(&id)?;
    let s = s.lock().unwrap();
    Ok(Json(s.log_json()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandRequest {
    line: String,
}

async fn session_command(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: String,
) -> ApiResult<Json<Value>> {
    let req: CommandRequest = parse_body(&body)?;
    let handle = app.session(&id)?;
    let out = handle.lock().unwrap().execute(&req.line);
    if out.exit {
        app.sessions.write().unwrap().remove(&id);
    }
    Ok(Json(json!({ "output": out.text, "error": out.error, "exit": out.exit })))
}

async fn session_order(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: String,
) -> ApiResult<Json<Value>> {
    let handle = app.session(&id)?;
    let policy = OrderingPolicy::from_json(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut s = handle.lock().unwrap();
    s.reorder(&policy).map_err(ApiError::bad_request)?;
    Ok(Json(json!({ "queue": s.queue_json(), "text": s.queue_text() })))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    match app.sessions.write().unwrap().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(format!("no session with id {id}"))),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ExperimentRequest {
    Sweep { configs: Vec<Value> },
    Single(serde_json::Map<String, Value>),
}

async fn create_experiment(State(app): State<Arc<AppState>>, body: String) -> ApiResult<impl IntoResponse> {
    let (raw, single) = match parse_body(&body)? {
        ExperimentRequest::Sweep { configs } => (configs, false),
        ExperimentRequest::Single(v) => (vec![Value::Object(v)], true),
    };
    if raw.is_empty() {
        return Err(ApiError::bad_request("invalid experiment config: no configs given"));
    }
    let mut configs = Vec::with_capacity(raw.len());
    for v in &raw {
        let c =
            ExperimentConfig::from_json(&v.to_string()).map_err(|e| ApiError::bad_request(e.to_string()))?;
        c.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
        configs.push(c);
    }

    let id = uuid::Uuid::new_v4().to_string();
    app.experiments.write().unwrap().insert(id.clone(), Experiment::Running);
    let worker = app.clone();
    let key = id.clone();
    tokio::task::spawn_blocking(move || {
        let result = match run_sweep(&configs, true) {
            Ok(summaries) => Experiment::Done { summaries, single },
            Err(e) => Experiment::Failed(e.to_string()),
        };
        worker.experiments.write().unwrap().insert(key, result);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "experiment_id": id, "status": "running" }))))
}

fn experiment(app: &AppState, id: &str) -> ApiResult<Experiment> {
    app.experiments
        .read()
        .unwrap()
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no experiment with id {id}")))
}

async fn poll_experiment(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(match experiment(&app, &id)? {
        Experiment::Running => json!({ "experiment_id": id, "status": "running" }),
        Experiment::Failed(e) => json!({ "experiment_id": id, "status": "failed", "error": e }),
        Experiment::Done { summaries, single } => {
            let summary = if single { json!(summaries[0]) } else { json!(summaries) };
            json!({
                "experiment_id": id,
                "status": "done",
                "summary": summary,
                "csv": summaries_to_csv(&summaries),
            })
        }
    }))
}

async fn experiment_csv(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    match experiment(&app, &id)? {
        Experiment::Done { summaries, .. } => {
            Ok(([(header::CONTENT_TYPE, "text/csv")], summaries_to_csv(&summaries)).into_response())
        }
        Experiment::Running => {
            Err(ApiError { status: StatusCode::CONFLICT, message: "experiment still running".into() })
        }
        Experiment::Failed(e) => Err(ApiError { status: StatusCode::CONFLICT, message: e }),
    }
}

/// Builds the router. `static_dir`, when given, is served at `/`.
pub fn router(app: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/state", get(session_state))
        .route("/sessions/{id}/queue", get(session_queue))
        .route("/sessions/{id}/log", get(session_log))
        .route("/sessions/{id}/command", post(session_command))
        .route("/sessions/{id}/queue/order", post(session_order))
        .route("/experiments", post(create_experiment))
        .route("/experiments/{id}", get(poll_experiment))
        .route("/experiments/{id}/csv", get(experiment_csv))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::not_found("no such endpoint") }),
    }
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, static_dir).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(AppState::default()), static_dir)).await
}
