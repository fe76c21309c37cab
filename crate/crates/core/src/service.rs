//! HTTP service over the command layer.
//!
//! One writer task owns the [`Engine`]; handlers send it commands and await
//! the outcome, so mutations are serialized. After each commit the writer
//! publishes an immutable snapshot that read handlers use without locking.
//! `GET /api/changes?since=N` long-polls until the revision passes `N`.
//!
//! Errors are `{"error": {"kind": ..., "message": ...}}` with the engine's
//! error kind; an unconfirmed destructive edit also carries its report.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query as QueryParams, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot, watch};

use crate::command::{run_query, Command, Engine, EventLogEntry, Outcome, Query};
use crate::error::EngineError;
use crate::ids::{ActionId, AnnotationId, NodeRef, SessionId};
use crate::model::{Params, Workspace};
use crate::persist::{PersistError, Store};
use crate::sankey::GraphLevel;

const DEFAULT_POLL_MS: u64 = 25_000;
const MAX_POLL_MS: u64 = 60_000;

/// What read handlers see: the state after the latest commit.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub workspace: Arc<Workspace>,
    pub events: Arc<Vec<EventLogEntry>>,
}

impl Snapshot {
    fn of(engine: &Engine) -> Self {
        Snapshot {
            workspace: Arc::new(engine.workspace().clone()),
            events: Arc::new(engine.events().to_vec()),
        }
    }

    pub fn revision(&self) -> u64 {
        self.workspace.revision
    }
}

struct Job {
    command: Command,
    reply: oneshot::Sender<Result<Outcome, ApiError>>,
}

/// Handle shared by all request handlers.
#[derive(Clone)]
pub struct AppState {
    jobs: mpsc::Sender<Job>,
    snapshots: watch::Receiver<Snapshot>,
}

impl AppState {
    pub fn snapshot(&self) -> Snapshot {
        self.snapshots.borrow().clone()
    }

    /// Sends `command` to the writer and waits for it to commit.
    pub async fn submit(&self, command: Command) -> Result<Outcome, ApiError> {
        let (reply, rx) = oneshot::channel();
        self.jobs
            .send(Job { command, reply })
            .await
            .map_err(|_| ApiError::unavailable())?;
        rx.await.map_err(|_| ApiError::unavailable())?
    }
}

/// Starts the writer task. With a store, every commit is appended to the
/// event log and checkpointed before the reply is sent.
pub fn spawn_writer(mut engine: Engine, mut store: Option<Store>) -> AppState {
    let (jobs, mut rx) = mpsc::channel::<Job>(64);
    let (publish, snapshots) = watch::channel(Snapshot::of(&engine));
    tokio::spawn(async move {
        while let Some(job) = rx.recv().await {
            let result = match engine.execute(job.command) {
                Ok(outcome) => {
                    let persisted = match store.as_mut() {
                        Some(s) => s.commit(&engine).map_err(ApiError::from),
                        None => Ok(()),
                    };
                    publish.send_replace(Snapshot::of(&engine));
                    persisted.map(|()| outcome)
                }
                Err(e) => Err(ApiError::from(e)),
            };
            let _ = job.reply.send(result);
        }
    });
    AppState { jobs, snapshots }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: String,
    pub message: String,
    pub detail: Option<Value>,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            kind: "BadRequest".into(),
            message: message.into(),
            detail: None,
        }
    }

    fn unavailable() -> Self {
        ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            kind: "Unavailable".into(),
            message: "the workspace writer has stopped".into(),
            detail: None,
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use EngineError::*;
        let status = match &e {
            UnknownSession(_) | UnknownUnit(_) | UnknownRecord(_) | UnknownAnnotation(_) => StatusCode::NOT_FOUND,
            FrozenVersion(_) | NonLeafSave(_) | DuplicateBaseName(_) | UnconfirmedDestructive(_) | DuplicateDataset(_) => {
                StatusCode::CONFLICT
            }
            Integrity(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let detail = match &e {
            UnconfirmedDestructive(report) => Some(json!({ "report": report })),
            _ => None,
        };
        ApiError {
            status,
            kind: e.kind().to_string(),
            message: e.to_string(),
            detail,
        }
    }
}

impl From<PersistError> for ApiError {
    fn from(e: PersistError) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: e.kind().to_string(),
            message: e.to_string(),
            detail: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "kind": self.kind, "message": self.message });
        if let Some(Value::Object(extra)) = self.detail {
            error.as_object_mut().expect("object").extend(extra);
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn id<T: FromStr>(text: &str) -> Result<T, ApiError> {
    text.parse().map_err(|_| ApiError::bad_request(format!("`{text}` is not a valid id here")))
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let source: &[u8] = if bytes.is_empty() { b"{}" } else { bytes };
    serde_json::from_slice(source).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn read(state: &AppState, query: Query) -> ApiResult {
    let snap = state.snapshot();
    Ok(Json(run_query(&snap.workspace, &query)?))
}

async fn mutate(state: &AppState, command: Command) -> ApiResult {
    let outcome = state.submit(command).await?;
    Ok(Json(serde_json::to_value(outcome).expect("outcome serializes")))
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    Json(json!({ "status": "ok", "revision": state.snapshot().revision() }))
}

async fn summary(State(state): State<AppState>) -> ApiResult {
    read(&state, Query::Summary)
}

async fn list_sessions(State(state): State<AppState>) -> ApiResult {
    read(&state, Query::Sessions)
}

#[derive(Deserialize)]
struct BaseName {
    base_name: String,
}

async fn new_session(State(state): State<AppState>, bytes: Bytes) -> ApiResult {
    let b: BaseName = body(&bytes)?;
    mutate(&state, Command::NewSession { base_name: b.base_name }).await
}

async fn save_session(State(state): State<AppState>, Path(s): Path<String>) -> ApiResult {
    mutate(&state, Command::SaveSession { session: id(&s)? }).await
}

async fn branch_session(State(state): State<AppState>, Path(s): Path<String>, bytes: Bytes) -> ApiResult {
    let b: BaseName = body(&bytes)?;
    mutate(
        &state,
        Command::BranchSession {
            session: id(&s)?,
            base_name: b.base_name,
        },
    )
    .await
}

async fn recover(State(state): State<AppState>, Path(s): Path<String>) -> ApiResult {
    read(&state, Query::Recover { session: id(&s)? })
}

#[derive(Deserialize)]
struct SessionFilter {
    session: Option<String>,
}

async fn list_units(State(state): State<AppState>, QueryParams(q): QueryParams<SessionFilter>) -> ApiResult {
    let session = q.session.as_deref().map(id::<SessionId>).transpose()?;
    read(&state, Query::Units { session })
}

#[derive(Deserialize)]
struct NewUnit {
    session: SessionId,
    name: String,
}

async fn create_unit(State(state): State<AppState>, bytes: Bytes) -> ApiResult {
    let b: NewUnit = body(&bytes)?;
    mutate(
        &state,
        Command::CreateUnit {
            session: b.session,
            name: b.name,
        },
    )
    .await
}

#[derive(Deserialize)]
struct Name {
    name: String,
}

async fn branch_unit(State(state): State<AppState>, Path(u): Path<String>, bytes: Bytes) -> ApiResult {
    let b: Name = body(&bytes)?;
    mutate(&state, Command::BranchUnit { unit: id(&u)?, name: b.name }).await
}

async fn history(State(state): State<AppState>, Path(u): Path<String>) -> ApiResult {
    read(&state, Query::History { unit: id(&u)? })
}

#[derive(Deserialize)]
struct NewAction {
    #[serde(rename = "type")]
    action_type: String,
    #[serde(default)]
    params: Params,
}

async fn append(State(state): State<AppState>, Path(u): Path<String>, bytes: Bytes) -> ApiResult {
    let b: NewAction = body(&bytes)?;
    mutate(
        &state,
        Command::Append {
            unit: id(&u)?,
            action_type: b.action_type,
            params: b.params,
        },
    )
    .await
}

#[derive(Deserialize)]
struct UpTo {
    up_to: Option<String>,
}

async fn unit_state(State(state): State<AppState>, Path(u): Path<String>, QueryParams(q): QueryParams<UpTo>) -> ApiResult {
    let up_to = q.up_to.as_deref().map(id::<ActionId>).transpose()?;
    read(&state, Query::Replay { unit: id(&u)?, up_to })
}

async fn validate_unit(State(state): State<AppState>, Path(u): Path<String>) -> ApiResult {
    let report = state.snapshot().workspace.validate(id(&u)?)?;
    Ok(Json(serde_json::to_value(report).expect("report serializes")))
}

async fn validate_all(State(state): State<AppState>) -> ApiResult {
    read(&state, Query::Validate { unit: None })
}

async fn undo(State(state): State<AppState>, Path(u): Path<String>) -> ApiResult {
    mutate(&state, Command::Undo { unit: id(&u)? }).await
}

#[derive(Deserialize)]
struct RedoBody {
    record: Option<ActionId>,
}

async fn redo(State(state): State<AppState>, Path(u): Path<String>, bytes: Bytes) -> ApiResult {
    let b: RedoBody = body(&bytes)?;
    mutate(
        &state,
        Command::Redo {
            unit: id(&u)?,
            record: b.record,
        },
    )
    .await
}

async fn command(State(state): State<AppState>, bytes: Bytes) -> ApiResult {
    let c: Command = body(&bytes)?;
    mutate(&state, c).await
}

#[derive(Deserialize)]
struct SankeyParams {
    level: Option<GraphLevel>,
    focus: Option<String>,
}

async fn sankey(State(state): State<AppState>, QueryParams(q): QueryParams<SankeyParams>) -> ApiResult {
    let focus = q.focus.as_deref().map(id::<SessionId>).transpose()?;
    read(
        &state,
        Query::Sankey {
            level: q.level.unwrap_or(GraphLevel::Session),
            focus,
        },
    )
}

#[derive(Deserialize)]
struct Between {
    start: String,
    end: String,
}

async fn between(State(state): State<AppState>, QueryParams(q): QueryParams<Between>) -> ApiResult {
    read(
        &state,
        Query::ActionsBetween {
            start: id::<NodeRef>(&q.start)?,
            end: id::<NodeRef>(&q.end)?,
        },
    )
}

#[derive(Deserialize)]
struct TargetFilter {
    target: Option<String>,
}

async fn list_annotations(State(state): State<AppState>, QueryParams(q): QueryParams<TargetFilter>) -> ApiResult {
    let target = q.target.as_deref().map(id::<NodeRef>).transpose()?;
    read(&state, Query::Annotations { target })
}

#[derive(Deserialize)]
struct NewAnnotation {
    target: NodeRef,
    text: String,
}

async fn annotate(State(state): State<AppState>, bytes: Bytes) -> ApiResult {
    let b: NewAnnotation = body(&bytes)?;
    mutate(
        &state,
        Command::Annotate {
            target: b.target,
            text: b.text,
        },
    )
    .await
}

async fn delete_annotation(State(state): State<AppState>, Path(n): Path<String>) -> ApiResult {
    mutate(
        &state,
        Command::DeleteAnnotation {
            annotation: id::<AnnotationId>(&n)?,
        },
    )
    .await
}

#[derive(Deserialize)]
struct LogParams {
    since: Option<u64>,
}

async fn event_log(State(state): State<AppState>, QueryParams(q): QueryParams<LogParams>) -> Json<Value> {
    let snap = state.snapshot();
    let since = q.since.unwrap_or(0);
    let entries: Vec<&EventLogEntry> = snap.events.iter().filter(|e| e.seq > since).collect();
    Json(json!({ "revision": snap.revision(), "entries": entries }))
}

#[derive(Deserialize)]
struct ChangeParams {
    since: Option<u64>,
    timeout_ms: Option<u64>,
}

async fn changes(State(state): State<AppState>, QueryParams(q): QueryParams<ChangeParams>) -> Json<Value> {
    let since = q.since.unwrap_or(0);
    let wait = Duration::from_millis(q.timeout_ms.unwrap_or(DEFAULT_POLL_MS).min(MAX_POLL_MS));
    let mut rx = state.snapshots.clone();
    let reached = tokio::time::timeout(wait, rx.wait_for(|s| s.revision() > since)).await;
    let revision = match reached {
        Ok(Ok(snap)) => snap.revision(),
        _ => state.snapshot().revision(),
    };
    Json(json!({ "revision": revision, "changed": revision > since }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/workspace", get(summary))
        .route("/api/sessions", get(list_sessions).post(new_session))
        .route("/api/sessions/{id}/save", post(save_session))
        .route("/api/sessions/{id}/branch", post(branch_session))
        .route("/api/sessions/{id}/recover", get(recover))
        .route("/api/units", get(list_units).post(create_unit))
        .route("/api/units/{id}/branch", post(branch_unit))
        .route("/api/units/{id}/history", get(history))
        .route("/api/units/{id}/actions", post(append))
        .route("/api/units/{id}/state", get(unit_state))
        .route("/api/units/{id}/validate", get(validate_unit))
        .route("/api/units/{id}/undo", post(undo))
        .route("/api/units/{id}/redo", post(redo))
        .route("/api/validate", get(validate_all))
        .route("/api/commands", post(command))
        .route("/api/sankey", get(sankey))
        .route("/api/between", get(between))
        .route("/api/annotations", get(list_annotations).post(annotate))
        .route("/api/annotations/{id}", delete(delete_annotation))
        .route("/api/log", get(event_log))
        .route("/api/changes", get(changes))
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub workspace: Option<PathBuf>,
}

/// Opens the workspace (if any) and serves until ctrl-c.
pub async fn serve(config: ServeConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let (engine, store) = match &config.workspace {
        Some(path) => {
            let mut store = Store::new(path);
            (store.open()?, Some(store))
        }
        None => (Engine::default(), None),
    };
    let app = router(spawn_writer(engine, store));
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    eprintln!("unitflow listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
