//! HTTP service: stateless extraction plus tracked sessions.
//!
//! Errors are JSON objects `{"error": kind, "message": ..., "path"?: ...}`
//! with status 400 (malformed body), 404 (unknown session), 422 (library or
//! budget cannot produce a prompt) or 502 (backend failure).

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use slotfill_core::{extract, BeliefState, Conversation, ParseWarning, PromptError, SlotId, SlotLibrary, SlotSpec, TrackingMode, Turn};

use crate::session::{SessionError, SessionManager, SlotChange};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
    pub path: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
            path: None,
        }
    }

    fn bad_request(message: impl Into<String>, path: Option<String>) -> Self {
        Self {
            path,
            ..Self::new(StatusCode::BAD_REQUEST, "malformed_request", message)
        }
    }

    fn invalid_library(message: impl Into<String>, path: String) -> Self {
        Self {
            path: Some(path),
            ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_library", message)
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.kind, "message": self.message});
        if let Some(path) = self.path {
            body["path"] = path.into();
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<PromptError> for ApiError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::BudgetImpossible { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "budget_impossible", e.to_string()),
            PromptError::EmptyLibrary => Self::invalid_library(e.to_string(), "library".into()),
            PromptError::EmptyConversation => Self::bad_request(e.to_string(), Some("conversation".into())),
            other => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_library", other.to_string()),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "session_not_found", e.to_string()),
            SessionError::BlankText => Self::bad_request(e.to_string(), Some("user_text".into())),
            SessionError::EmptyLibrary => Self::invalid_library(e.to_string(), "library".into()),
            SessionError::Prompt(p) => p.into(),
            SessionError::Backend(b) => Self::new(StatusCode::BAD_GATEWAY, "backend", b.to_string()),
            SessionError::State(s) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_state", s.to_string()),
            SessionError::Store { .. } | SessionError::Corrupt { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "store", e.to_string())
            }
        }
    }
}

/// Parses a JSON body, reporting the path of the offending field.
fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        ApiError::bad_request(message, (path != ".").then_some(path))
    })
}

#[derive(Debug, Deserialize)]
struct SlotBody {
    id: String,
    #[serde(default)]
    name: String,
    description: String,
    #[serde(default)]
    allowed_values: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
enum RoleBody {
    #[serde(alias = "USER", alias = "User")]
    #[serde(rename = "user")]
    User,
    #[serde(alias = "SYSTEM", alias = "System")]
    #[serde(rename = "system")]
    System,
}

#[derive(Debug, Deserialize)]
struct TurnBody {
    role: RoleBody,
    text: String,
}

#[derive(Debug, Deserialize)]
struct ExtractBody {
    library: Vec<SlotBody>,
    conversation: Vec<TurnBody>,
}

#[derive(Debug, Deserialize)]
struct CreateSessionBody {
    library: Vec<SlotBody>,
    #[serde(default)]
    mode: TrackingMode,
}

#[derive(Debug, Deserialize)]
struct TurnRequest {
    user_text: String,
    #[serde(default)]
    system_text: Option<String>,
}

/// Library invariant violations are 422, unlike structural errors.
fn build_library(slots: Vec<SlotBody>) -> Result<SlotLibrary, ApiError> {
    if slots.is_empty() {
        return Err(ApiError::invalid_library("slot library is empty", "library".into()));
    }
    let mut specs = Vec::with_capacity(slots.len());
    for (i, slot) in slots.into_iter().enumerate() {
        let id: SlotId = slot
            .id
            .parse()
            .map_err(|e: slotfill_core::state::StateError| ApiError::invalid_library(e.to_string(), format!("library[{i}].id")))?;
        let spec = SlotSpec {
            id,
            name: slot.name,
            description: slot.description,
            allowed_values: slot.allowed_values,
        };
        spec.validate()
            .map_err(|e| ApiError::invalid_library(e.to_string(), format!("library[{i}]")))?;
        specs.push(spec);
    }
    SlotLibrary::new(specs).map_err(|e| ApiError::invalid_library(e.to_string(), "library".into()))
}

fn build_conversation(turns: Vec<TurnBody>) -> Result<Conversation, ApiError> {
    if turns.is_empty() {
        return Err(ApiError::bad_request("conversation is empty", Some("conversation".into())));
    }
    let mut out = Vec::with_capacity(turns.len());
    for (i, t) in turns.into_iter().enumerate() {
        if t.text.trim().is_empty() {
            return Err(ApiError::bad_request("turn text is blank", Some(format!("conversation[{i}].text"))));
        }
        out.push(match t.role {
            RoleBody::User => Turn::user(t.text),
            RoleBody::System => Turn::system(t.text),
        });
    }
    Ok(Conversation::new(out))
}

#[derive(Debug, Serialize)]
struct ExtractResponse {
    values: BTreeMap<SlotId, String>,
    warnings: Vec<ParseWarning>,
    latency_s: f64,
}

#[derive(Debug, Serialize)]
struct StateResponse {
    session_id: String,
    mode: TrackingMode,
    turns: usize,
    values: BTreeMap<SlotId, String>,
}

#[derive(Debug, Serialize)]
struct TurnResponse {
    session_id: String,
    values: BTreeMap<SlotId, String>,
    delta: Vec<SlotChange>,
    warnings: Vec<ParseWarning>,
    latency_s: f64,
}

fn values(state: &BeliefState) -> BTreeMap<SlotId, String> {
    state.values().clone()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

async fn extract_handler(State(manager): State<Arc<SessionManager>>, body: Bytes) -> Result<Json<ExtractResponse>, ApiError> {
    let body: ExtractBody = parse_body(&body)?;
    let library = build_library(body.library)?;
    let conversation = build_conversation(body.conversation)?;
    let result = blocking(move || {
        let ctx = &manager.context;
        extract(&library, &conversation, ctx.backend.as_ref(), &ctx.budget, ctx.counter.as_ref(), &ctx.normalize)
    })
    .await?;
    let extraction = result.map_err(SessionError::from)?;
    Ok(Json(ExtractResponse {
        values: values(&extraction.outcome.state),
        warnings: extraction.outcome.warnings,
        latency_s: extraction.latency_s,
    }))
}

async fn create_session(State(manager): State<Arc<SessionManager>>, body: Bytes) -> Result<Response, ApiError> {
    let body: CreateSessionBody = parse_body(&body)?;
    let library = build_library(body.library)?;
    let session = blocking(move || manager.create(library, body.mode)).await??;
    Ok((StatusCode::CREATED, Json(json!({"session_id": session.id}))).into_response())
}

async fn session_turn(
    State(manager): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TurnResponse>, ApiError> {
    let body: TurnRequest = parse_body(&body)?;
    let (session, outcome) = blocking(move || manager.turn(&id, &body.user_text, body.system_text.as_deref())).await??;
    Ok(Json(TurnResponse {
        session_id: session.id,
        values: values(&session.state),
        delta: outcome.delta,
        warnings: outcome.warnings,
        latency_s: outcome.latency_s,
    }))
}

async fn session_state(State(manager): State<Arc<SessionManager>>, Path(id): Path<String>) -> Result<Json<StateResponse>, ApiError> {
    let session = blocking(move || manager.get(&id)).await??;
    Ok(Json(StateResponse {
        values: values(&session.state),
        turns: session.conversation.len(),
        mode: session.mode,
        session_id: session.id,
    }))
}

async fn delete_session(State(manager): State<Arc<SessionManager>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    blocking(move || manager.delete(&id)).await??;
    Ok(StatusCode::NO_CONTENT)
}

async fn healthz(State(manager): State<Arc<SessionManager>>) -> Response {
    let backend = manager.context.backend.clone();
    let local = backend.is_local();
    match blocking(move || backend.health()).await {
        Ok(Ok(())) => (StatusCode::OK, Json(json!({"status": "ok", "backend": if local { "local" } else { "remote" }}))).into_response(),
        Ok(Err(e)) => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"status": "unavailable", "message": e.to_string()}))).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/v1/extract", post(extract_handler))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/turns", post(session_turn))
        .route("/v1/sessions/{id}/state", get(session_state))
        .route("/v1/sessions/{id}", axum::routing::delete(delete_session))
        .route("/healthz", get(healthz))
        .fallback(not_found)
        .with_state(manager)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    manager: Arc<SessionManager>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(manager)).with_graceful_shutdown(shutdown).await
}

/// A service running on a background thread; stopped on drop.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a new thread.
pub fn spawn(addr: SocketAddr, manager: Arc<SessionManager>) -> std::io::Result<ServiceHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(serve(listener, manager, async move {
            let _ = rx.await;
        }))
    });
    Ok(ServiceHandle {
        addr,
        stop: Some(tx),
        thread: Some(thread),
    })
}
