//! Versioned JSON API over a loaded snapshot.
//!
//! Routes:
//! - `POST /v1/query` with `{"query": "..."}`
//! - `GET /v1/tickets/{id}/tree`
//! - `GET /v1/graph/neighbors/{id}` with optional `?kind=explicit|implicit`
//! - `GET /v1/healthz`
//! - `POST /v1/admin/reload` re-reads the snapshot directory
//!
//! Errors are `{"error": {"code": ..., "message": ...}}`.

use std::sync::{Arc, RwLock};

use anyhow::Context;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use ticketgraph::{EdgeKind, Error, TicketTree};
use tokio::net::TcpListener;

use crate::commands::{self, Loaded, QueryResponse};
use crate::settings::Settings;

pub struct AppState {
    settings: Settings,
    current: RwLock<Option<Arc<Loaded>>>,
    reloading: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(settings: Settings, loaded: Option<Loaded>) -> Self {
        Self {
            settings,
            current: RwLock::new(loaded.map(Arc::new)),
            reloading: tokio::sync::Mutex::new(()),
        }
    }

    /// Loads the configured snapshot. A missing snapshot leaves the service
    /// up but unavailable; any other failure, a fingerprint mismatch
    /// included, is returned so the service refuses to start.
    pub fn open(settings: Settings) -> anyhow::Result<Self> {
        let loaded = match commands::load_engine(&settings) {
            Ok(l) => Some(l),
            Err(e) if matches!(e.downcast_ref::<Error>(), Some(Error::NoSnapshot(_))) => {
                tracing::warn!("{e}; serving 503 until a snapshot is built and reloaded");
                None
            }
            Err(e) => return Err(e),
        };
        Ok(Self::new(settings, loaded))
    }

    fn current(&self) -> Option<Arc<Loaded>> {
        self.current.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn loaded(&self) -> Result<Arc<Loaded>, ApiError> {
        self.current().ok_or_else(|| {
            ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "no_snapshot",
                format!("no snapshot loaded from {}", self.settings.snapshot_dir.display()),
            )
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::TicketNotFound(_) => (StatusCode::NOT_FOUND, "ticket_not_found"),
            Error::NoAnswer { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "no_answer"),
            Error::InvalidInput(_) | Error::UnparseableQuery(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_query"),
            Error::NoSnapshot(_) => (StatusCode::SERVICE_UNAVAILABLE, "no_snapshot"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type Shared = Arc<AppState>;

#[derive(Debug, Deserialize)]
pub struct QueryRequest {
    pub query: String,
}

async fn query(State(state): State<Shared>, body: Result<Json<QueryRequest>, JsonRejection>) -> Result<Json<QueryResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    let loaded = state.loaded()?;
    let response = tokio::task::spawn_blocking(move || commands::query(&loaded, &req.query))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(response))
}

async fn ticket_tree(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<TicketTree>, ApiError> {
    let loaded = state.loaded()?;
    let tree = loaded.engine.graph().tree(&id).ok_or(Error::TicketNotFound(id))?;
    Ok(Json(tree.clone()))
}

#[derive(Debug, Deserialize)]
struct NeighborFilter {
    kind: Option<EdgeKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub ticket_id: String,
    pub kind: EdgeKind,
    pub relation: String,
    /// `out` when the edge starts at the requested ticket.
    pub direction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborsResponse {
    pub ticket_id: String,
    pub neighbors: Vec<Neighbor>,
}

async fn neighbors(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(filter): Query<NeighborFilter>,
) -> Result<Json<NeighborsResponse>, ApiError> {
    let loaded = state.loaded()?;
    let neighbors = loaded
        .engine
        .graph()
        .neighbors(&id, filter.kind)?
        .into_iter()
        .map(|(other, e)| Neighbor {
            ticket_id: other.to_string(),
            kind: e.kind,
            relation: e.relation.clone(),
            direction: if e.src == id { "out".into() } else { "in".into() },
            weight: e.weight,
        })
        .collect();
    Ok(Json(NeighborsResponse { ticket_id: id, neighbors }))
}

async fn healthz(State(state): State<Shared>) -> Response {
    match state.current() {
        Some(l) => Json(json!({
            "status": "ok",
            "snapshot_id": l.manifest.snapshot_id,
            "format_version": l.manifest.format_version,
            "tickets": l.manifest.counts.tickets,
            "embedder_fingerprint": l.manifest.build_params.embedder_fingerprint,
        }))
        .into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "no_snapshot" }))).into_response(),
    }
}

/// Loads the snapshot directory again and swaps it in. Requests already
/// running keep the engine they started with. A failed load keeps the
/// current snapshot.
async fn reload(State(state): State<Shared>) -> Result<Json<serde_json::Value>, ApiError> {
    let _guard = state.reloading.lock().await;
    let previous = state.current().map(|l| l.manifest.snapshot_id.clone());
    let settings = state.settings.clone();
    let loaded = tokio::task::spawn_blocking(move || commands::load_engine(&settings))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| match e.downcast::<Error>() {
            Ok(core) => ApiError::from(core),
            Err(other) => ApiError::internal(format!("{other:#}")),
        })?;
    let snapshot_id = loaded.manifest.snapshot_id.clone();
    let old = state.current.write().unwrap_or_else(|p| p.into_inner()).replace(Arc::new(loaded));
    // the old engine may be the last reference; drop it off the async workers
    tokio::task::spawn_blocking(move || drop(old));
    tracing::info!(%snapshot_id, "snapshot reloaded");
    Ok(Json(json!({ "snapshot_id": snapshot_id, "previous_snapshot_id": previous })))
}

async fn require_token(State(state): State<Shared>, request: Request, next: Next) -> Response {
    if let Some(token) = state.settings.api_token.as_deref().filter(|t| !t.is_empty()) {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(request).await
}

pub fn router(state: Arc<AppState>) -> Router {
    let protected = Router::new()
        .route("/v1/query", post(query))
        .route("/v1/tickets/{id}/tree", get(ticket_tree))
        .route("/v1/graph/neighbors/{id}", get(neighbors))
        .route("/v1/admin/reload", post(reload))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/v1/healthz", get(healthz))
        .merge(protected)
        .with_state(state)
}

pub async fn run(listener: TcpListener, state: Arc<AppState>) -> anyhow::Result<()> {
    let addr = listener.local_addr()?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Blocking entry point for the `serve` verb.
pub fn serve(settings: Settings) -> anyhow::Result<()> {
    let listen = settings.listen.clone();
    // built before the runtime starts: the remote adapter's blocking client
    // must not be created on an async worker
    let state = Arc::new(AppState::open(settings)?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = TcpListener::bind(&listen).await.with_context(|| format!("cannot listen on {listen}"))?;
        run(listener, state).await
    })
}
