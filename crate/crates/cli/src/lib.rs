//! HTTP surface and process plumbing shared by the `memora` binary and
//! its integration tests.
//!
//! The service exposes the four engine operations over JSON:
//!
//! - `POST /ingest`       body `{"source": {...}}`, returns the ingest report
//! - `POST /query`        body `{"q", "mode", "overrides"?}`, returns the result
//! - `GET  /entries/{id}` returns one entry with cues and episodes
//! - `GET  /stats`        returns store counters
//!
//! Errors come back as `{"error": code, "message": text}` with a client
//! status for caller mistakes and a server status for engine trouble.
//! The store sits behind a read-write lock; a request that cannot take
//! the lock within [`LOCK_TIMEOUT`] reports `contention` with a 503.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use memora_core::{
    Engine, MemoraError, QueryMode, RetrievalConfig, SeedMode, SourceSpec,
};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

/// How long a request waits for the store lock before reporting contention.
pub const LOCK_TIMEOUT: Duration = Duration::from_millis(750);

pub type SharedEngine = Arc<RwLock<Engine>>;

// ─── exit codes ───

/// Maps an engine error to the documented process exit code: 2 for
/// config problems, 3 for I/O and snapshot trouble, 4 for provider
/// failures, 1 for anything else. Success is 0.
pub fn exit_code(err: &MemoraError) -> u8 {
    match err {
        MemoraError::Config(_) => 2,
        MemoraError::Io(_) | MemoraError::SnapshotFormat(_) | MemoraError::ChecksumMismatch => 3,
        MemoraError::Provider(_) => 4,
        _ => 1,
    }
}

// ─── wire types ───

#[derive(Debug, Deserialize)]
pub struct IngestRequest {
    pub source: SourceSpec,
}

#[derive(Debug, Deserialize)]
pub struct QueryRequest {
    pub q: String,
    pub mode: String,
    #[serde(default)]
    pub overrides: Option<RetrievalOverrides>,
}

/// Per-request retrieval knobs; fields left out keep the configured value.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct RetrievalOverrides {
    pub k_a: Option<usize>,
    pub k_c: Option<usize>,
    pub seed_mode: Option<SeedMode>,
    pub delta_adj: Option<f64>,
    pub hops: Option<usize>,
    pub budget: Option<u32>,
    pub max_steps: Option<usize>,
}

pub fn apply_overrides(base: &RetrievalConfig, over: &RetrievalOverrides) -> RetrievalConfig {
    let mut cfg = base.clone();
    if let Some(v) = over.k_a {
        cfg.k_a = v;
    }
    if let Some(v) = over.k_c {
        cfg.k_c = v;
    }
    if let Some(v) = over.seed_mode {
        cfg.mode = v;
    }
    if let Some(v) = over.delta_adj {
        cfg.delta_adj = Some(v);
    }
    if let Some(v) = over.hops {
        cfg.hops = v;
    }
    if let Some(v) = over.budget {
        cfg.budget = v;
    }
    if let Some(v) = over.max_steps {
        cfg.max_steps = v;
    }
    cfg
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

fn error_reply(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: code.to_string(),
            message: message.into(),
        }),
    )
        .into_response()
}

fn engine_error_reply(err: &MemoraError) -> Response {
    let (status, code) = match err {
        MemoraError::UnknownEntry(_)
        | MemoraError::UnknownAnchor(_)
        | MemoraError::UnknownSegment(_)
        | MemoraError::UnknownEpisode(_)
        | MemoraError::UnknownSource(_) => (StatusCode::NOT_FOUND, "not_found"),
        MemoraError::InvalidParameter(_)
        | MemoraError::InvalidSource(_)
        | MemoraError::InvalidAction(_)
        | MemoraError::EmptyField(_)
        | MemoraError::Config(_) => (StatusCode::BAD_REQUEST, "bad_request"),
        MemoraError::Provider(_) => (StatusCode::BAD_GATEWAY, "provider_error"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    };
    error_reply(status, code, err.to_string())
}

fn contention_reply() -> Response {
    error_reply(
        StatusCode::SERVICE_UNAVAILABLE,
        "contention",
        "store lock timed out, retry shortly",
    )
}

// ─── handlers ───

/// Engine calls can block (provider round trips, snapshot writes), so
/// every handler runs them on the blocking pool.
async fn run_blocking<F>(work: F) -> Response
where
    F: FnOnce() -> Response + Send + 'static,
{
    match tokio::task::spawn_blocking(work).await {
        Ok(response) => response,
        Err(err) => error_reply(StatusCode::INTERNAL_SERVER_ERROR, "internal", err.to_string()),
    }
}

async fn ingest_handler(
    State(state): State<SharedEngine>,
    body: Result<Json<IngestRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(json) => json,
        Err(rejection) => {
            return error_reply(StatusCode::BAD_REQUEST, "bad_request", rejection.body_text())
        }
    };
    run_blocking(move || match state.try_write_for(LOCK_TIMEOUT) {
        None => contention_reply(),
        Some(mut engine) => match engine.ingest_source(req.source) {
            Ok(report) => Json(report).into_response(),
            Err(err) => engine_error_reply(&err),
        },
    })
    .await
}

async fn query_handler(
    State(state): State<SharedEngine>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(json) => json,
        Err(rejection) => {
            return error_reply(StatusCode::BAD_REQUEST, "bad_request", rejection.body_text())
        }
    };
    let Some(mode) = QueryMode::parse(&req.mode) else {
        return error_reply(
            StatusCode::BAD_REQUEST,
            "bad_mode",
            format!("unknown mode {:?}, expected semantic or policy", req.mode),
        );
    };
    run_blocking(move || match state.try_read_for(LOCK_TIMEOUT) {
        None => contention_reply(),
        Some(engine) => {
            let cfg = match &req.overrides {
                Some(over) => apply_overrides(&engine.config().retrieval, over),
                None => engine.config().retrieval.clone(),
            };
            if let Err(err) = cfg.validate() {
                return engine_error_reply(&err);
            }
            match engine.query_with(&req.q, mode, &cfg) {
                Ok(result) => Json(result).into_response(),
                Err(err) => engine_error_reply(&err),
            }
        }
    })
    .await
}

async fn entry_handler(State(state): State<SharedEngine>, Path(id): Path<String>) -> Response {
    let Ok(id) = id.parse::<u64>() else {
        return error_reply(
            StatusCode::BAD_REQUEST,
            "bad_request",
            format!("entry id must be an integer, got {id:?}"),
        );
    };
    run_blocking(move || match state.try_read_for(LOCK_TIMEOUT) {
        None => contention_reply(),
        Some(engine) => match engine.entry_detail(id) {
            Ok(detail) => Json(detail).into_response(),
            Err(err) => engine_error_reply(&err),
        },
    })
    .await
}

async fn stats_handler(State(state): State<SharedEngine>) -> Response {
    run_blocking(move || match state.try_read_for(LOCK_TIMEOUT) {
        None => contention_reply(),
        Some(engine) => Json(engine.stats()).into_response(),
    })
    .await
}

pub fn router(state: SharedEngine) -> Router {
    Router::new()
        .route("/ingest", post(ingest_handler))
        .route("/query", post(query_handler))
        .route("/entries/{id}", get(entry_handler))
        .route("/stats", get(stats_handler))
        .with_state(state)
}

// ─── serving ───

/// Runs the service until the process is stopped. Used by `memora serve`.
pub fn serve(engine: Engine, addr: SocketAddr) -> Result<(), MemoraError> {
    let state = Arc::new(RwLock::new(engine));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("memora listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state)).await
    })?;
    Ok(())
}

/// A background server on an ephemeral port, for tests. The runtime
/// shuts down when the handle drops.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub state: SharedEngine,
    _runtime: tokio::runtime::Runtime,
}

impl ServerHandle {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

pub fn spawn_server(engine: Engine) -> Result<ServerHandle, MemoraError> {
    let state = Arc::new(RwLock::new(engine));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(("127.0.0.1", 0)))?;
    let addr = listener.local_addr()?;
    let app = router(state.clone());
    runtime.spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok(ServerHandle {
        addr,
        state,
        _runtime: runtime,
    })
}
