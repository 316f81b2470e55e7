//! JSON-over-HTTP chat service.
//!
//! Weights are shared read-only between requests; decodes run on the
//! blocking pool behind a FIFO semaphore sized by `max_sessions`.

use std::net::{SocketAddr, TcpListener as StdListener};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cwgan_core::{ChatEngine, Checkpoint};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{oneshot, Semaphore};

use crate::commands::{engine as build_engine, load_checkpoint};
use crate::error::CliError;
use crate::settings::RuntimeConfig;

#[derive(Debug, Deserialize)]
struct ChatRequest {
    session_id: String,
    message: String,
}

pub struct AppState {
    engine: RwLock<Arc<ChatEngine>>,
    checkpoint_id: RwLock<String>,
    checkpoint_path: Option<PathBuf>,
    reloading: AtomicBool,
    permits: Semaphore,
    runtime: RuntimeConfig,
}

impl AppState {
    pub fn new(engine: ChatEngine, checkpoint_id: String, checkpoint_path: Option<PathBuf>, runtime: RuntimeConfig) -> Self {
        AppState {
            engine: RwLock::new(Arc::new(engine)),
            checkpoint_id: RwLock::new(checkpoint_id),
            checkpoint_path,
            reloading: AtomicBool::new(false),
            permits: Semaphore::new(runtime.max_sessions.max(1)),
            runtime,
        }
    }

    pub fn engine(&self) -> Arc<ChatEngine> {
        self.engine.read().expect("engine lock").clone()
    }

    pub fn checkpoint_id(&self) -> String {
        self.checkpoint_id.read().expect("id lock").clone()
    }

    /// While set, `/chat` answers 503. Reloads toggle it; tests may too.
    pub fn set_reloading(&self, on: bool) {
        self.reloading.store(on, Ordering::SeqCst);
    }

    pub fn is_reloading(&self) -> bool {
        self.reloading.load(Ordering::SeqCst)
    }

    /// Longest accepted message, in characters.
    pub fn max_message_chars(&self) -> usize {
        self.engine().generator().config().max_len * 8
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({ "status": "ok", "checkpoint": state.checkpoint_id() })).into_response()
}

async fn info(State(state): State<Arc<AppState>>) -> Response {
    let engine = state.engine();
    Json(json!({
        "checkpoint": state.checkpoint_id(),
        "model": engine.generator().config(),
        "vocab_size": engine.vocab().len(),
        "max_decode_steps": engine.max_steps,
        "max_message_chars": state.max_message_chars(),
        "max_sessions": state.runtime.max_sessions,
        "fallback": engine.fallback,
    }))
    .into_response()
}

async fn chat(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let started = Instant::now();
    let request: ChatRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    if request.message.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "message is empty");
    }
    let limit = state.max_message_chars();
    if request.message.chars().count() > limit {
        return error(StatusCode::PAYLOAD_TOO_LARGE, format!("message longer than {limit} characters"));
    }
    if state.is_reloading() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "model reloading");
    }
    let permit = match tokio::time::timeout(state.runtime.request_timeout, state.permits.acquire()).await {
        Ok(Ok(p)) => p,
        _ => return error(StatusCode::SERVICE_UNAVAILABLE, "server busy"),
    };
    let engine = state.engine();
    let message = request.message;
    let result = tokio::task::spawn_blocking(move || engine.reply(&message)).await;
    drop(permit);
    match result {
        Ok(Ok(reply)) => {
            log::debug!("session {}: {} tokens", request.session_id, reply.tokens);
            Json(json!({
                "answer": reply.text,
                "tokens": reply.tokens,
                "latency_ms": started.elapsed().as_secs_f64() * 1e3,
            }))
            .into_response()
        }
        Ok(Err(cwgan_core::Error::EmptyQuestion)) => error(StatusCode::BAD_REQUEST, "message has no tokens"),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("decode task failed: {e}")),
    }
}

/// Reloads weights from the checkpoint path; `/chat` answers 503 meanwhile.
async fn reload(State(state): State<Arc<AppState>>) -> Response {
    let Some(path) = state.checkpoint_path.clone() else {
        return error(StatusCode::CONFLICT, "server was started without a checkpoint file");
    };
    if state.reloading.swap(true, Ordering::SeqCst) {
        return error(StatusCode::SERVICE_UNAVAILABLE, "reload already in progress");
    }
    let runtime = state.runtime.clone();
    let loaded = tokio::task::spawn_blocking(move || {
        let (ck, id) = load_checkpoint(&path)?;
        Ok::<_, CliError>((build_engine(ck, &runtime)?, id))
    })
    .await;
    let response = match loaded {
        Ok(Ok((engine, id))) => {
            *state.engine.write().expect("engine lock") = Arc::new(engine);
            *state.checkpoint_id.write().expect("id lock") = id.clone();
            Json(json!({ "status": "ok", "checkpoint": id })).into_response()
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    state.set_reloading(false);
    response
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/chat", post(chat))
        .route("/health", get(health))
        .route("/info", get(info))
        .route("/reload", post(reload))
        .with_state(state)
}

/// A server on a background thread with its own runtime. Dropping the
/// handle shuts it down.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn spawn(state: AppState, addr: &str) -> std::io::Result<Self> {
        let listener = StdListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let state = Arc::new(state);
        let app = router(state.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("cwgan-http".into()).spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })?;
        Ok(ServerHandle {
            addr,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// State for an in-memory checkpoint; the id comes from its serialized form.
pub fn state_for(checkpoint: Checkpoint, runtime: RuntimeConfig) -> Result<AppState, CliError> {
    let id = cwgan_core::checkpoint::checkpoint_id(&checkpoint.to_bytes()?);
    Ok(AppState::new(build_engine(checkpoint, &runtime)?, id, None, runtime))
}

/// Runs until Ctrl-C.
pub fn serve_blocking(path: PathBuf, runtime: RuntimeConfig) -> Result<(), CliError> {
    let (ck, id) = load_checkpoint(&path)?;
    let state = Arc::new(AppState::new(build_engine(ck, &runtime)?, id.clone(), Some(path), runtime.clone()));
    let addr = format!("{}:{}", runtime.host, runtime.port);
    let io = |e: std::io::Error| CliError::Io {
        context: addr.clone(),
        source: e,
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(io)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        log::info!("serving checkpoint {id} on http://{}", listener.local_addr()?);
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
    .map_err(io)
}
