use std::io::Write;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use super::index::{top_k, ResponseIndex};
use crate::corpus::{context_from_turns, Turn};
use crate::dual_model::Encoders;
use crate::error::{Error, Result};
use crate::whitelist::{Provenance, Whitelist, WhitelistEntry};

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 1 << 20;

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuggestRequest {
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub text: String,
    pub score: f32,
    pub whitelist_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub encode_ms: f64,
    pub rank_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub suggestions: Vec<Suggestion>,
    pub timing: Timing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub checkpoint_hash: String,
    pub whitelist_size: usize,
    pub whitelist_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitelistView {
    pub id: String,
    pub method: String,
    pub size: usize,
    pub hash: String,
    pub provenance: Provenance,
    pub entries: Vec<WhitelistEntry>,
}

/// Immutable model, whitelist and index shared by all request handlers.
pub struct Suggester {
    model: Box<dyn Encoders + Send + Sync>,
    whitelist: Whitelist,
    index: ResponseIndex,
    default_top_k: usize,
}

impl Suggester {
    pub fn new(
        model: Box<dyn Encoders + Send + Sync>,
        whitelist: Whitelist,
        index: ResponseIndex,
        default_top_k: usize,
    ) -> Result<Self> {
        if index.len() != whitelist.len() || index.whitelist_hash() != whitelist.hash() {
            return Err(Error::invalid("response index was not built from this whitelist"));
        }
        if index.dim() != model.output_dim() {
            return Err(Error::invalid(format!(
                "index dimension {} does not match model output {}",
                index.dim(),
                model.output_dim()
            )));
        }
        if default_top_k == 0 {
            return Err(Error::invalid("default top_k must be at least 1"));
        }
        Ok(Suggester {
            model,
            whitelist,
            index,
            default_top_k,
        })
    }

    pub fn whitelist(&self) -> &Whitelist {
        &self.whitelist
    }

    pub fn index(&self) -> &ResponseIndex {
        &self.index
    }

    pub fn suggest(&self, req: &SuggestRequest) -> Result<SuggestResponse> {
        if req.turns.is_empty() {
            return Err(Error::invalid("turns must not be empty"));
        }
        if let Some(i) = req.turns.iter().position(|t| t.text.trim().is_empty()) {
            return Err(Error::invalid(format!("turn {i} has empty text")));
        }
        let k = req.top_k.unwrap_or(self.default_top_k);
        if k == 0 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        let start = Instant::now();
        let context = context_from_turns(&req.turns);
        let encoded = self.model.encode_contexts(&[context.as_slice()])?;
        let encode_ms = start.elapsed().as_secs_f64() * 1e3;
        let start = Instant::now();
        let ranked = top_k(encoded.data(), &self.index, k)?;
        let rank_ms = start.elapsed().as_secs_f64() * 1e3;
        let suggestions = ranked
            .into_iter()
            .map(|r| Suggestion {
                text: self.whitelist.entries()[r.index].text.clone(),
                score: r.score,
                whitelist_index: r.index,
            })
            .collect();
        Ok(SuggestResponse {
            suggestions,
            timing: Timing { encode_ms, rank_ms },
        })
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            checkpoint_hash: self.index.checkpoint_hash().to_string(),
            whitelist_size: self.whitelist.len(),
            whitelist_hash: self.whitelist.hash(),
        }
    }

    pub fn whitelist_view(&self) -> WhitelistView {
        WhitelistView {
            id: self.whitelist.id(),
            method: self.whitelist.method().as_str().to_string(),
            size: self.whitelist.len(),
            hash: self.whitelist.hash(),
            provenance: self.whitelist.provenance().clone(),
            entries: self.whitelist.entries().to_vec(),
        }
    }
}

/// Destination of the JSON-lines access log.
pub type AccessLog = Arc<Mutex<dyn Write + Send>>;

#[derive(Clone)]
struct AppState {
    suggester: Arc<Suggester>,
    access_log: Option<AccessLog>,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

async fn suggest(State(state): State<AppState>, body: Bytes) -> Response {
    let req: SuggestRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let suggester = Arc::clone(&state.suggester);
    match tokio::task::spawn_blocking(move || suggester.suggest(&req)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e @ Error::InvalidArgument(_))) => error_response(StatusCode::BAD_REQUEST, e.to_string()),
        Ok(Err(e)) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    Json(state.suggester.health())
}

async fn whitelist(State(state): State<AppState>) -> Json<WhitelistView> {
    Json(state.suggester.whitelist_view())
}

#[derive(Serialize)]
struct AccessRecord<'a> {
    method: &'a str,
    path: &'a str,
    status: u16,
    latency_ms: f64,
}

async fn log_access(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let start = Instant::now();
    let method = req.method().to_string();
    let path = req.uri().path().to_string();
    let resp = next.run(req).await;
    if let Some(sink) = &state.access_log {
        let record = AccessRecord {
            method: &method,
            path: &path,
            status: resp.status().as_u16(),
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if let (Ok(line), Ok(mut w)) = (serde_json::to_string(&record), sink.lock()) {
            let _ = writeln!(w, "{line}");
        }
    }
    resp
}

/// The HTTP routes over a shared suggester.
pub fn router(suggester: Arc<Suggester>, access_log: Option<AccessLog>) -> Router {
    let state = AppState {
        suggester,
        access_log,
    };
    Router::new()
        .route("/suggest", post(suggest))
        .route("/healthz", get(healthz))
        .route("/whitelist", get(whitelist))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(middleware::from_fn_with_state(state.clone(), log_access))
        .with_state(state)
}

/// Binds `addr`; fails if the port is taken.
pub async fn bind(addr: SocketAddr) -> Result<TcpListener> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(format!("binding {addr}"), e))
}

/// Serves `router` on `listener` until `shutdown` resolves.
pub async fn serve_http(
    listener: TcpListener,
    router: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::io("serving HTTP", e))
}
