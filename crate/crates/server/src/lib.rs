//! HTTP front end for a sharded index: search, near-duplicate lookup,
//! Related Pins and health.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use pinquery_core::index::{Index, LeafParams};
use pinquery_core::service::{
    near_dup, related_pins, NearDupParams, RelatedPins, RelatedPinsConfig, RootRanker, SearchRequest, SearchResponse,
    DEFAULT_DEADLINE,
};
use pinquery_core::{DocId, SearchResult};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

pub const INDEX_DIR_ENV: &str = "PINQUERY_INDEX_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot load index from {dir}: {source}")]
    Load { dir: PathBuf, source: pinquery_core::Error },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub defaults: LeafParams,
    pub deadline: Option<Duration>,
    pub related: RelatedPinsConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { defaults: LeafParams::default(), deadline: Some(DEFAULT_DEADLINE), related: RelatedPinsConfig::default() }
    }
}

/// The shard set being served. Replaced whole, never mutated.
pub struct AppState {
    config: ServerConfig,
    current: RwLock<Arc<RootRanker>>,
}

impl AppState {
    pub fn new(index: Index, config: ServerConfig) -> Self {
        let ranker = Self::ranker(index, &config);
        Self { config, current: RwLock::new(Arc::new(ranker)) }
    }

    /// Loads and validates an index directory; corrupt shards are refused.
    pub fn load(dir: &Path, config: ServerConfig) -> Result<Self, ServerError> {
        let index = Index::load(dir).map_err(|source| ServerError::Load { dir: dir.to_owned(), source })?;
        Ok(Self::new(index, config))
    }

    fn ranker(index: Index, config: &ServerConfig) -> RootRanker {
        RootRanker::new(Arc::new(index)).with_defaults(config.defaults).with_deadline(config.deadline)
    }

    /// Swaps in a new index; requests already running finish on the old one.
    pub fn replace(&self, index: Index) {
        let ranker = Arc::new(Self::ranker(index, &self.config));
        *self.current.write().expect("state lock poisoned") = ranker;
    }

    pub fn ranker_now(&self) -> Arc<RootRanker> {
        Arc::clone(&self.current.read().expect("state lock poisoned"))
    }
}

struct ApiError(StatusCode, String);

impl From<pinquery_core::Error> for ApiError {
    fn from(e: pinquery_core::Error) -> Self {
        use pinquery_core::Error::*;
        let status = match &e {
            NotFound(_) => StatusCode::NOT_FOUND,
            InvalidArgument(_) | Json(_) | InsufficientInput(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("bad request body: {e}")))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> pinquery_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NearDupRequest {
    #[serde(flatten)]
    pub request: SearchRequest,
    #[serde(flatten)]
    pub near_dup: NearDupParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearDupResponse {
    pub results: Vec<SearchResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelatedPinsRequest {
    pub doc_id: DocId,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub shards: usize,
    pub docs: usize,
    pub epoch: u64,
}

async fn search(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<SearchResponse>, ApiError> {
    let req: SearchRequest = parse(&body)?;
    let ranker = state.ranker_now();
    Ok(Json(blocking(move || ranker.search(&req)).await?))
}

async fn neardup(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<NearDupResponse>, ApiError> {
    let req: NearDupRequest = parse(&body)?;
    let ranker = state.ranker_now();
    let results = blocking(move || near_dup(&ranker, &req.request, &req.near_dup)).await?;
    Ok(Json(NearDupResponse { results }))
}

async fn related(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<RelatedPins>, ApiError> {
    let req: RelatedPinsRequest = parse(&body)?;
    let ranker = state.ranker_now();
    let config = state.config.related;
    Ok(Json(
        blocking(move || {
            let recs = Arc::clone(&ranker.index().existing_recs);
            related_pins(&ranker, req.doc_id, req.k, &recs, &config)
        })
        .await?,
    ))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let ranker = state.ranker_now();
    let index = ranker.index();
    Json(Health { status: "ok".into(), shards: index.shards.len(), docs: index.doc_count(), epoch: index.epoch })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/search", post(search))
        .route("/v1/neardup", post(neardup))
        .route("/v1/related_pins", post(related))
        .route("/v1/health", get(health))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve<F>(listener: TcpListener, state: Arc<AppState>, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// A server on its own runtime thread, stopped on drop.
pub struct BackgroundServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    pub fn start(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let listener = runtime.block_on(TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (stop, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(serve(listener, state, async {
                let _ = rx.await;
            }))
        });
        Ok(Self { addr, stop: Some(stop), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves until Ctrl-C.
pub fn run_until_interrupted(state: Arc<AppState>, addr: SocketAddr) -> Result<(), ServerError> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = TcpListener::bind(addr).await?;
        serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(())
}
