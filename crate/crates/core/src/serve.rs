//! HTTP recommendation service.
//!
//! `GET /recommend?q=<text>&k=<int>&grouped=<bool>`, `GET /similar?entity=<name>&n=<int>`
//! and `GET /healthz`, all answering JSON.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::checkpoint::QueryModel;
use crate::error::{Error, Result};
use crate::index::{group_by_concept, ConceptMap, EntityIndex, ScoredEntity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub bind: String,
    /// `k` when the request has none.
    pub default_k: usize,
    /// Requests asking for more are clamped.
    pub max_k: usize,
    /// Probes for clustered indexes; `None` uses the index default.
    pub probes: Option<usize>,
    pub worker_threads: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: "127.0.0.1:8080".into(),
            default_k: 10,
            max_k: 1000,
            probes: None,
            worker_threads: 4,
        }
    }
}

impl ServeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.default_k == 0 || self.max_k == 0 || self.worker_threads == 0 || self.probes == Some(0) {
            return Err(Error::ConfigInvalid("serve: default_k, max_k, probes and worker_threads must be >= 1".into()));
        }
        Ok(())
    }
}

/// Immutable state shared by all request handlers.
#[derive(Debug)]
pub struct Service {
    model: QueryModel,
    index: EntityIndex,
    index_hash: String,
    config: ServeConfig,
}

impl Service {
    /// Fails when the index was not built from this checkpoint.
    pub fn new(model: QueryModel, index: EntityIndex, index_hash: String, config: ServeConfig) -> Result<Self> {
        config.validate()?;
        let meta = index.meta();
        if meta.checkpoint_hash != model.checkpoint_hash || meta.encoder != model.kind() {
            return Err(Error::IndexMismatch {
                model: format!("{} {}", model.kind(), model.checkpoint_hash),
                index: format!("{} {}", meta.encoder, meta.checkpoint_hash),
            });
        }
        Ok(Service { model, index, index_hash, config })
    }

    pub fn recommend(&self, query: &str, k: Option<usize>, grouped: bool) -> Result<Recommendation> {
        let k = k.unwrap_or(self.config.default_k).min(self.config.max_k);
        let t0 = Instant::now();
        let q = self.model.embed(query)?;
        let embed_ms = t0.elapsed().as_secs_f64() * 1e3;
        let t1 = Instant::now();
        let hits = match (self.index.ivf(), self.config.probes) {
            (Some(_), Some(p)) => self.index.topk_approx(&q, k, p)?,
            _ => self.index.topk(&q, k)?,
        };
        let retrieve_ms = t1.elapsed().as_secs_f64() * 1e3;
        let item = |e: &ScoredEntity, concept: Option<String>| RecommendedEntity {
            entity: e.name.clone(),
            score: e.score,
            concept,
        };
        let results = if grouped {
            let empty = ConceptMap::new();
            group_by_concept(&hits, self.index.concept_map().unwrap_or(&empty))
                .iter()
                .flat_map(|g| g.members.iter().map(|e| item(e, Some(g.concept.clone()))))
                .collect()
        } else {
            hits.iter().map(|e| item(e, None)).collect()
        };
        Ok(Recommendation {
            query: query.to_string(),
            results,
            embed_ms,
            retrieve_ms,
        })
    }

    pub fn similar(&self, entity: &str, n: Option<usize>) -> Result<Similar> {
        let n = n.unwrap_or(self.config.default_k).min(self.config.max_k);
        let results = self
            .index
            .entity_neighbors(entity, n)?
            .iter()
            .map(|e| RecommendedEntity {
                entity: e.name.clone(),
                score: e.score,
                concept: None,
            })
            .collect();
        Ok(Similar {
            entity: entity.to_string(),
            results,
        })
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            vocab_size: self.model.tokenizer.vocab().word_count(),
            index_hash: self.index_hash.clone(),
        }
    }

    pub fn config(&self) -> &ServeConfig {
        &self.config
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendedEntity {
    pub entity: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub concept: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub query: String,
    pub results: Vec<RecommendedEntity>,
    pub embed_ms: f64,
    pub retrieve_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similar {
    pub entity: String,
    pub results: Vec<RecommendedEntity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub vocab_size: usize,
    pub index_hash: String,
}

#[derive(Deserialize)]
struct RecommendParams {
    q: String,
    k: Option<usize>,
    #[serde(default)]
    grouped: bool,
}

#[derive(Deserialize)]
struct SimilarParams {
    entity: String,
    n: Option<usize>,
}

struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            Error::EmptyQuery(_) | Error::ConfigInvalid(_) => StatusCode::BAD_REQUEST,
            Error::UnknownEntity(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

/// Runs CPU-bound work off the async workers.
async fn blocking<T, F>(f: F) -> std::result::Result<T, ApiError>
where
    F: FnOnce() -> Result<T> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(Error::Io(std::io::Error::other(e)))),
    }
}

async fn recommend(
    State(s): State<Arc<Service>>,
    Query(p): Query<RecommendParams>,
) -> std::result::Result<Json<Recommendation>, ApiError> {
    blocking(move || s.recommend(&p.q, p.k, p.grouped)).await.map(Json)
}

async fn similar(
    State(s): State<Arc<Service>>,
    Query(p): Query<SimilarParams>,
) -> std::result::Result<Json<Similar>, ApiError> {
    blocking(move || s.similar(&p.entity, p.n)).await.map(Json)
}

async fn healthz(State(s): State<Arc<Service>>) -> Json<Health> {
    Json(s.health())
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/recommend", get(recommend))
        .route("/similar", get(similar))
        .route("/healthz", get(healthz))
        .with_state(service)
}

/// A server running on a background runtime. Dropping the handle shuts it
/// down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take().map(|t| t.join()) {
            Some(Ok(r)) => Ok(r?),
            Some(Err(_)) => Err(Error::Io(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

fn runtime(threads: usize) -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread()
        .worker_threads(threads)
        .enable_all()
        .build()?)
}

/// Binds `service.config().bind` (port 0 picks a free port) and serves on a
/// background thread.
pub fn spawn(service: Service) -> Result<ServerHandle> {
    let rt = runtime(service.config.worker_threads)?;
    let listener = rt.block_on(TcpListener::bind(&service.config.bind))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(Arc::new(service));
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = rx.await;
                })
                .await
        })
    });
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Serves until the process is interrupted.
pub fn run(service: Service) -> Result<()> {
    let rt = runtime(service.config.worker_threads)?;
    rt.block_on(async move {
        let listener = TcpListener::bind(&service.config.bind).await?;
        log::info!("listening on {}", listener.local_addr()?);
        let app = router(Arc::new(service));
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

#[cfg(test)]
#[path = "serve_tests.rs"]
mod tests;
