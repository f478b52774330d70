use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use agentrec_core::corpus::{load_corpus_cache, save_corpus_cache, AgentCorpus};
use agentrec_core::embedding::{embed_texts, Rephraser};
use agentrec_core::{Error, RankedAgent, Recommender};
use anyhow::Context;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::Mutex;

use crate::config::EngineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendRequest {
    pub prompt: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub ranked: Vec<RankedAgent>,
    pub rephrased: bool,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CorpusUpload {
    pub prompts: Vec<String>,
}

/// Shared service state. Requests clone the current engine `Arc` and never
/// hold the lock while scoring; admin operations build a new engine and swap
/// the pointer, so a request sees either the old corpora or the new ones.
pub struct AppState {
    engine: RwLock<Arc<Recommender>>,
    default_k: usize,
    admin: Mutex<()>,
    persist_to: Option<PathBuf>,
}

impl AppState {
    pub fn new(engine: Recommender, default_k: usize, persist_to: Option<PathBuf>) -> Self {
        Self {
            engine: RwLock::new(Arc::new(engine)),
            default_k,
            admin: Mutex::new(()),
            persist_to,
        }
    }

    pub fn engine(&self) -> Arc<Recommender> {
        self.engine.read().expect("engine lock poisoned").clone()
    }

    fn swap(&self, engine: Recommender) {
        *self.engine.write().expect("engine lock poisoned") = Arc::new(engine);
    }

    fn persist(&self, engine: &Recommender) {
        if let Some(path) = &self.persist_to {
            if let Err(e) = save_corpus_cache(engine.corpora(), path) {
                log::error!("could not persist corpus cache: {e}");
            }
        }
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
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidPrompt(_) | Error::InvalidInput(_) => StatusCode::BAD_REQUEST,
            Error::Provider { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string())
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "agents": state.engine().corpora().len() }))
}

async fn agents(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let engine = state.engine();
    let list: Vec<_> = engine
        .corpora()
        .iter()
        .map(|(id, c)| json!({ "id": id, "corpus_size": c.len() }))
        .collect();
    Json(json!({ "agents": list }))
}

async fn recommend(
    State(state): State<Arc<AppState>>,
    body: Result<Json<RecommendRequest>, JsonRejection>,
) -> Result<Json<RecommendResponse>, ApiError> {
    let Json(req) = body?;
    let k = req.k.unwrap_or(state.default_k);
    let engine = state.engine();
    let start = Instant::now();
    let rec = tokio::task::spawn_blocking(move || engine.recommend(&req.prompt, k))
        .await
        .map_err(join_error)??;
    Ok(Json(RecommendResponse {
        ranked: rec.ranked,
        rephrased: rec.rephrased,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    }))
}

/// Embeds `prompts` as the new corpus of `agent` and swaps it in.
fn rebuild_agent(state: &AppState, agent: &str, prompts: &[String]) -> agentrec_core::Result<()> {
    let current = state.engine();
    let embeddings = embed_texts(current.embedder().as_ref(), prompts)?;
    let ids = (0..prompts.len()).map(|i| format!("{agent}/posted-{i}")).collect();
    let corpus = AgentCorpus::from_embeddings(agent, &embeddings, ids)?;
    let mut corpora = current.corpora().as_ref().clone();
    corpora.insert(agent.to_owned(), corpus);
    let next = current.with_corpora(Arc::new(corpora))?;
    state.persist(&next);
    state.swap(next);
    Ok(())
}

async fn upload_prompts(
    State(state): State<Arc<AppState>>,
    Path(agent): Path<String>,
    body: Result<Json<CorpusUpload>, JsonRejection>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let Json(upload) = body?;
    if agent.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_input", "agent id is empty"));
    }
    if upload.prompts.is_empty() || upload.prompts.iter().any(|p| p.trim().is_empty()) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_input",
            "prompts must be a non-empty list of non-empty strings",
        ));
    }
    let accepted = upload.prompts.len();
    let task_state = state.clone();
    let task_agent = agent.clone();
    tokio::spawn(async move {
        let _guard = task_state.admin.lock().await;
        let st = task_state.clone();
        let name = task_agent.clone();
        let outcome = tokio::task::spawn_blocking(move || rebuild_agent(&st, &name, &upload.prompts)).await;
        match outcome {
            Ok(Ok(())) => log::info!("rebuilt corpus for {task_agent} ({accepted} prompts)"),
            Ok(Err(e)) => log::error!("rebuilding corpus for {task_agent} failed: {e}"),
            Err(e) => log::error!("rebuild task for {task_agent} panicked: {e}"),
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "agent": agent, "accepted": accepted }))))
}

async fn delete_agent(
    State(state): State<Arc<AppState>>,
    Path(agent): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let _guard = state.admin.lock().await;
    let current = state.engine();
    if !current.corpora().contains_key(&agent) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_agent", format!("no agent {agent:?}")));
    }
    if current.corpora().len() == 1 {
        return Err(ApiError::new(StatusCode::CONFLICT, "last_agent", "cannot delete the only agent"));
    }
    let mut corpora = current.corpora().as_ref().clone();
    corpora.remove(&agent);
    let next = current.with_corpora(Arc::new(corpora))?;
    state.persist(&next);
    state.swap(next);
    Ok(Json(json!({ "agent": agent, "deleted": true })))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/agents", get(agents))
        .route("/v1/recommend", post(recommend))
        .route("/v1/corpus/{agent}/prompts", post(upload_prompts))
        .route("/v1/corpus/{agent}", delete(delete_agent))
        .with_state(state)
}

/// Loads the corpus cache and builds the engine described by `cfg`.
pub fn engine_from_config(cfg: &EngineConfig) -> anyhow::Result<Recommender> {
    let corpora = load_corpus_cache(&cfg.cache_path)
        .with_context(|| format!("loading corpus cache {}", cfg.cache_path.display()))?;
    let embedder = cfg.provider.build()?;
    Ok(Recommender::new(
        Arc::new(corpora),
        embedder,
        Rephraser::from_spec(&cfg.rephrase),
        cfg.score,
    )?)
}

/// Binds `addr` and serves in the background. Returns the bound address.
pub async fn spawn(state: Arc<AppState>, addr: &str) -> anyhow::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr()?;
    let app = router(state);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            log::error!("server stopped: {e}");
        }
    });
    Ok((local, handle))
}

/// Loads everything, then binds and serves until Ctrl-C.
pub async fn serve(cfg: EngineConfig) -> anyhow::Result<()> {
    let engine = tokio::task::spawn_blocking({
        let cfg = cfg.clone();
        move || engine_from_config(&cfg)
    })
    .await??;
    let agents = engine.corpora().len();
    let state = Arc::new(AppState::new(engine, cfg.default_k, Some(cfg.cache_path.clone())));
    let listener = TcpListener::bind(&cfg.listen_address)
        .await
        .with_context(|| format!("binding {}", cfg.listen_address))?;
    log::info!("serving {agents} agents on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
