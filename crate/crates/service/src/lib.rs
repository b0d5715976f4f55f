//! HTTP service for interactive spine authoring.
//!
//! Endpoints (JSON in and out; errors are `{"code", "message", "detail"}`):
//!
//! | method | path | body | success |
//! |---|---|---|---|
//! | POST | `/sessions` | `{spec, start_utterance, config?}` | 201 session view |
//! | GET | `/sessions/{id}` | | 200 session view |
//! | POST | `/sessions/{id}/rounds` | `{k, revision?}` | 200 round with candidates |
//! | POST | `/sessions/{id}/commit` | `{candidate_id, revision?}` | 200 session view |
//! | PATCH | `/sessions/{id}/nodes/{nid}` | `{text?, speaker?, facts?, revision?}` | 200 node view |
//! | GET | `/sessions/{id}/export` | | 200 corpus document |
//! | POST | `/validate` | corpus document | 200 validation report |
//! | POST | `/evaluate` | `{items: [{task, candidate}], resamples?, level?, seed?}` | 200 metric report |
//!
//! Every mutation bumps the session revision. A request carrying a
//! `revision` other than the current one is rejected with 409 and changes
//! nothing. Mutations on one session are serialized; reads never wait for a
//! running generation and see the last applied revision.

pub mod error;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use questwriter_core::evaluation::{evaluate_nup, EvalConfig};
use questwriter_core::linearize::GenerationTask;
use questwriter_core::model::{resolve_fact, validate_corpus, validate_spec, Corpus, DialogueSpec, FactRef, UtteranceNode};
use questwriter_core::prompting::{ExemplarPool, PromptConfig};
use questwriter_core::seed::mix_seed;
use questwriter_core::writer::{generate_candidates, LmBackend, SpineBuilder};
use serde::Deserialize;
use tokio::sync::{Mutex, RwLock};
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use error::{ApiError, ErrorBody};
pub use session::{CandidateView, FactView, NodeView, RoundView, Session, SessionConfig, SessionView, Snapshot};

/// Service-wide settings.
pub struct ServiceConfig {
    pub backend: Arc<dyn LmBackend>,
    pub pool: Option<Arc<ExemplarPool>>,
    /// Directory for per-session snapshots written after each mutation.
    pub snapshot_dir: Option<PathBuf>,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

impl ServiceConfig {
    pub fn new(backend: Arc<dyn LmBackend>) -> Self {
        Self {
            backend,
            pool: None,
            snapshot_dir: None,
            cors_origin: None,
        }
    }
}

struct Entry {
    /// Held for the whole of a mutation, including backend calls.
    writer: Mutex<()>,
    state: RwLock<Session>,
}

pub struct AppState {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Entry>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            config,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    async fn entry(&self, id: &str) -> Result<Arc<Entry>, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    fn snapshot(&self, session: &Session) {
        let Some(dir) = &self.config.snapshot_dir else {
            return;
        };
        let snap = Snapshot {
            session: session.clone(),
            corpus: session.export(),
        };
        let path = dir.join(format!("{}.json", session.id));
        if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, questwriter_core::json::canonical(&snap))) {
            log::error!("snapshot {} failed: {e}", path.display());
        }
    }
}

fn check_revision(given: Option<u64>, session: &Session) -> Result<(), ApiError> {
    match given {
        Some(r) if r != session.revision => Err(ApiError::stale(r, session.revision)),
        _ => Ok(()),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let origin = match &state.config.cors_origin {
        Some(o) => HeaderValue::from_str(o).map(AllowOrigin::exact).unwrap_or_else(|_| AllowOrigin::any()),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods(tower_http::cors::Any)
        .allow_headers(tower_http::cors::Any);
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/rounds", post(run_round))
        .route("/sessions/{id}/commit", post(commit))
        .route("/sessions/{id}/nodes/{nid}", patch(edit_node))
        .route("/sessions/{id}/export", get(export))
        .route("/validate", post(validate))
        .route("/evaluate", post(evaluate))
        .layer(cors)
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config))).await
}

#[derive(Debug, Deserialize)]
struct StartUtterance {
    #[serde(default)]
    id: Option<String>,
    speaker: String,
    text: String,
    #[serde(default)]
    support_facts: Vec<FactRef>,
}

#[derive(Debug, Deserialize)]
struct CreateRequest {
    spec: DialogueSpec,
    start_utterance: StartUtterance,
    #[serde(default)]
    config: SessionConfig,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: CreateRequest = error::parse_body(&body)?;
    let report = validate_spec(&req.spec);
    if report.has_errors() {
        return Err(ApiError::invalid("specification has errors").with_detail(report));
    }
    let start = req.start_utterance;
    if start.text.trim().is_empty() {
        return Err(ApiError::invalid("start utterance text is empty"));
    }
    for f in &start.support_facts {
        resolve_fact(&req.spec, f).map_err(|e| ApiError::invalid(e.to_string()))?;
    }
    let node = UtteranceNode::new(start.id.unwrap_or_default(), start.speaker, start.text).with_facts(start.support_facts);
    let builder = SpineBuilder::new(req.spec, node)?;
    let id = format!("s{:04}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let session = Session {
        id: id.clone(),
        config: req.config,
        builder,
        revision: 0,
    };
    state.snapshot(&session);
    let view = session.view();
    let entry = Arc::new(Entry {
        writer: Mutex::new(()),
        state: RwLock::new(session),
    });
    state.sessions.write().await.insert(id, entry);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let entry = state.entry(&id).await?;
    let view = entry.state.read().await.view();
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
struct RoundRequest {
    k: usize,
    #[serde(default)]
    revision: Option<u64>,
}

async fn run_round(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<RoundView>, ApiError> {
    let req: RoundRequest = error::parse_body(&body)?;
    let entry = state.entry(&id).await?;
    let _writer = entry.writer.lock().await;

    let (task, prompt, options, round) = {
        let s = entry.state.read().await;
        check_revision(req.revision, &s)?;
        let task = s.builder.next_task()?;
        let round = s.builder.rounds() + 1;
        let prompt = PromptConfig {
            seed: mix_seed(s.config.prompt.seed, &[round as u64]),
            ..s.config.prompt.clone()
        };
        (task, prompt, s.config.writer.clone(), round)
    };
    let backend = Arc::clone(&state.config.backend);
    let pool = state.config.pool.clone();
    let k = req.k;
    let set = tokio::task::spawn_blocking(move || generate_candidates(&task, &prompt, pool.as_deref(), k, &options, backend.as_ref()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;

    let mut s = entry.state.write().await;
    let ids = s.builder.attach(&set.candidates)?;
    s.revision += 1;
    let candidates = ids.iter().zip(&set.candidates).map(|(cid, c)| s.candidate_view(cid, c)).collect();
    state.snapshot(&s);
    Ok(Json(RoundView {
        session_id: id,
        round,
        revision: s.revision,
        candidates,
    }))
}

#[derive(Debug, Deserialize)]
struct CommitRequest {
    candidate_id: String,
    #[serde(default)]
    revision: Option<u64>,
}

async fn commit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SessionView>, ApiError> {
    let req: CommitRequest = error::parse_body(&body)?;
    let entry = state.entry(&id).await?;
    let _writer = entry.writer.lock().await;
    let mut s = entry.state.write().await;
    check_revision(req.revision, &s)?;
    s.builder.commit(&req.candidate_id)?;
    s.revision += 1;
    state.snapshot(&s);
    Ok(Json(s.view()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditRequest {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    speaker: Option<String>,
    #[serde(default)]
    facts: Option<Vec<FactRef>>,
    #[serde(default)]
    revision: Option<u64>,
}

async fn edit_node(
    State(state): State<Arc<AppState>>,
    Path((id, nid)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<NodeView>, ApiError> {
    let req: EditRequest = error::parse_body(&body)?;
    let entry = state.entry(&id).await?;
    let _writer = entry.writer.lock().await;
    let mut s = entry.state.write().await;
    check_revision(req.revision, &s)?;
    s.builder.edit(&nid, req.text, req.speaker, req.facts)?;
    s.revision += 1;
    state.snapshot(&s);
    Ok(Json(s.node_view(&nid).expect("edited node exists")))
}

async fn export(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Corpus>, ApiError> {
    let entry = state.entry(&id).await?;
    let corpus = entry.state.read().await.export();
    Ok(Json(corpus))
}

async fn validate(body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let corpus: Corpus = error::parse_body(&body)?;
    Ok(Json(validate_corpus(&corpus)))
}

#[derive(Debug, Deserialize)]
struct EvalItem {
    task: GenerationTask,
    candidate: String,
}

#[derive(Debug, Deserialize)]
struct EvalRequest {
    items: Vec<EvalItem>,
    #[serde(default)]
    resamples: Option<usize>,
    #[serde(default)]
    level: Option<f64>,
    #[serde(default)]
    seed: Option<u64>,
}

async fn evaluate(body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: EvalRequest = error::parse_body(&body)?;
    let defaults = EvalConfig::default();
    let cfg = EvalConfig {
        resamples: req.resamples.unwrap_or(defaults.resamples),
        level: req.level.unwrap_or(defaults.level),
        seed: req.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let items: Vec<(GenerationTask, String)> = req.items.into_iter().map(|i| (i.task, i.candidate)).collect();
    let report = tokio::task::spawn_blocking(move || evaluate_nup(&items, None, &cfg))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::invalid(e.to_string()))?;
    Ok(Json(report))
}
