//! `/v1` HTTP API: chat sessions that answer through the full selection
//! pipeline, and demo sessions where an expert labels every candidate.
//!
//! Sessions live in memory. The demonstration log is the only durable
//! state; each record is fsynced before the response is sent.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex as StdMutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use persuade_core::config::{Config, ServiceConfig, SessionMode};
use persuade_core::detectors::{CandidateStatus, DetectorConfig};
use persuade_core::dialogue::{
    is_strategy, load_corpus, normalize, update_profiles, ActSet, Context, Corpus, Profiles, Role,
    RuleClassifier, Turn, Utterance,
};
use persuade_core::policy::{derive_seed, Candidate, DecodingConfig, Policy, ResponseGenerator};
use persuade_core::selection::{
    annotate_candidates, append_demo, context_digest, eval_metrics, load_demos, select_response,
    turn_features, DemoCandidate, DemoRecord, ImitatorParams, MetricsReport, SelectionTrace,
};

/// Loaded policy and imitator.
pub struct Models {
    pub policy: Policy,
    pub imitator: ImitatorParams,
}

impl Models {
    /// The imitator defaults to all-zero weights, which accepts every survivor.
    pub fn load(config: &ServiceConfig) -> persuade_core::Result<Option<Self>> {
        let Some(model) = &config.model else {
            return Ok(None);
        };
        let policy = Policy::load(model)?;
        let imitator = match &config.imitator {
            Some(p) => ImitatorParams::load(p)?,
            None => ImitatorParams::zeros(),
        };
        Ok(Some(Self { policy, imitator }))
    }
}

/// Service-wide settings fixed at startup.
#[derive(Debug, Clone)]
pub struct Settings {
    pub decoding: DecodingConfig,
    pub detector: DetectorConfig,
    pub demo_log: PathBuf,
    pub default_mode: SessionMode,
    pub opening_turn: bool,
    pub seed: u64,
}

impl Settings {
    pub fn from_config(config: &Config) -> Self {
        Self {
            decoding: config.decoding,
            detector: config.detector,
            demo_log: config.service.demo_log(),
            default_mode: config.service.default_mode.clone(),
            opening_turn: config.service.opening_turn,
            seed: config.service.seed,
        }
    }
}

struct PendingCandidate {
    candidate: Candidate,
    features: Vec<f64>,
}

struct Session {
    id: String,
    mode: SessionMode,
    transcript: Vec<Turn>,
    profiles: Profiles,
    pending: Option<Vec<PendingCandidate>>,
    seed: u64,
}

impl Session {
    fn context(&self) -> Context<'_> {
        Context::new(&self.transcript, self.profiles.clone())
    }

    fn push(&mut self, turn: Turn) {
        let prev_sys = self
            .transcript
            .iter()
            .rev()
            .find(|t| t.role == Role::Sys)
            .map(|t| t.acts)
            .unwrap_or_else(ActSet::empty);
        self.profiles = update_profiles(&self.profiles, &turn, prev_sys);
        self.transcript.push(turn);
    }

    fn turn_seed(&self) -> u64 {
        derive_seed(self.seed, self.transcript.len() as u64)
    }
}

struct Shared {
    models: Option<Arc<Models>>,
    settings: Settings,
    metrics_corpus: Option<Arc<Corpus>>,
    sessions: StdMutex<HashMap<String, Arc<Mutex<Session>>>>,
    session_counter: AtomicU64,
    demo_writer: Mutex<()>,
    metrics: Mutex<Option<MetricsReport>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(models: Option<Models>, settings: Settings, metrics_corpus: Option<Corpus>) -> Self {
        Self(Arc::new(Shared {
            models: models.map(Arc::new),
            settings,
            metrics_corpus: metrics_corpus.map(Arc::new),
            sessions: StdMutex::new(HashMap::new()),
            session_counter: AtomicU64::new(0),
            demo_writer: Mutex::new(()),
            metrics: Mutex::new(None),
        }))
    }

    /// Loads models and the metrics corpus named in the config.
    pub fn from_config(config: &Config) -> persuade_core::Result<Self> {
        let models = Models::load(&config.service)?;
        let corpus = config.service.corpus.as_deref().map(load_corpus).transpose()?;
        std::fs::create_dir_all(&config.service.data_dir)
            .map_err(|e| persuade_core::Error::Config(format!("{}: {e}", config.service.data_dir.display())))?;
        Ok(Self::new(models, Settings::from_config(config), corpus))
    }

    fn models(&self) -> Result<Arc<Models>, ApiError> {
        self.0
            .models
            .clone()
            .ok_or_else(|| ApiError(StatusCode::SERVICE_UNAVAILABLE, "no model loaded".into()))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.0
            .sessions
            .lock()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/user_turn", post(user_turn))
        .route("/v1/sessions/{id}/selection", post(selection))
        .route("/v1/demos/export", get(export_demos))
        .route("/v1/metrics", get(metrics))
        .route("/v1/health", get(health))
        .with_state(state)
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: Config) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let state = AppState::from_config(&config)?;
    if state.0.models.is_none() {
        tracing::warn!("no model configured; session endpoints will answer 503");
    }
    let addr = format!("{}:{}", config.service.bind, config.service.port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TurnView {
    pub role: Role,
    pub text: String,
    pub acts: ActSet,
}

impl From<&Turn> for TurnView {
    fn from(t: &Turn) -> Self {
        Self {
            role: t.role,
            text: t.utterance.text().to_string(),
            acts: t.acts,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CandidateView {
    pub idx: usize,
    pub text: String,
    pub status: Option<CandidateStatus>,
    pub strategy: bool,
    pub imitator_score: Option<f64>,
}

fn candidate_view(idx: usize, c: &Candidate) -> CandidateView {
    CandidateView {
        idx,
        text: c.utterance.text().to_string(),
        status: c.status,
        strategy: is_strategy(c.acts),
        imitator_score: c.imitator_score,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceView {
    pub ooc: bool,
    pub below_threshold: bool,
    pub n_pass: usize,
    pub chosen: Option<usize>,
    pub candidates: Vec<CandidateView>,
}

fn trace_view(trace: &SelectionTrace) -> TraceView {
    TraceView {
        ooc: trace.ooc,
        below_threshold: trace.below_threshold,
        n_pass: trace
            .candidates
            .iter()
            .filter(|c| c.status.is_some_and(CandidateStatus::is_pass))
            .count(),
        chosen: trace.chosen,
        candidates: trace.candidates.iter().enumerate().map(|(i, c)| candidate_view(i, c)).collect(),
    }
}

fn sys_turn(c: &Candidate) -> Turn {
    Turn::new(Role::Sys, c.utterance.clone(), c.acts)
}

/// Runs the selection pipeline and appends the chosen system turn.
fn respond(models: &Models, settings: &Settings, session: &mut Session) -> Result<(TurnView, TraceView), ApiError> {
    let ctx = session.context();
    let (chosen, trace) = select_response(
        &models.policy,
        &models.imitator,
        &ctx,
        &settings.decoding,
        &settings.detector,
        session.turn_seed(),
    )
    .map_err(internal)?;
    let turn = sys_turn(&chosen);
    let view = TurnView::from(&turn);
    session.push(turn);
    Ok((view, trace_view(&trace)))
}

#[derive(Deserialize)]
struct CreateSession {
    mode: Option<String>,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = if body.is_empty() {
        CreateSession { mode: None }
    } else {
        parse_body(&body)?
    };
    let mode = match req.mode.as_deref() {
        None => state.0.settings.default_mode.clone(),
        Some("chat") => SessionMode::Chat,
        Some("demo") => SessionMode::Demo,
        Some(other) => return Err(ApiError(StatusCode::BAD_REQUEST, format!("invalid mode {other:?}"))),
    };
    let models = state.models()?;
    let settings = &state.0.settings;
    let n = state.0.session_counter.fetch_add(1, Ordering::SeqCst);
    let mut session = Session {
        id: uuid::Uuid::new_v4().simple().to_string(),
        mode: mode.clone(),
        transcript: Vec::new(),
        profiles: Profiles::default(),
        pending: None,
        seed: derive_seed(settings.seed, n),
    };
    let opening = if mode == SessionMode::Chat && settings.opening_turn {
        Some(respond(&models, settings, &mut session)?.0)
    } else {
        None
    };
    let id = session.id.clone();
    state
        .0
        .sessions
        .lock()
        .expect("session map lock")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    let body = json!({ "session_id": id, "mode": mode, "opening_sys_turn": opening });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Deserialize)]
struct UserTurn {
    text: String,
}

async fn user_turn(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let models = state.models()?;
    let session = state.session(&id)?;
    let req: UserTurn = parse_body(&body)?;
    let mut session = session.lock().await;
    if session.pending.is_some() {
        return Err(ApiError(StatusCode::CONFLICT, "a candidate selection is pending".into()));
    }
    if normalize(&req.text).is_empty() {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "text is empty".into()));
    }
    let utterance = Utterance::encode(&req.text, &models.policy.vocab).map_err(internal)?;
    let settings = &state.0.settings;
    session.push(Turn::classified(Role::Usr, utterance, &RuleClassifier));

    match session.mode {
        SessionMode::Chat => {
            let (turn, trace) = respond(&models, settings, &mut session)?;
            Ok(Json(json!({ "sys_turn": turn, "trace": trace })))
        }
        SessionMode::Demo => {
            let ctx = session.context();
            let n = settings.decoding.n_candidates;
            let mut candidates = models
                .policy
                .generate_n(&ctx, &settings.decoding, n, session.turn_seed())
                .map_err(internal)?;
            annotate_candidates(&ctx, &mut candidates, &settings.detector);
            let features = turn_features(&ctx, &candidates, &settings.detector);
            let pending: Vec<PendingCandidate> = candidates
                .into_iter()
                .zip(features)
                .map(|(mut candidate, features)| {
                    candidate.imitator_score = Some(models.imitator.score(&features));
                    PendingCandidate { candidate, features }
                })
                .collect();
            let views: Vec<CandidateView> =
                pending.iter().enumerate().map(|(i, p)| candidate_view(i, &p.candidate)).collect();
            session.pending = Some(pending);
            Ok(Json(json!({ "candidates": views })))
        }
    }
}

#[derive(Deserialize)]
struct SelectionRequest {
    labels: Vec<u8>,
    continue_with: usize,
}

async fn selection(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let session = state.session(&id)?;
    let req: SelectionRequest = parse_body(&body)?;
    let mut session = session.lock().await;
    let Some(pending) = session.pending.as_ref() else {
        return Err(ApiError(StatusCode::CONFLICT, "no candidates are pending".into()));
    };
    let unprocessable = |m: String| Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, m));
    if req.labels.len() != pending.len() {
        return unprocessable(format!("expected {} labels, got {}", pending.len(), req.labels.len()));
    }
    if req.labels.iter().any(|&l| l > 1) {
        return unprocessable("labels must be 0 or 1".into());
    }
    if req.labels.get(req.continue_with) != Some(&1) {
        return unprocessable(format!("continue_with {} is not labeled 1", req.continue_with));
    }

    let record = DemoRecord {
        v: DemoRecord::VERSION,
        session_id: session.id.clone(),
        turn_index: session.transcript.len(),
        context_digest: context_digest(&session.transcript),
        candidates: pending
            .iter()
            .zip(&req.labels)
            .map(|(p, &selected)| DemoCandidate {
                text: p.candidate.utterance.text().to_string(),
                tokens: p.candidate.utterance.tokens().to_vec(),
                selected,
                features: p.features.clone(),
            })
            .collect(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    {
        let _writer = state.0.demo_writer.lock().await;
        append_demo(&state.0.settings.demo_log, &record).map_err(internal)?;
    }
    let chosen = sys_turn(&pending[req.continue_with].candidate);
    let view = TurnView::from(&chosen);
    session.pending = None;
    session.push(chosen);
    Ok(Json(json!({ "sys_turn": view })))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let session = state.session(&id)?;
    let session = session.lock().await;
    let transcript: Vec<TurnView> = session.transcript.iter().map(TurnView::from).collect();
    let pending: Option<Vec<CandidateView>> = session
        .pending
        .as_ref()
        .map(|p| p.iter().enumerate().map(|(i, c)| candidate_view(i, &c.candidate)).collect());
    Ok(Json(json!({
        "session_id": session.id,
        "mode": session.mode,
        "transcript": transcript,
        "profiles": {
            "usr": session.profiles.usr.entries(),
            "sys": session.profiles.sys.entries(),
        },
        "pending": pending,
    })))
}

async fn export_demos(State(state): State<AppState>) -> Result<Response, ApiError> {
    let _writer = state.0.demo_writer.lock().await;
    let records = load_demos(&state.0.settings.demo_log).map_err(internal)?;
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r).map_err(internal)?);
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn metrics(State(state): State<AppState>) -> Result<Json<MetricsReport>, ApiError> {
    let models = state.models()?;
    let Some(corpus) = state.0.metrics_corpus.clone() else {
        return Err(ApiError(StatusCode::SERVICE_UNAVAILABLE, "no metrics corpus configured".into()));
    };
    let mut cache = state.0.metrics.lock().await;
    if let Some(report) = cache.as_ref() {
        return Ok(Json(report.clone()));
    }
    let settings = state.0.settings.clone();
    let report = tokio::task::spawn_blocking(move || {
        eval_metrics(
            &models.policy,
            &models.imitator,
            &corpus,
            &settings.decoding,
            &settings.detector,
            settings.seed,
        )
    })
    .await
    .map_err(internal)?
    .map_err(internal)?;
    *cache = Some(report.clone());
    Ok(Json(report))
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let body = match &state.0.models {
        Some(m) => json!({
            "status": "ok",
            "models_loaded": true,
            "policy_digest": m.policy.params.digest(),
            "vocab_fingerprint": m.policy.vocab.fingerprint(),
            "imitator_digest": m.imitator.digest(),
        }),
        None => json!({ "status": "ok", "models_loaded": false }),
    };
    Json(body)
}
