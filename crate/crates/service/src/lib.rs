//! HTTP assistant around an evidential privacy classifier.
//!
//! Predictions whose uncertainty exceeds the persona threshold are queued
//! for the user; the user's labels accumulate into a personal dataset that
//! a background job fine-tunes on. Every route speaks JSON and errors come
//! back as `{code, message, field_path?}`.

mod error;
pub mod session;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use evdl_core::checkpoint::{load_checkpoint, save_checkpoint};
use evdl_core::classifier::{fine_tune, History, ModelCheckpoint, TrainConfig};
use evdl_core::data::Dataset;
use evdl_core::decision::{
    compute_metrics, sweep_thresholds, Action, Channel, MetricsReport, PersonaConfig, Prediction, SweepPoint,
};
use evdl_core::evaluation::evidential_predictions;
use evdl_core::{Label, Risk, RngSeed};
use serde::{Deserialize, Serialize};

pub use error::ApiError;
use error::parse_body;
use session::{now_millis, DelegationItem, LabelRejection, Session, StateDir};

/// θ grid of the sweep endpoints.
pub fn sweep_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub state_dir: std::path::PathBuf,
    /// Used when the state directory holds no checkpoint yet.
    pub initial_model: Option<ModelCheckpoint>,
    /// Items scored by `/metrics` and `/sweeps`, also addressable by id in `/predict`.
    pub eval_set: Option<Dataset>,
    pub train_defaults: TrainConfig,
    pub default_persona: PersonaConfig,
}

impl ServiceConfig {
    pub fn new(state_dir: impl Into<std::path::PathBuf>) -> Self {
        Self {
            state_dir: state_dir.into(),
            initial_model: None,
            eval_set: None,
            train_defaults: TrainConfig::default(),
            default_persona: PersonaConfig::default(),
        }
    }
}

/// A checkpoint together with the version number requests report.
#[derive(Debug)]
pub struct ActiveModel {
    pub version: u64,
    pub checkpoint: ModelCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Idle,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobStatus {
    pub state: JobState,
    pub job_id: u64,
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    pub personal_examples: usize,
    pub model_version: Option<u64>,
    pub history: History,
    pub error: Option<String>,
}

impl JobStatus {
    fn idle() -> Self {
        Self {
            state: JobState::Idle,
            job_id: 0,
            started_at: None,
            finished_at: None,
            personal_examples: 0,
            model_version: None,
            history: Vec::new(),
            error: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsSnapshot {
    pub model_version: u64,
    pub theta: f64,
    pub evaluated: usize,
    pub report: MetricsReport,
    pub sweep: Vec<SweepPoint>,
}

struct Inner {
    dir: StateDir,
    model: RwLock<Option<Arc<ActiveModel>>>,
    session: Mutex<Session>,
    job: Mutex<JobStatus>,
    eval: Option<Dataset>,
    train_defaults: TrainConfig,
    metrics_cache: Mutex<Option<MetricsSnapshot>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl AppState {
    /// Restores a session from the state directory. A checkpoint saved
    /// there by an earlier fine-tune takes precedence over `initial_model`.
    pub fn open(config: ServiceConfig) -> evdl_core::Result<Self> {
        let dir = StateDir::new(&config.state_dir)?;
        let model = if dir.model().exists() {
            Some(load_checkpoint(dir.model())?)
        } else {
            config.initial_model
        };
        let (schema, dim) = match &model {
            Some(m) => (m.feature_schema_id.clone(), m.spec().input_dim),
            None => (String::from("unset"), 1),
        };
        if let (Some(eval), Some(_)) = (&config.eval_set, &model) {
            if eval.feature_dim() != dim {
                return Err(evdl_core::Error::Domain(format!(
                    "evaluation set has {} features, model expects {dim}",
                    eval.feature_dim()
                )));
            }
        }
        let session = Session::restore(dir.clone(), config.default_persona, &schema, dim)?;
        log::info!(
            "session restored: {} pending, {} personal examples",
            session.pending_count(),
            session.personal().len()
        );
        Ok(Self(Arc::new(Inner {
            dir,
            model: RwLock::new(model.map(|checkpoint| Arc::new(ActiveModel { version: 1, checkpoint }))),
            session: Mutex::new(session),
            job: Mutex::new(JobStatus::idle()),
            eval: config.eval_set,
            train_defaults: config.train_defaults,
            metrics_cache: Mutex::new(None),
        })))
    }

    /// The serving model; callers keep this snapshot for the whole request.
    pub fn model(&self) -> Option<Arc<ActiveModel>> {
        self.0.model.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn require_model(&self) -> Result<Arc<ActiveModel>, ApiError> {
        self.model().ok_or_else(|| ApiError::conflict("no model loaded"))
    }

    fn swap_model(&self, checkpoint: ModelCheckpoint) -> u64 {
        let mut slot = self.0.model.write().unwrap_or_else(|p| p.into_inner());
        let version = slot.as_ref().map_or(1, |m| m.version + 1);
        *slot = Some(Arc::new(ActiveModel { version, checkpoint }));
        version
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/delegations", get(list_delegations))
        .route("/delegations/{id}/label", post(submit_label))
        .route("/persona", get(get_persona).put(put_persona))
        .route("/finetune", post(start_finetune))
        .route("/finetune/status", get(finetune_status))
        .route("/metrics", get(metrics))
        .route("/sweeps", get(sweeps))
        .with_state(state)
}

/// Serves until the process ends.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictRequest {
    item_id: Option<String>,
    features: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct PredictResponse {
    item_id: String,
    predicted_label: Label,
    p_bar: f64,
    uncertainty: f64,
    entropy: f64,
    action: Action,
    theta: f64,
    enqueued: bool,
    model_version: u64,
}

/// Stable id for a request that sends features only.
fn content_id(features: &[f64]) -> String {
    let mut h = DefaultHasher::new();
    for f in features {
        f.to_bits().hash(&mut h);
    }
    format!("anon-{:016x}", h.finish())
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Result<Json<PredictResponse>, ApiError> {
    let req: PredictRequest = parse_body(&body)?;
    let model = state.require_model()?;
    let (item_id, features) = match (req.item_id, req.features) {
        (id, Some(features)) => {
            let id = id.unwrap_or_else(|| content_id(&features));
            (id, features)
        }
        (Some(id), None) => {
            let known = lock(&state.0.session).item(&id).map(|it| it.features.clone());
            let features = known
                .or_else(|| state.0.eval.as_ref().and_then(|d| d.get(&id)).map(|ex| ex.features.clone()))
                .ok_or_else(|| ApiError::not_found(format!("unknown item {id:?}; send its features")))?;
            (id, features)
        }
        (None, None) => return Err(ApiError::validation("features", "send features or a known item_id")),
    };
    let dim = model.checkpoint.spec().input_dim;
    if features.len() != dim {
        return Err(ApiError::validation(
            "features",
            format!("expected {dim} features, got {}", features.len()),
        ));
    }
    let forward = model.checkpoint.forward(&features)?;
    let mut session = lock(&state.0.session);
    let theta = session.persona.theta;
    let pred = Prediction::from_opinion(&item_id, &forward.opinion, theta);
    let enqueued = if pred.action == Action::Delegate {
        session
            .enqueue(DelegationItem {
                item_id: item_id.clone(),
                features,
                p_bar: pred.p_bar.value(),
                uncertainty_u: pred.uncertainty_u,
                theta_at_enqueue: theta,
                created_at: now_millis(),
                status: session::DelegationStatus::Pending,
                user_label: None,
            })
            .map_err(ApiError::from)?
    } else {
        false
    };
    Ok(Json(PredictResponse {
        item_id,
        predicted_label: pred.predicted_label,
        p_bar: pred.p_bar.value(),
        uncertainty: pred.uncertainty_u,
        entropy: pred.entropy,
        action: pred.action,
        theta,
        enqueued,
        model_version: model.version,
    }))
}

#[derive(Debug, Serialize)]
struct DelegationList {
    items: Vec<DelegationItem>,
    pending: usize,
    personal_examples: usize,
}

async fn list_delegations(State(state): State<AppState>) -> Json<DelegationList> {
    let session = lock(&state.0.session);
    let items: Vec<DelegationItem> = session.pending().into_iter().cloned().collect();
    Json(DelegationList {
        pending: items.len(),
        items,
        personal_examples: session.personal().len(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    label: Label,
}

#[derive(Debug, Serialize)]
struct LabelResponse {
    item: DelegationItem,
    pending: usize,
    personal_examples: usize,
}

async fn submit_label(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<LabelResponse>, ApiError> {
    let req: LabelRequest = parse_body(&body)?;
    let mut session = lock(&state.0.session);
    let item = match session.submit_label(&id, req.label) {
        Ok(item) => item.clone(),
        Err(LabelRejection::Unknown) => return Err(ApiError::not_found(format!("no delegation {id:?}"))),
        Err(LabelRejection::AlreadyLabeled) => return Err(ApiError::conflict(format!("{id:?} is already labeled"))),
        Err(LabelRejection::Storage(e)) => return Err(ApiError::internal(e.to_string())),
    };
    Ok(Json(LabelResponse {
        item,
        pending: session.pending_count(),
        personal_examples: session.personal().len(),
    }))
}

#[derive(Debug, Serialize)]
struct PersonaResponse {
    persona: PersonaConfig,
    /// Risk matrix the serving model was trained with.
    model_risk_matrix: Option<Risk>,
    /// The persona's risk matrix differs from the serving model's.
    risk_matrix_pending: bool,
    theta_applies: &'static str,
    risk_matrix_applies: &'static str,
    message: String,
}

fn persona_response(persona: PersonaConfig, model: Option<&ActiveModel>) -> PersonaResponse {
    let model_risk = model.map(|m| m.checkpoint.risk_matrix);
    let pending = model_risk != Some(persona.risk_matrix);
    let message = if pending {
        "theta is active now; risk matrix pending until next training".to_string()
    } else {
        "theta is active now; the serving model already uses this risk matrix".to_string()
    };
    PersonaResponse {
        persona,
        model_risk_matrix: model_risk,
        risk_matrix_pending: pending,
        theta_applies: "immediately",
        risk_matrix_applies: "next_training",
        message,
    }
}

async fn get_persona(State(state): State<AppState>) -> Json<PersonaResponse> {
    let persona = lock(&state.0.session).persona.clone();
    Json(persona_response(persona, state.model().as_deref()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonaUpdate {
    theta: f64,
    risk_matrix: Risk,
    persona_name: Option<String>,
}

async fn put_persona(State(state): State<AppState>, body: Bytes) -> Result<Json<PersonaResponse>, ApiError> {
    let update: PersonaUpdate = parse_body(&body)?;
    if !(0.0..=1.0).contains(&update.theta) {
        return Err(ApiError::validation("theta", format!("theta must lie in [0, 1], got {}", update.theta)));
    }
    let mut session = lock(&state.0.session);
    let persona = PersonaConfig {
        risk_matrix: update.risk_matrix,
        theta: update.theta,
        persona_name: update.persona_name.unwrap_or_else(|| session.persona.persona_name.clone()),
    };
    session.set_persona(persona.clone()).map_err(ApiError::from)?;
    drop(session);
    Ok(Json(persona_response(persona, state.model().as_deref())))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FinetuneRequest {
    epochs: Option<u32>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    lr_decay_per_epoch: Option<f64>,
    seed: Option<u64>,
}

impl FinetuneRequest {
    fn apply(&self, base: TrainConfig) -> Result<TrainConfig, ApiError> {
        let tc = TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            lr_decay_per_epoch: self.lr_decay_per_epoch.unwrap_or(base.lr_decay_per_epoch),
            seed: self.seed.map(RngSeed).unwrap_or(base.seed),
        };
        tc.validate().map_err(|e| ApiError::validation("", e.to_string()))?;
        Ok(tc)
    }
}

async fn start_finetune(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<JobStatus>), ApiError> {
    let req: FinetuneRequest = if body.iter().all(u8::is_ascii_whitespace) {
        FinetuneRequest::default()
    } else {
        parse_body(&body)?
    };
    let tc = req.apply(state.0.train_defaults)?;
    let model = state.require_model()?;
    let mut job = lock(&state.0.job);
    if job.state == JobState::Running {
        return Err(ApiError::conflict(format!("fine-tune job {} is still running", job.job_id)));
    }
    let (personal, risk) = {
        let session = lock(&state.0.session);
        (session.personal().clone(), session.persona.risk_matrix)
    };
    if personal.is_empty() {
        return Err(ApiError::conflict("no labeled personal examples to fine-tune on"));
    }
    let job_id = job.job_id + 1;
    *job = JobStatus {
        state: JobState::Running,
        job_id,
        started_at: Some(now_millis()),
        finished_at: None,
        personal_examples: personal.len(),
        model_version: Some(model.version),
        history: Vec::new(),
        error: None,
    };
    let snapshot = job.clone();
    drop(job);
    log::info!("fine-tune job {job_id} started on {} examples", personal.len());

    let worker = state.clone();
    tokio::task::spawn_blocking(move || {
        let base = model.checkpoint.clone().with_risk_matrix(risk);
        let outcome = fine_tune(&base, &personal, &tc).and_then(|(tuned, history)| {
            save_checkpoint(&tuned, worker.0.dir.model())?;
            Ok((tuned, history))
        });
        let mut job = lock(&worker.0.job);
        job.finished_at = Some(now_millis());
        match outcome {
            Ok((tuned, history)) => {
                let version = worker.swap_model(tuned);
                *lock(&worker.0.metrics_cache) = None;
                job.state = JobState::Succeeded;
                job.model_version = Some(version);
                job.history = history;
                log::info!("fine-tune job {job_id} done; serving model version {version}");
            }
            Err(e) => {
                job.state = JobState::Failed;
                job.error = Some(e.to_string());
                log::error!("fine-tune job {job_id} failed: {e}");
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(snapshot)))
}

async fn finetune_status(State(state): State<AppState>) -> Json<JobStatus> {
    Json(lock(&state.0.job).clone())
}

#[derive(Debug, Serialize)]
struct MetricsResponse {
    #[serde(flatten)]
    snapshot: MetricsSnapshot,
    pending_delegations: usize,
    personal_examples: usize,
}

async fn metrics(State(state): State<AppState>) -> Result<Json<MetricsResponse>, ApiError> {
    let model = state.require_model()?;
    let eval = state
        .0
        .eval
        .as_ref()
        .ok_or_else(|| ApiError::conflict("no evaluation set configured"))?;
    let (theta, pending, personal) = {
        let s = lock(&state.0.session);
        (s.persona.theta, s.pending_count(), s.personal().len())
    };
    let cached = lock(&state.0.metrics_cache)
        .as_ref()
        .filter(|m| m.model_version == model.version && m.theta == theta)
        .cloned();
    let snapshot = match cached {
        Some(s) => s,
        None => {
            let preds = evidential_predictions(&model.checkpoint, eval, theta)?;
            let gold = eval.labels();
            let snapshot = MetricsSnapshot {
                model_version: model.version,
                theta,
                evaluated: preds.len(),
                report: compute_metrics(&preds, &gold)?,
                sweep: sweep_thresholds(&preds, &gold, &sweep_grid(), Channel::U)?,
            };
            *lock(&state.0.metrics_cache) = Some(snapshot.clone());
            snapshot
        }
    };
    Ok(Json(MetricsResponse {
        snapshot,
        pending_delegations: pending,
        personal_examples: personal,
    }))
}

#[derive(Debug, Deserialize)]
struct SweepQuery {
    channel: Option<String>,
}

#[derive(Debug, Serialize)]
struct SweepResponse {
    channel: Channel,
    model_version: u64,
    current_theta: f64,
    points: Vec<SweepPoint>,
}

async fn sweeps(State(state): State<AppState>, Query(q): Query<SweepQuery>) -> Result<Json<SweepResponse>, ApiError> {
    let channel: Channel = match q.channel.as_deref() {
        None => Channel::U,
        Some(s) => s
            .parse()
            .map_err(|_| ApiError::validation("channel", format!("channel must be u or entropy, got {s:?}")))?,
    };
    let model = state.require_model()?;
    let eval = state
        .0
        .eval
        .as_ref()
        .ok_or_else(|| ApiError::conflict("no evaluation set configured"))?;
    let theta = lock(&state.0.session).persona.theta;
    let preds = evidential_predictions(&model.checkpoint, eval, theta)?;
    Ok(Json(SweepResponse {
        channel,
        model_version: model.version,
        current_theta: theta,
        points: sweep_thresholds(&preds, &eval.labels(), &sweep_grid(), channel)?,
    }))
}
