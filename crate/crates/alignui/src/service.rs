//! HTTP API.
//!
//! Readers take the current dataset snapshot (an `Arc`) and never wait on
//! writers. Every mutation goes through the single [`Writer`]: it merges
//! into a copy, appends to the selections log and only then swaps the
//! snapshot.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, RwLock};

use alignui_core::codegen::emit_abstract_spec;
use alignui_core::dataset::{fixtures, DatasetError, PreferenceSelection};
use alignui_core::experiment::{
    assignment_for, study_task, summarize, Assignment, ComparisonPair, Condition, GroupBy,
    SelectionRecord, STUDY_TASKS,
};
use alignui_core::llm::Gateway;
use alignui_core::reasoning::{
    fallback_recommendation, reason_ensemble, ReasoningError, UserContext,
};
use alignui_core::selections::{read_log, LogError, LogEvent, PreferenceEntry, SelectionLog};
use alignui_core::{
    default_catalog, parse_kind, Aspect, ControlCatalog, PreferenceDataset, RequirementTag,
};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Mutex;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::config::ServiceConfig;

/// Upper bound on `runs` accepted per request.
pub const MAX_RUNS: u32 = 50;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("dataset {path}: {source}")]
    Dataset { path: String, source: DatasetError },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("replaying selections log: {0}")]
    Replay(DatasetError),
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

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

impl From<ReasoningError> for ApiError {
    fn from(e: ReasoningError) -> Self {
        match e {
            ReasoningError::InvalidContext(_) | ReasoningError::ZeroRuns => {
                ApiError::bad_request(e.to_string())
            }
            ReasoningError::NoRelevantTask => {
                ApiError::unprocessable("no_relevant_task", e.to_string())
            }
            ReasoningError::Gateway(_) | ReasoningError::Schema(_) => {
                ApiError::new(StatusCode::BAD_GATEWAY, "gateway_failure", e.to_string())
            }
            ReasoningError::EnsembleFailed { .. } => ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "ensemble_failed",
                e.to_string(),
            ),
            ReasoningError::EmptyWeights => ApiError::internal(e.to_string()),
        }
    }
}

impl From<DatasetError> for ApiError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::UnknownControl(_) => {
                ApiError::unprocessable("unknown_control", e.to_string())
            }
            DatasetError::UnknownAspect(_) => {
                ApiError::unprocessable("unknown_aspect", e.to_string())
            }
            DatasetError::UnknownTask(_) => ApiError::unprocessable("unknown_task", e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<LogError> for ApiError {
    fn from(e: LogError) -> Self {
        tracing::error!(error = %e, "selections log write failed");
        ApiError::internal("could not record the submission")
    }
}

type Answered = HashSet<(String, String, Aspect, ComparisonPair)>;

struct Writer {
    log: SelectionLog,
    issued: HashMap<String, Assignment>,
    answered: Answered,
}

pub struct AppState {
    config: ServiceConfig,
    catalog: ControlCatalog,
    gateway: Option<Arc<Gateway>>,
    snapshot: RwLock<Arc<PreferenceDataset>>,
    /// `Err` holds why a condition cannot be drawn from the loaded dataset.
    conditions: BTreeMap<Condition, Result<Option<Arc<PreferenceDataset>>, String>>,
    writer: Mutex<Writer>,
}

impl AppState {
    /// Loads the dataset, replays the selections log into it and
    /// materializes the condition subsets. `gateway` of `None` means the
    /// deterministic offline recommender.
    pub fn new(config: ServiceConfig, gateway: Option<Gateway>) -> Result<Self, StartupError> {
        let base = match &config.service.dataset {
            Some(path) => load_dataset(path)?,
            None => fixtures::full(),
        };
        let mut conditions = BTreeMap::new();
        for c in Condition::ALL {
            let d = match c.dataset(&base, config.service.condition_seed) {
                Ok(d) => Ok(d.map(Arc::new)),
                Err(e @ DatasetError::NTooLarge { .. }) => {
                    tracing::warn!(condition = %c, "condition unavailable: {e}");
                    Err(e.to_string())
                }
                Err(source) => {
                    return Err(StartupError::Dataset {
                        path: format!("subset for {c}"),
                        source,
                    })
                }
            };
            conditions.insert(c, d);
        }

        let events = read_log(&config.service.selections_log)?;
        let mut live = base;
        let mut issued = HashMap::new();
        let mut answered = HashSet::new();
        let mut selections = Vec::new();
        for event in &events {
            match event {
                LogEvent::Preference(p) => selections.push(with_task_entry(p.selection())),
                LogEvent::Selection(s) => {
                    issued.entry(s.participant.clone()).or_insert_with(|| {
                        assignment_for(&s.participant, &config.service.assignment_key)
                    });
                    answered.insert((s.participant.clone(), s.task.clone(), s.aspect, s.pair));
                }
            }
        }
        if !selections.is_empty() {
            live = live.merge(&selections).map_err(StartupError::Replay)?;
        }
        tracing::info!(
            events = events.len(),
            total_pieces = live.total_pieces(),
            "dataset ready"
        );

        let log = SelectionLog::open(&config.service.selections_log)?;
        Ok(Self {
            catalog: default_catalog(),
            gateway: gateway.map(Arc::new),
            snapshot: RwLock::new(Arc::new(live)),
            conditions,
            writer: Mutex::new(Writer {
                log,
                issued,
                answered,
            }),
            config,
        })
    }

    pub fn dataset(&self) -> Arc<PreferenceDataset> {
        self.snapshot
            .read()
            .expect("snapshot lock poisoned")
            .clone()
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn swap(&self, next: PreferenceDataset) {
        *self.snapshot.write().expect("snapshot lock poisoned") = Arc::new(next);
    }
}

fn load_dataset(path: &Path) -> Result<PreferenceDataset, StartupError> {
    let err = |source| StartupError::Dataset {
        path: path.display().to_string(),
        source,
    };
    let bytes = std::fs::read(path).map_err(|e| {
        err(DatasetError::Schema {
            path: String::new(),
            detail: e.to_string(),
        })
    })?;
    PreferenceDataset::load(&bytes).map_err(err)
}

/// Study tasks may receive votes before the dataset knows them.
fn with_task_entry(mut s: PreferenceSelection) -> PreferenceSelection {
    if let Some(t) = study_task(&s.task) {
        s.task_entry = Some(t.entry());
    }
    s
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn body<T: DeserializeOwned>(payload: Result<Json<Value>, JsonRejection>) -> Result<T, ApiError> {
    let Json(value) = payload.map_err(|e| ApiError::bad_request(e.body_text()))?;
    serde_json::from_value(value).map_err(|e| ApiError::bad_request(e.to_string()))
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = cors_layer(&state.config.service.cors_allowlist);
    let router = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/generate", post(generate))
        .route("/v1/preferences", post(preferences))
        .route("/v1/tasks", get(tasks))
        .route("/v1/dataset/summary", get(dataset_summary))
        .route("/v1/experiment/assignment", get(assignment))
        .route("/v1/experiment/selection", post(selection))
        .route("/v1/experiment/summary", get(experiment_summary))
        .with_state(state);
    match cors {
        Some(layer) => router.layer(layer),
        None => router,
    }
}

fn cors_layer(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let values: Vec<HeaderValue> = origins
        .iter()
        .filter_map(|o| match HeaderValue::from_str(o) {
            Ok(v) => Some(v),
            Err(_) => {
                tracing::warn!(origin = %o, "ignoring invalid CORS origin");
                None
            }
        })
        .collect();
    Some(
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(values))
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([axum::http::header::CONTENT_TYPE]),
    )
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let mode = if state.gateway.is_some() {
        "model"
    } else {
        "offline"
    };
    Json(json!({"status": "ok", "mode": mode}))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateBody {
    task: String,
    aspects: Vec<String>,
    #[serde(default)]
    condition: Option<String>,
    #[serde(default)]
    runs: Option<u32>,
    #[serde(default)]
    requirement_tags: Option<Vec<RequirementTag>>,
    /// Dataset-style task name, used to name the control parameter.
    #[serde(default)]
    task_name: Option<String>,
}

#[derive(Serialize)]
struct GenerateResponse {
    condition: Option<Condition>,
    recommendation: alignui_core::reasoning::WeightedRecommendation,
    specs: Vec<alignui_core::ControlSpec>,
}

async fn generate(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<Value>, JsonRejection>,
) -> Result<Json<GenerateResponse>, ApiError> {
    let b: GenerateBody = body(payload)?;
    if b.aspects.is_empty() {
        return Err(ApiError::bad_request(
            "aspects must list at least one aspect",
        ));
    }
    let aspects = b
        .aspects
        .iter()
        .map(|a| a.parse::<Aspect>())
        .collect::<Result<Vec<_>, _>>()?;
    let condition = b
        .condition
        .as_deref()
        .map(|c| c.parse::<Condition>())
        .transpose()
        .map_err(|e| ApiError::unprocessable("unknown_condition", e.to_string()))?;
    let runs = b.runs.unwrap_or(state.config.service.n_runs);
    if runs == 0 || runs > MAX_RUNS {
        return Err(ApiError::bad_request(format!(
            "runs must be within 1..={MAX_RUNS}"
        )));
    }
    let mut ctx = UserContext::new(b.task, aspects)?;
    if let Some(tags) = b.requirement_tags {
        ctx = ctx.with_tags(tags);
    }

    let dataset = match condition {
        Some(c) => state.conditions[&c]
            .clone()
            .map_err(|e| ApiError::unprocessable("condition_unavailable", format!("{c}: {e}")))?,
        None => Some(state.dataset()),
    };

    let recommendation = match &state.gateway {
        Some(gw) => reason_ensemble(&ctx, dataset.as_deref(), &state.catalog, gw, runs).await?,
        None => {
            let d = dataset.ok_or_else(|| {
                ApiError::unprocessable(
                    "offline_without_dataset",
                    "the offline recommender needs a dataset; withoutpref requires a model",
                )
            })?;
            fallback_recommendation(&ctx, &d)?
        }
    };

    let entry = b.task_name.as_deref().and_then(|n| {
        study_task(n)
            .map(|t| t.entry())
            .or_else(|| state.dataset().task(n).map(|t| t.task.clone()))
    });
    let specs = if recommendation.kinds().is_empty() {
        Vec::new()
    } else {
        emit_abstract_spec(&recommendation, entry.as_ref())
            .map_err(|e| ApiError::internal(e.to_string()))?
    };
    Ok(Json(GenerateResponse {
        condition,
        recommendation,
        specs,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PreferenceBody {
    participant: String,
    task: String,
    aspect: String,
    kind: String,
    #[serde(default)]
    reason: String,
}

async fn preferences(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<Value>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let b: PreferenceBody = body(payload)?;
    if b.participant.trim().is_empty() || b.task.trim().is_empty() {
        return Err(ApiError::bad_request(
            "participant and task must not be empty",
        ));
    }
    let aspect: Aspect = b.aspect.parse()?;
    let kind = parse_kind(&b.kind).map_err(DatasetError::from)?;
    let entry = PreferenceEntry {
        timestamp: now(),
        participant: b.participant,
        task: b.task,
        aspect,
        kind,
        reason: b.reason,
    };

    let mut writer = state.writer.lock().await;
    let next = state
        .dataset()
        .merge(&[with_task_entry(entry.selection())])?;
    writer.log.append(&LogEvent::Preference(entry.clone()))?;
    let record = next.record(&entry.task, aspect)?;
    let body = json!({
        "task": entry.task,
        "aspect": aspect,
        "kind": kind,
        "count": record.count(kind),
        "cell_total": record.total(),
        "total_pieces": next.total_pieces(),
    });
    state.swap(next);
    drop(writer);
    Ok((StatusCode::CREATED, Json(body)))
}

async fn tasks(State(state): State<Arc<AppState>>) -> Json<Value> {
    let dataset: Vec<_> = state
        .dataset()
        .tasks()
        .iter()
        .map(|t| t.task.clone())
        .collect();
    let study: Vec<_> = STUDY_TASKS.iter().map(|t| t.entry()).collect();
    Json(json!({"dataset": dataset, "study": study}))
}

async fn dataset_summary(
    State(state): State<Arc<AppState>>,
) -> Json<alignui_core::dataset::DatasetSummary> {
    Json(state.dataset().summary())
}

#[derive(Deserialize)]
struct ParticipantQuery {
    participant: String,
}

async fn assignment(
    State(state): State<Arc<AppState>>,
    query: Result<Query<ParticipantQuery>, QueryRejection>,
) -> Result<Json<Assignment>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if q.participant.trim().is_empty() {
        return Err(ApiError::bad_request("participant must not be empty"));
    }
    let mut writer = state.writer.lock().await;
    let a = writer
        .issued
        .entry(q.participant.clone())
        .or_insert_with(|| assignment_for(&q.participant, &state.config.service.assignment_key))
        .clone();
    Ok(Json(a))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionBody {
    participant: String,
    task: String,
    aspect: String,
    pair: ComparisonPair,
    chosen: Condition,
}

async fn selection(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<Value>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let b: SelectionBody = body(payload)?;
    let aspect: Aspect = b.aspect.parse()?;
    let record = SelectionRecord {
        participant: b.participant,
        task: b.task,
        aspect,
        pair: b.pair,
        chosen: b.chosen,
        timestamp: now(),
    };
    let conflict = |m: String| ApiError::new(StatusCode::CONFLICT, "not_in_assignment", m);
    record.validate().map_err(|e| conflict(e.to_string()))?;

    let mut writer = state.writer.lock().await;
    let Some(assigned) = writer.issued.get(&record.participant) else {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_participant",
            format!("no assignment was issued to {:?}", record.participant),
        ));
    };
    if !assigned.contains(&record.task, aspect, record.pair) {
        return Err(conflict(format!(
            "{} / {} / {} is not in the participant's assignment",
            record.task,
            aspect.id(),
            record.pair
        )));
    }
    let total = assigned.items.len();
    let key = (
        record.participant.clone(),
        record.task.clone(),
        aspect,
        record.pair,
    );
    if writer.answered.contains(&key) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "duplicate_selection",
            "this comparison was already answered",
        ));
    }
    writer.log.append(&LogEvent::Selection(record.clone()))?;
    writer.answered.insert(key);
    let done = writer
        .answered
        .iter()
        .filter(|(p, ..)| *p == record.participant)
        .count();
    Ok((
        StatusCode::CREATED,
        Json(
            json!({"participant": record.participant, "answered": done, "remaining": total - done}),
        ),
    ))
}

#[derive(Deserialize)]
struct SummaryQuery {
    #[serde(default)]
    group_by: Option<String>,
}

async fn experiment_summary(
    State(state): State<Arc<AppState>>,
    query: Result<Query<SummaryQuery>, QueryRejection>,
) -> Result<Json<alignui_core::experiment::Summary>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let group_by: GroupBy = q
        .group_by
        .as_deref()
        .unwrap_or("aspect")
        .parse()
        .map_err(ApiError::bad_request)?;
    // Hold the writer so the read sees every acknowledged selection.
    let writer = state.writer.lock().await;
    let events = read_log(writer.log.path())?;
    drop(writer);
    let selections = alignui_core::selections::study_selections(&events);
    Ok(Json(summarize(&selections, group_by)))
}
