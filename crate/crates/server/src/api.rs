//! Routes and handlers.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cytotune_core::adapt::AdaptError;
use cytotune_core::engine::{assess_on, preview_on};
use cytotune_core::explain::{EditViolation, WhatIf};
use cytotune_core::{CellClass, EngineError, Intervention, InterventionAction, StepEdit};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{Any, CorsLayer};

use crate::state::{AppState, VersionInfo};

pub const AUTHOR_HEADER: &str = "x-author-id";
pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 1000;

pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> Router {
    let mut app = Router::new()
        .route("/samples", get(list_samples))
        .route("/samples/{id}/assessment", get(assessment))
        .route("/interventions", post(submit_intervention))
        .route("/whatif", post(preview))
        .route("/model/versions", get(versions))
        .route("/metrics", get(metrics))
        .route("/schema", get(schema))
        .with_state(state);
    if let Some(origin) = cors_origin {
        let cors = CorsLayer::new()
            .allow_methods([Method::GET, Method::POST])
            .allow_headers(Any);
        let cors = match origin {
            "*" => cors.allow_origin(Any),
            o => match HeaderValue::from_str(o) {
                Ok(v) => cors.allow_origin(v),
                Err(_) => cors,
            },
        };
        app = app.layer(cors);
    }
    app
}

/// JSON error body: `{"error": code, "message": text, ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl ToString) -> Self {
        Self {
            status,
            body: json!({ "error": code, "message": message.to_string() }),
        }
    }

    fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.body[key] = serde_json::to_value(value).expect("error detail serializes");
        self
    }

    fn bad_request(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn unknown_sample(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_sample", format!("unknown sample `{id}`"))
    }

    fn invalid_edit(violations: &[EditViolation]) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_edit", "edits do not fit the explanation")
            .with("violations", violations)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        if let Some(v) = e.violations() {
            return Self::invalid_edit(v);
        }
        let msg = e.to_string();
        match e {
            EngineError::UnknownSample(id) => Self::unknown_sample(&id),
            EngineError::DuplicateIntervention(_) => Self::new(StatusCode::CONFLICT, "duplicate_intervention", msg),
            EngineError::Adapt(AdaptError::StaleBaseVersion { current, .. }) => {
                Self::new(StatusCode::CONFLICT, "stale_base_version", msg).with("current_version", current)
            }
            EngineError::Adapt(AdaptError::SameLabelOverride(_)) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "same_label_override", msg)
            }
            EngineError::Adapt(AdaptError::OverrideSaturated(_)) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "override_saturated", msg)
            }
            EngineError::Adapt(AdaptError::SampleMismatch { .. }) | EngineError::Schema(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "schema_mismatch", msg)
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize)]
struct SampleSummary {
    id: String,
    predicted: CellClass,
    confidence: f64,
    model_version: u64,
}

#[derive(Debug, Serialize)]
struct Page {
    items: Vec<SampleSummary>,
    total: usize,
    limit: usize,
    offset: usize,
}

fn paging_param(params: &HashMap<String, String>, key: &str, default: usize) -> Result<usize, ApiError> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiError::bad_request(format!("`{key}` must be a non-negative integer, got `{v}`"))),
    }
}

async fn list_samples(
    State(state): State<Arc<AppState>>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Page> {
    let limit = paging_param(&params, "limit", DEFAULT_PAGE)?;
    let offset = paging_param(&params, "offset", 0)?;
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!("`limit` must be in 1..={MAX_PAGE}")));
    }
    let snap = state.snapshot();
    let items = snap
        .samples
        .iter()
        .skip(offset)
        .take(limit)
        .map(|s| {
            let p = snap.current.predict(s).map_err(EngineError::from)?;
            Ok(SampleSummary {
                id: s.id.clone(),
                confidence: p.confidence_of(p.predicted),
                predicted: p.predicted,
                model_version: p.model_version,
            })
        })
        .collect::<Result<_, ApiError>>()?;
    Ok(Json(Page {
        items,
        total: snap.samples.len(),
        limit,
        offset,
    }))
}

async fn assessment(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<cytotune_core::Assessment> {
    let snap = state.snapshot();
    let sample = snap.sample(&id).ok_or_else(|| ApiError::unknown_sample(&id))?;
    Ok(Json(assess_on(&snap.current, sample)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionRequest {
    pub id: Option<String>,
    pub sample_id: String,
    pub base_model_version: u64,
    pub action: InterventionAction,
    pub author: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InterventionResponse {
    /// Version after the intervention and any retrain it triggered.
    pub new_version: u64,
    pub accepted_seq: u64,
    pub whatif_echo: WhatIf,
    pub direct_version: u64,
    pub retrained: bool,
    pub content_hash: String,
}

async fn submit_intervention(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<InterventionRequest>, JsonRejection>,
) -> ApiResult<InterventionResponse> {
    let Json(req) = body?;
    let author = headers
        .get(AUTHOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or(req.author)
        .unwrap_or_else(|| "anonymous".to_string());
    let intervention = Intervention {
        id: req.id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string()),
        sample_id: req.sample_id,
        author,
        timestamp: chrono::Utc::now(),
        base_model_version: req.base_model_version,
        action: req.action,
    };
    let commit = state.write(move |engine| engine.commit(intervention)).await?;
    let last = commit.final_version().clone();
    Ok(Json(InterventionResponse {
        new_version: last.version,
        accepted_seq: commit.seq,
        whatif_echo: commit.whatif_echo,
        direct_version: commit.direct.version,
        retrained: commit.retrained.is_some(),
        content_hash: last.content_hash.clone(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub sample_id: String,
    #[serde(default)]
    pub edits: Vec<StepEdit>,
}

#[derive(Debug, Serialize)]
struct WhatIfResponse {
    #[serde(flatten)]
    preview: WhatIf,
    model_version: u64,
}

async fn preview(
    State(state): State<Arc<AppState>>,
    body: Result<Json<WhatIfRequest>, JsonRejection>,
) -> ApiResult<WhatIfResponse> {
    let Json(req) = body?;
    let snap = state.snapshot();
    let sample = snap
        .sample(&req.sample_id)
        .ok_or_else(|| ApiError::unknown_sample(&req.sample_id))?;
    let preview = preview_on(&snap.current, sample, &req.edits)?;
    Ok(Json(WhatIfResponse {
        preview,
        model_version: snap.current.version,
    }))
}

#[derive(Debug, Serialize)]
struct VersionList<'a> {
    current_version: u64,
    versions: &'a [VersionInfo],
}

async fn versions(State(state): State<Arc<AppState>>) -> Response {
    let snap = state.snapshot();
    Json(VersionList {
        current_version: snap.current.version,
        versions: &snap.versions,
    })
    .into_response()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy_on_holdout: Option<f64>,
    pub interventions_total: usize,
    pub interventions_since_retrain: usize,
    pub current_version: u64,
    pub log_events: usize,
}

async fn metrics(State(state): State<Arc<AppState>>) -> Json<Metrics> {
    let snap = state.snapshot();
    Json(Metrics {
        accuracy_on_holdout: snap.versions.last().and_then(|v| v.accuracy_on_holdout),
        interventions_total: snap.interventions_total,
        interventions_since_retrain: snap.interventions_since_retrain,
        current_version: snap.current.version,
        log_events: snap.log_events,
    })
}

async fn schema(State(state): State<Arc<AppState>>) -> Json<cytotune_core::FeatureSchema> {
    Json(state.schema().clone())
}
