//! Versioned JSON API under `/api/v1`.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::Deserialize;
use serde_json::{json, Value};
use undr_core::needslog::{EventError, SelectionEvent, SessionProfile};
use undr_core::{RankingMethod, FORMAT_VERSION};

use crate::state::{EngineState, StateError};

pub const DEFAULT_K: usize = 5;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.into(), message: message.into(), details: Value::Null }
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if !self.details.is_null() {
            error["details"] = self.details;
        }
        (self.status, Json(json!({ "format_version": FORMAT_VERSION, "error": error }))).into_response()
    }
}

impl From<StateError> for ApiError {
    fn from(e: StateError) -> Self {
        let message = e.to_string();
        match &e {
            StateError::UnknownCohort(c) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_cohort", message).with_details(json!({ "cohort": c }))
            }
            StateError::NoTable(c) => {
                ApiError::new(StatusCode::NOT_FOUND, "no_weight_table", message).with_details(json!({ "cohort": c }))
            }
            StateError::UnknownTable { cohort, hash } => ApiError::new(StatusCode::NOT_FOUND, "unknown_table", message)
                .with_details(json!({ "cohort": cohort, "hash": hash })),
            StateError::UnknownSession(s) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_session", message).with_details(json!({ "session_id": s }))
            }
            StateError::BelowMinimumPool { cohort, count, min_pool } => {
                ApiError::new(StatusCode::CONFLICT, "below_minimum_pool", message)
                    .with_details(json!({ "cohort": cohort, "count": count, "min_pool": min_pool }))
            }
            StateError::Event(ev) => {
                let status = match ev {
                    EventError::SessionFinalized { .. } => StatusCode::CONFLICT,
                    _ => StatusCode::UNPROCESSABLE_ENTITY,
                };
                let details = serde_json::to_value(ev).expect("event error serializes");
                let code = details["code"].as_str().unwrap_or("invalid_event").to_owned();
                ApiError::new(status, &code, message).with_details(details)
            }
            StateError::Ranking(_) | StateError::Weights(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "schema_mismatch", message)
            }
            StateError::CorruptLog { .. } | StateError::Io { .. } => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", message)
            }
        }
    }
}

fn bad_body(e: JsonRejection) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", e.body_text())
}

type ApiResult = Result<Response, ApiError>;

fn ok(value: Value) -> ApiResult {
    Ok(Json(value).into_response())
}

pub fn router(state: Arc<EngineState>) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/facets", get(facets))
        .route("/api/v1/products", get(products))
        .route("/api/v1/rankings", get(rankings))
        .route("/api/v1/events/selection", post(selection))
        .route("/api/v1/sessions/{id}", get(session))
        .route("/api/v1/sessions/{id}/finalize", post(finalize))
        .route("/api/v1/weights/recompute", post(recompute))
        .route("/api/v1/weights/{cohort}", get(weights))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

async fn health(State(state): State<Arc<EngineState>>) -> ApiResult {
    ok(json!({ "format_version": FORMAT_VERSION, "status": "ok", "state": state.health() }))
}

async fn facets(State(state): State<Arc<EngineState>>) -> ApiResult {
    ok(json!({ "format_version": FORMAT_VERSION, "schema": state.schema() }))
}

fn parse_usize(params: &HashMap<String, String>, key: &str, default: usize) -> Result<usize, ApiError> {
    match params.get(key) {
        None => Ok(default),
        Some(raw) => raw.parse().map_err(|_| {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid_parameter", format!("`{key}` must be a non-negative integer"))
                .with_details(json!({ "field": key, "value": raw }))
        }),
    }
}

async fn products(State(state): State<Arc<EngineState>>, Query(params): Query<HashMap<String, String>>) -> ApiResult {
    let catalog = state.catalog();
    let offset = parse_usize(&params, "offset", 0)?;
    let limit = parse_usize(&params, "limit", catalog.len())?;
    let page: Vec<_> = catalog.iter().skip(offset).take(limit).collect();
    ok(json!({ "format_version": FORMAT_VERSION, "total": catalog.len(), "offset": offset, "products": page }))
}

async fn rankings(State(state): State<Arc<EngineState>>, Query(params): Query<HashMap<String, String>>) -> ApiResult {
    let method: RankingMethod = match params.get("method") {
        None => RankingMethod::Undr,
        Some(m) => m.parse().map_err(|e: String| {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid_parameter", e).with_details(json!({ "field": "method", "value": m }))
        })?,
    };
    let cohort = params.get("cohort").map_or("all", String::as_str);
    let k = parse_usize(&params, "k", DEFAULT_K)?;
    let view = state.ranking(method, cohort, k)?;
    ok(json!({
        "format_version": FORMAT_VERSION,
        "generation": view.generation,
        "k": view.k,
        "ranking": view.ranking,
    }))
}

async fn selection(State(state): State<Arc<EngineState>>, body: Result<Json<SelectionEvent>, JsonRejection>) -> ApiResult {
    let Json(event) = body.map_err(bad_body)?;
    let outcome = state.post_selection(&event, Utc::now())?;
    let pending = state.pending(&event.session_id)?;
    ok(json!({
        "format_version": FORMAT_VERSION,
        "session_id": event.session_id,
        "outcome": outcome,
        "selections": pending,
    }))
}

async fn session(State(state): State<Arc<EngineState>>, Path(id): Path<String>) -> ApiResult {
    let pending = state.pending(&id)?;
    ok(json!({ "format_version": FORMAT_VERSION, "session_id": id, "selections": pending }))
}

async fn finalize(State(state): State<Arc<EngineState>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let profile: SessionProfile = if body.iter().all(u8::is_ascii_whitespace) {
        SessionProfile::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", e.to_string()))?
    };
    let (record, fresh) = state.finalize(&id, &profile, Utc::now())?;
    ok(json!({ "format_version": FORMAT_VERSION, "record": record, "fresh": fresh }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecomputeRequest {
    #[serde(default)]
    cohort: Option<String>,
}

async fn recompute(State(state): State<Arc<EngineState>>, body: Bytes) -> ApiResult {
    let request: RecomputeRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RecomputeRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", e.to_string()))?
    };
    let cohort = request.cohort.filter(|c| c != "*");
    let worker = state.clone();
    let report = tokio::task::spawn_blocking(move || worker.recompute(cohort.as_deref(), Utc::now()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    ok(json!({ "format_version": FORMAT_VERSION, "report": report }))
}

async fn weights(
    State(state): State<Arc<EngineState>>,
    Path(cohort): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult {
    let table = state.table(&cohort, params.get("hash").map(String::as_str))?;
    Ok(Json(table.as_ref()).into_response())
}
