//! Read-only JSON service over loaded pipeline assets.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{report_json, Pipeline, PipelineConfig, PipelineError};
use crate::index::{pca_fit, project_points, projection_jsonl, read_labels, QueryResult};
use crate::sentiment::Head;

/// Rows used to fit the projection; larger indexes are sampled with a stride.
const PROJECTION_SAMPLE: usize = 5000;

pub struct AppState {
    pub pipeline: Pipeline,
    labels: HashMap<String, String>,
    projection: OnceLock<Result<String, String>>,
}

impl AppState {
    pub fn new(pipeline: Pipeline) -> Result<Self, PipelineError> {
        let labels = match &pipeline.config.labels {
            Some(p) => read_labels(p)?,
            None => HashMap::new(),
        };
        Ok(Self { pipeline, labels, projection: OnceLock::new() })
    }

    fn projection(&self) -> &Result<String, String> {
        self.projection.get_or_init(|| {
            let index = &self.pipeline.index;
            let stride = index.len().div_ceil(PROJECTION_SAMPLE).max(1);
            let sample: Vec<Vec<f64>> =
                index.iter().step_by(stride).map(|(_, v)| v.iter().map(|&x| f64::from(x)).collect()).collect();
            let model = pca_fit(&sample, 2).map_err(|e| e.to_string())?;
            let points = project_points(index, &model, &self.labels).map_err(|e| e.to_string())?;
            Ok(projection_jsonl(&points))
        })
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::UnknownQuery(_) | PipelineError::Index(crate::IndexError::UnknownId(_)) => StatusCode::NOT_FOUND,
            PipelineError::Index(_) | PipelineError::Sentiment(_) | PipelineError::Invalid(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn unprocessable(msg: impl ToString) -> ApiError {
    ApiError(StatusCode::UNPROCESSABLE_ENTITY, msg.to_string())
}

type Shared = Arc<AppState>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/posts/{id}", get(post_by_id))
        .route("/query", post(query))
        .route("/sentiment", post(sentiment))
        .route("/report", get(report))
        .route("/projection", get(projection))
        .route("/images/{id}", get(image))
        .with_state(Arc::new(state))
}

/// Loads the assets named by `config` and serves them on `addr` until the
/// process stops.
pub async fn serve(config: PipelineConfig, addr: &str) -> Result<(), PipelineError> {
    let state = AppState::new(Pipeline::load(config)?)?;
    let bind = |source| PipelineError::Bind { addr: addr.to_string(), source };
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(bind)?;
    tracing::info!(addr = %listener.local_addr().map_err(bind)?, "listening");
    axum::serve(listener, router(state)).await.map_err(bind)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn post_by_id(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    match s.pipeline.find_post(&id) {
        Some(p) => Ok(Json(p).into_response()),
        None => Err(ApiError(StatusCode::NOT_FOUND, format!("no post {id:?}"))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    image_id: Option<String>,
    vector: Option<Vec<f32>>,
    radius: Option<f64>,
    top: Option<usize>,
}

/// Radius search by default; `top` alone switches to k nearest neighbours,
/// and together with `radius` caps the number of hits.
async fn query(State(s): State<Shared>, Json(req): Json<QueryRequest>) -> Result<Json<Vec<QueryResult>>, ApiError> {
    let index = &s.pipeline.index;
    let vector: Vec<f32> = match (&req.image_id, &req.vector) {
        (Some(id), None) => index
            .vector(id)
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no feature vector for {id:?}")))?
            .to_vec(),
        (None, Some(v)) => v.clone(),
        _ => return Err(unprocessable("give exactly one of image_id or vector")),
    };
    let results = match (req.radius, req.top) {
        (None, Some(top)) => index.query_knn(&vector, top, None),
        (radius, top) => index.query_radius(&vector, radius.unwrap_or(s.pipeline.config.radius)).map(|mut hits| {
            if let Some(top) = top {
                hits.truncate(top);
            }
            hits
        }),
    };
    results.map(Json).map_err(unprocessable)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentimentRequest {
    text: String,
    aspect: Option<String>,
}

async fn sentiment(State(s): State<Shared>, Json(req): Json<SentimentRequest>) -> Result<Response, ApiError> {
    let p = &s.pipeline;
    let text = p.transform().apply(&req.text);
    let (head, prediction) = match req.aspect.as_deref() {
        Some(aspect) => (Head::Target, p.target_model.predict(&text, Some(aspect))),
        None => (Head::Message, p.message_model.predict(&text, None)),
    };
    let prediction = prediction.map_err(unprocessable)?;
    Ok(Json(json!({
        "head": head,
        "label": prediction.label,
        "probabilities": {
            "negative": prediction.probabilities[0],
            "neutral": prediction.probabilities[1],
            "positive": prediction.probabilities[2],
        },
    }))
    .into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportParams {
    image_id: Option<String>,
    radius: Option<f64>,
}

async fn report(State(s): State<Shared>, Query(params): Query<ReportParams>) -> Result<Response, ApiError> {
    let query = params
        .image_id
        .or_else(|| s.pipeline.config.query_image.clone())
        .ok_or_else(|| unprocessable("no image_id given and no query_image configured"))?;
    let radius = params.radius.unwrap_or(s.pipeline.config.radius);
    let report = tokio::task::spawn_blocking(move || s.pipeline.run_with_radius(&query, radius))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "application/json")], report_json(&report)).into_response())
}

async fn projection(State(s): State<Shared>) -> Result<Response, ApiError> {
    let body = tokio::task::spawn_blocking(move || s.projection().clone())
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(unprocessable)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

const IMAGE_TYPES: [(&str, &str); 4] =
    [("pgm", "image/x-portable-graymap"), ("png", "image/png"), ("jpg", "image/jpeg"), ("jpeg", "image/jpeg")];

fn safe_image_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

async fn image(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let not_found = || ApiError(StatusCode::NOT_FOUND, format!("no image {id:?}"));
    let dir = s.pipeline.config.images.as_ref().ok_or_else(not_found)?;
    if !safe_image_id(&id) || id.contains("..") {
        return Err(not_found());
    }
    for (ext, mime) in IMAGE_TYPES {
        let path = dir.join(format!("{id}.{ext}"));
        if let Ok(bytes) = tokio::fs::read(&path).await {
            return Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response());
        }
    }
    Err(not_found())
}
