//! HTTP reward service over an immutable ground-truth snapshot.
//!
//! `POST /v1/score`
//!
//! ```json
//! {"v": 1, "items": [{"img_id": 0, "prediction_text": "..."}],
//!  "weights": {"lambda_r": 0.5, "lambda_p": 0.4, "lambda_f": 0.1}, "threshold": 0.5}
//! ```
//!
//! answers `{"v": 1, "scores": [breakdown | null, ...], "errors": [{"index", "img_id", "code", "message"}]}`
//! with scores in item order. `weights` and `threshold` fall back to the
//! server defaults. Request-level failures return a 4xx/5xx status with
//! `{"error": {"code", "message"}}`.
//!
//! `GET /v1/health` answers `{"status": "loading" | "ready" | "degraded",
//! "records_loaded", "version", "reason"?}`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};
use viscausal_core::graph::CausalGraph;
use viscausal_core::reward::{score_batch, RewardBreakdown, RewardConfig, RewardError, RewardWeights, ScoreItem};

use crate::dataset::load_dataset;

pub const API_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub defaults: RewardConfig,
    /// Most items accepted in one request.
    pub batch_cap: usize,
    /// Largest accepted request body, in bytes.
    pub max_body_bytes: usize,
    /// Shared secret expected as `Authorization: Bearer <token>`.
    pub token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { defaults: RewardConfig::default(), batch_cap: 1024, max_body_bytes: 8 << 20, token: None }
    }
}

#[derive(Debug, Clone)]
enum Dataset {
    Loading,
    Ready(Arc<HashMap<u64, CausalGraph>>),
    Degraded(String),
}

/// Shared state: configuration plus the dataset slot, filled once.
#[derive(Debug, Clone)]
pub struct ServiceState {
    config: Arc<ServiceConfig>,
    dataset: Arc<RwLock<Dataset>>,
}

impl ServiceState {
    /// A state whose dataset is still loading.
    pub fn loading(config: ServiceConfig) -> Self {
        Self { config: Arc::new(config), dataset: Arc::new(RwLock::new(Dataset::Loading)) }
    }

    pub fn ready(config: ServiceConfig, graphs: HashMap<u64, CausalGraph>) -> Self {
        let s = Self::loading(config);
        s.set_ready(graphs);
        s
    }

    pub fn set_ready(&self, graphs: HashMap<u64, CausalGraph>) {
        *self.dataset.write().unwrap_or_else(|e| e.into_inner()) = Dataset::Ready(Arc::new(graphs));
    }

    pub fn set_degraded(&self, reason: impl Into<String>) {
        *self.dataset.write().unwrap_or_else(|e| e.into_inner()) = Dataset::Degraded(reason.into());
    }

    fn snapshot(&self) -> Dataset {
        self.dataset.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Load `path` on a background thread, then flip to ready or degraded.
    pub fn load_in_background(&self, path: PathBuf) -> std::thread::JoinHandle<()> {
        let state = self.clone();
        std::thread::spawn(move || match load_dataset(&path) {
            Ok(report) => {
                let errors = report.errors().count();
                if errors > 0 {
                    log::warn!("{errors} dataset records rejected during load");
                }
                log::info!("loaded {} records from {}", report.records.len(), path.display());
                state.set_ready(report.graphs());
            }
            Err(e) => {
                log::error!("{e}");
                state.set_degraded(e.to_string());
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ItemError {
    pub index: usize,
    pub img_id: u64,
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreResponse {
    pub v: u64,
    pub scores: Vec<Option<RewardBreakdown>>,
    pub errors: Vec<ItemError>,
}

/// A request-level failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_body", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": {"code": self.code, "message": self.message}}))).into_response()
    }
}

/// A decoded score request.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest {
    pub items: Vec<(u64, String)>,
    pub config: RewardConfig,
}

fn number(v: &Value, what: &str) -> Result<f64, ApiError> {
    v.as_f64().ok_or_else(|| ApiError::malformed(format!("{what} must be a number")))
}

/// Decode and validate a request body against the server defaults.
pub fn parse_score_request(body: &[u8], config: &ServiceConfig) -> Result<ScoreRequest, ApiError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError::malformed(format!("invalid JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(ApiError::malformed("body must be a JSON object"));
    };
    if let Some(k) = obj.keys().find(|k| !matches!(k.as_str(), "v" | "items" | "weights" | "threshold")) {
        return Err(ApiError::malformed(format!("unknown field {k:?}")));
    }
    match obj.get("v").and_then(Value::as_u64) {
        Some(API_VERSION) => {}
        Some(v) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "unsupported_version", format!("version {v} is not supported"))),
        None => return Err(ApiError::malformed("v must be 1")),
    }
    let Some(Value::Array(raw_items)) = obj.get("items") else {
        return Err(ApiError::malformed("items must be a list"));
    };
    if raw_items.len() > config.batch_cap {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "payload_too_large",
            format!("{} items exceed the batch cap of {}", raw_items.len(), config.batch_cap),
        ));
    }
    let mut items = Vec::with_capacity(raw_items.len());
    for (i, item) in raw_items.iter().enumerate() {
        let img_id = item.get("img_id").and_then(Value::as_u64);
        let text = item.get("prediction_text").and_then(Value::as_str);
        match (img_id, text) {
            (Some(id), Some(t)) => items.push((id, t.to_string())),
            _ => return Err(ApiError::malformed(format!("items[{i}] needs an integer img_id and a string prediction_text"))),
        }
    }
    let mut reward = config.defaults;
    match obj.get("weights") {
        None | Some(Value::Null) => {}
        Some(Value::Object(w)) => {
            let get = |k: &str| w.get(k).map_or(Err(ApiError::malformed(format!("weights.{k} is required"))), |v| number(v, k));
            reward.weights = RewardWeights::new(get("lambda_r")?, get("lambda_p")?, get("lambda_f")?)
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_weights", e.to_string()))?;
        }
        Some(_) => return Err(ApiError::malformed("weights must be an object")),
    }
    match obj.get("threshold") {
        None | Some(Value::Null) => {}
        Some(t) => {
            let t = number(t, "threshold")?;
            if !(0.0..=1.0).contains(&t) {
                return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_threshold", "threshold must lie in [0, 1]"));
            }
            reward.threshold = t;
        }
    }
    Ok(ScoreRequest { items, config: reward })
}

fn error_code(e: &RewardError) -> &'static str {
    match e {
        RewardError::UnknownGroundTruthRef(_) => "unknown_img_id",
        RewardError::EmptyGroundTruth => "empty_ground_truth",
        RewardError::InvalidWeights => "invalid_weights",
    }
}

/// Score a decoded request with the library; the service adds no numeric
/// behaviour of its own.
pub fn score_request(request: &ScoreRequest, graphs: &HashMap<u64, CausalGraph>) -> ScoreResponse {
    let items: Vec<ScoreItem<'_>> = request.items.iter().map(|(id, t)| ScoreItem { gt_ref: *id, prediction_text: t }).collect();
    let results = score_batch(&items, |id| graphs.get(&id), &request.config);
    let mut scores = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(b) => scores.push(Some(b)),
            Err(e) => {
                scores.push(None);
                errors.push(ItemError { index, img_id: items[index].gt_ref, code: error_code(&e), message: e.to_string() });
            }
        }
    }
    ScoreResponse { v: API_VERSION, scores, errors }
}

fn authorize(headers: &HeaderMap, token: Option<&str>) -> Result<(), ApiError> {
    let Some(token) = token else { return Ok(()) };
    let given = headers.get("authorization").and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(token) {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token"))
    }
}

async fn score_handler(State(state): State<ServiceState>, headers: HeaderMap, body: Result<Bytes, BytesRejection>) -> Result<Json<ScoreResponse>, ApiError> {
    authorize(&headers, state.config.token.as_deref())?;
    let body = body.map_err(|e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", format!("body exceeds {} bytes", state.config.max_body_bytes))
        } else {
            ApiError::malformed(e.body_text())
        }
    })?;
    let graphs = match state.snapshot() {
        Dataset::Ready(g) => g,
        Dataset::Loading => return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "loading", "ground truth is still loading")),
        Dataset::Degraded(r) => return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "degraded", r)),
    };
    let request = parse_score_request(&body, &state.config)?;
    let response = tokio::task::spawn_blocking(move || score_request(&request, &graphs))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(Json(response))
}

async fn health_handler(State(state): State<ServiceState>) -> Json<Value> {
    let version = env!("CARGO_PKG_VERSION");
    Json(match state.snapshot() {
        Dataset::Loading => json!({"status": "loading", "records_loaded": 0, "version": version}),
        Dataset::Ready(g) => json!({"status": "ready", "records_loaded": g.len(), "version": version}),
        Dataset::Degraded(reason) => json!({"status": "degraded", "records_loaded": 0, "version": version, "reason": reason}),
    })
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(state: ServiceState) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/v1/score", post(score_handler))
        .route("/v1/health", get(health_handler))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: ServiceState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
