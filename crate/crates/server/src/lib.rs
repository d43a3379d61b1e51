//! Read-only HTTP JSON API over a [`ModelBundle`].
//!
//! | route                | body / query                                   | response                    |
//! |----------------------|------------------------------------------------|-----------------------------|
//! | `GET /healthz`       |                                                | `{"status":"ok"}`           |
//! | `GET /schema`        |                                                | array of feature specs      |
//! | `GET /global`        | `?top_k=N`                                     | array of `{feature, importance}` |
//! | `POST /predict`      | `{"features": {name: value}}`                  | `{"prediction": f}`         |
//! | `POST /explain`      | `{"features": {...}, "method", "n_perms"?, "seed"?}` | attribution             |
//!
//! Errors are `{"error": message}` with 400 for unparseable bodies, 422 for
//! records that do not fit the schema and 500 for internal failures.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use attrib_core::data::FeatureKind;
use attrib_core::shapley::{attribute, Attribution, Method};
use attrib_core::ModelBundle;
use axum::extract::{RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bytes::Bytes;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::cors::CorsLayer;

pub const DEFAULT_PORT: u16 = 7878;
/// Largest feature count for which `/explain` runs the exact method.
pub const HTTP_EXACT_LIMIT: usize = 12;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("bundle is invalid: {0}")]
    BundleInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self { status: StatusCode::UNPROCESSABLE_ENTITY, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        let message = message.into();
        log::error!("internal error: {message}");
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, message }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictRequest {
    features: BTreeMap<String, Value>,
}

#[derive(Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum MethodName {
    Exact,
    Sampled,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplainRequest {
    features: BTreeMap<String, Value>,
    method: MethodName,
    #[serde(default)]
    n_perms: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

/// Turns a `{name: value}` record into a row in schema order. Numbers and
/// booleans fill numeric and binary columns; a string under a categorical
/// source name selects one column of its one-hot group.
pub fn record_to_row(bundle: &ModelBundle, record: &BTreeMap<String, Value>) -> Result<Vec<f64>, String> {
    let features = &bundle.schema.features;
    let mut row: Vec<Option<f64>> = vec![None; features.len()];
    for (name, value) in record {
        if let Some(i) = bundle.schema.index_of(name) {
            let v = match value {
                Value::Number(n) => n.as_f64().filter(|v| v.is_finite()),
                Value::Bool(b) => Some(f64::from(u8::from(*b))),
                _ => None,
            }
            .ok_or_else(|| format!("feature `{name}` must be a number, got {value}"))?;
            if features[i].kind == FeatureKind::Binary && v != 0.0 && v != 1.0 {
                return Err(format!("binary feature `{name}` must be 0 or 1, got {v}"));
            }
            if row[i].is_some() {
                return Err(format!("feature `{name}` given twice"));
            }
            row[i] = Some(v);
            continue;
        }
        let members: Vec<usize> = (0..features.len())
            .filter(|&i| features[i].group.as_deref() == Some(name.as_str()))
            .collect();
        if members.is_empty() {
            return Err(format!("unknown feature `{name}`"));
        }
        let Value::String(level) = value else {
            return Err(format!("categorical feature `{name}` expects a level name, got {value}"));
        };
        let column = format!("{name}={level}");
        if !members.iter().any(|&i| features[i].name == column) {
            return Err(format!("unknown level `{level}` for feature `{name}`"));
        }
        for &i in &members {
            if row[i].is_some() {
                return Err(format!("feature `{}` given twice", features[i].name));
            }
            row[i] = Some(f64::from(u8::from(features[i].name == column)));
        }
    }
    row.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| format!("missing feature `{}`", features[i].name)))
        .collect()
}

type Shared = State<Arc<ModelBundle>>;

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn schema(State(bundle): Shared) -> Json<Value> {
    Json(json!(bundle.schema.features))
}

async fn global(State(bundle): Shared, RawQuery(query): RawQuery) -> ApiResult<Value> {
    let mut top_k = bundle.global_importance.len();
    for pair in query.as_deref().unwrap_or_default().split('&').filter(|p| !p.is_empty()) {
        match pair.split_once('=') {
            Some(("top_k", v)) => {
                top_k = v
                    .parse::<usize>()
                    .ok()
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| ApiError::bad_request(format!("top_k must be a positive integer, got `{v}`")))?;
            }
            _ => return Err(ApiError::bad_request(format!("unknown query parameter `{pair}`"))),
        }
    }
    let ranked: Vec<_> = bundle.global_importance.iter().take(top_k).collect();
    Ok(Json(json!(ranked)))
}

async fn predict(State(bundle): Shared, body: Bytes) -> ApiResult<Value> {
    let req: PredictRequest = parse_body(&body)?;
    let row = record_to_row(&bundle, &req.features).map_err(ApiError::unprocessable)?;
    let prediction = bundle.model.predict(&row).map_err(|e| ApiError::internal(e.to_string()))?;
    if !prediction.is_finite() {
        return Err(ApiError::internal(format!("non-finite prediction {prediction}")));
    }
    Ok(Json(json!({ "prediction": prediction })))
}

async fn explain(State(bundle): Shared, body: Bytes) -> ApiResult<Attribution> {
    let req: ExplainRequest = parse_body(&body)?;
    let m = bundle.n_features();
    let method = match req.method {
        MethodName::Exact if m > HTTP_EXACT_LIMIT => {
            return Err(ApiError::unprocessable(format!(
                "exact attribution is limited to {HTTP_EXACT_LIMIT} features over HTTP, this model has {m}; use \"method\": \"sampled\""
            )))
        }
        MethodName::Exact => Method::Exact,
        MethodName::Sampled => Method::Sampled {
            n_perms: req.n_perms.unwrap_or(Method::DEFAULT_N_PERMS),
            seed: req.seed.unwrap_or(Method::DEFAULT_SEED),
        },
    };
    if let Method::Sampled { n_perms: 0, .. } = method {
        return Err(ApiError::unprocessable("n_perms must be at least 1"));
    }
    let row = record_to_row(&bundle, &req.features).map_err(ApiError::unprocessable)?;
    let worker = Arc::clone(&bundle);
    let attr = tokio::task::spawn_blocking(move || attribute(&worker.model, &row, &worker.background, method))
        .await
        .map_err(|e| ApiError::internal(format!("attribution task failed: {e}")))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let tolerance = 1e-6 * attr.prediction.abs().max(1.0);
    if method == Method::Exact && !(attr.efficiency_gap() <= tolerance) {
        return Err(ApiError::internal(format!(
            "attribution does not sum to the prediction (gap {})",
            attr.efficiency_gap()
        )));
    }
    Ok(Json(attr))
}

async fn not_found() -> ApiError {
    ApiError { status: StatusCode::NOT_FOUND, message: "no such route".into() }
}

pub fn router(bundle: Arc<ModelBundle>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/schema", get(schema))
        .route("/global", get(global))
        .route("/predict", post(predict))
        .route("/explain", post(explain))
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(bundle)
}

/// Serves on an already bound listener until Ctrl-C.
pub async fn serve_listener(bundle: ModelBundle, listener: TcpListener) -> Result<(), ServerError> {
    bundle.validate().map_err(|e| ServerError::BundleInvalid(e.to_string()))?;
    log::info!(
        "serving `{}` ({} features) on http://{}",
        bundle.metadata.label,
        bundle.n_features(),
        listener.local_addr()?
    );
    axum::serve(listener, router(Arc::new(bundle)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

pub async fn serve(bundle: ModelBundle, addr: SocketAddr) -> Result<(), ServerError> {
    bundle.validate().map_err(|e| ServerError::BundleInvalid(e.to_string()))?;
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::BindFailure { addr, source })?;
    serve_listener(bundle, listener).await
}
