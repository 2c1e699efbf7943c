//! HTTP JSON front end over the segmentation pipeline, part retrieval and
//! assembly. Models and feature databases are loaded once at startup and
//! shared read-only by all requests; each request is segmented as a batch
//! of one.
//!
//! | route | body | reply |
//! |---|---|---|
//! | `GET /v1/categories` | | `{"categories":[{"name","k","labels"}]}` |
//! | `POST /v1/segment` | sketch document, optional `refine`, `cd`, `cs` | per-stroke labels, raw labels, label names, timings |
//! | `POST /v1/retrieve` | `{"sketch", "result"?, "top_n"?}` | ranked candidates per part label |
//! | `POST /v1/assemble` | `{"category", "parts":[{"label","mesh"}]}` | placed boxes |
//!
//! Failures reply `{"error":{"code","message"}}` with a 4xx or 5xx status.

mod config;

pub use config::{config_path, CategoryConfig, Config, CONFIG_ENV, DEFAULT_LISTEN};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::cors::CorsLayer;

use sketchseg_core::network::{load_checkpoint, Model, NetworkError};
use sketchseg_core::pipeline::{segment_sketch, PipelineError, SegmentOptions, SegmentResult};
use sketchseg_core::refine::EnergyParams;
use sketchseg_core::retrieval::{assemble, query_parts, sketch_part_features, FeatureDb, RetrievalError, Selection};
use sketchseg_core::sketch::{sketch_from_value, Sketch};

/// Candidates per part when a retrieval request does not say.
pub const DEFAULT_TOP_N: usize = 5;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: NetworkError },
    #[error("checkpoint {path} holds category {found:?}, configured as {expected:?}")]
    CategoryName { path: PathBuf, found: String, expected: String },
    #[error("feature database {path}: {source}")]
    FeatureDb { path: PathBuf, source: RetrievalError },
    #[error("listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct Category {
    pub model: Model,
    pub db: Option<FeatureDb>,
}

/// Everything a request handler reads.
pub struct AppState {
    pub categories: BTreeMap<String, Arc<Category>>,
    pub params: EnergyParams,
}

impl AppState {
    /// Loads every configured checkpoint and feature database.
    pub fn load(config: &Config) -> Result<Self, ServiceError> {
        let mut categories = BTreeMap::new();
        for (name, c) in &config.categories {
            let model = load_checkpoint(&c.checkpoint).map_err(|source| ServiceError::Checkpoint {
                path: c.checkpoint.clone(),
                source,
            })?;
            if model.category() != name {
                return Err(ServiceError::CategoryName {
                    path: c.checkpoint.clone(),
                    found: model.category().to_string(),
                    expected: name.clone(),
                });
            }
            let db = match &c.featuredb {
                Some(p) => Some(FeatureDb::load(p).map_err(|source| ServiceError::FeatureDb {
                    path: p.clone(),
                    source,
                })?),
                None => None,
            };
            log::info!("loaded category {name} (k = {})", model.k());
            categories.insert(name.clone(), Arc::new(Category { model, db }));
        }
        Ok(Self {
            categories,
            params: config.params,
        })
    }

    pub fn from_models(models: Vec<(Model, Option<FeatureDb>)>, params: EnergyParams) -> Self {
        Self {
            categories: models
                .into_iter()
                .map(|(model, db)| (model.category().to_string(), Arc::new(Category { model, db })))
                .collect(),
            params,
        }
    }

    fn category(&self, name: &str) -> Result<Arc<Category>, ApiError> {
        self.categories.get(name).cloned().ok_or_else(|| {
            ApiError::new(StatusCode::NOT_FOUND, "unknown_category", format!("no model for category {name:?}"))
        })
    }
}

/// A failed request: HTTP status plus a machine-readable code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}: {}", self.code, self.message);
        }
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::EmptySketch => ApiError::bad("empty_sketch", e.to_string()),
            PipelineError::CategoryMismatch { .. } => ApiError::bad("category_mismatch", e.to_string()),
            PipelineError::Sketch(_) => ApiError::bad("invalid_sketch", e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<RetrievalError> for ApiError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::UnknownMesh(_) => ApiError::bad("unknown_mesh", e.to_string()),
            RetrievalError::UnknownPart { .. } => ApiError::bad("unknown_part", e.to_string()),
            RetrievalError::NoParts => ApiError::bad("no_parts", e.to_string()),
            RetrievalError::Singular(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "singular", e.to_string()),
            RetrievalError::Sketch(_) => ApiError::bad("invalid_sketch", e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

fn parse_json(body: &[u8]) -> Result<Value, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad("bad_json", e.to_string()))
}

fn parse_sketch_doc(doc: &Value) -> Result<Sketch, ApiError> {
    let sketch = sketch_from_value(doc).map_err(|e| ApiError::bad("invalid_sketch", e.to_string()))?;
    if sketch.is_empty() {
        return Err(ApiError::bad("empty_sketch", "sketch has no strokes"));
    }
    Ok(sketch)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

fn since_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

async fn categories(State(app): State<Arc<AppState>>) -> Json<Value> {
    let list: Vec<Value> = app
        .categories
        .iter()
        .map(|(name, c)| {
            json!({
                "name": name,
                "k": c.model.k(),
                "labels": c.model.labels.names,
                "retrieval": c.db.is_some(),
            })
        })
        .collect();
    Json(json!({ "categories": list }))
}

fn segment_options(doc: &Value, params: EnergyParams) -> Result<SegmentOptions, ApiError> {
    let mut opts = SegmentOptions {
        params,
        ..SegmentOptions::default()
    };
    if let Some(v) = doc.get("refine") {
        opts.refine = v.as_bool().ok_or_else(|| ApiError::bad("bad_request", "refine must be a boolean"))?;
    }
    for (key, slot) in [("cd", &mut opts.params.c_d), ("cs", &mut opts.params.c_s)] {
        if let Some(v) = doc.get(key) {
            *slot = v
                .as_f64()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| ApiError::bad("bad_request", format!("{key} must be a non-negative number")))?;
        }
    }
    Ok(opts)
}

fn strokes_json(labels: &[Vec<u32>], majorities: &[u32]) -> Vec<Value> {
    labels
        .iter()
        .zip(majorities)
        .map(|(l, m)| json!({"labels": l, "majority": m}))
        .collect()
}

fn majority(labels: &[u32]) -> u32 {
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    // Ascending label order, so ties keep the lowest label.
    counts.into_iter().fold((0, 0), |best, (l, c)| if c > best.1 { (l, c) } else { best }).0
}

fn segment_json(r: &SegmentResult, latency_ms: f64) -> Value {
    json!({
        "strokes": strokes_json(&r.labels, &r.majority),
        "raw": strokes_json(&r.raw, &r.raw.iter().map(|l| majority(l)).collect::<Vec<_>>()),
        "labels": r.label_names,
        "energy": r.energy,
        "raw_energy": r.raw_energy,
        "timing_ms": {
            "rasterize": r.timing.rasterize,
            "infer": r.timing.infer,
            "refine": r.timing.refine,
        },
        "latency_ms": latency_ms,
    })
}

async fn segment(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let t = Instant::now();
    let doc = parse_json(&body)?;
    let opts = segment_options(&doc, app.params)?;
    let sketch = parse_sketch_doc(&doc)?;
    let cat = app.category(&sketch.category)?;
    let result = blocking(move || segment_sketch(&sketch, &cat.model, &opts)).await??;
    Ok(Json(segment_json(&result, since_ms(t))))
}

#[derive(Deserialize)]
struct StrokeLabels {
    labels: Vec<u32>,
}

#[derive(Deserialize)]
struct SegmentedStrokes {
    strokes: Vec<StrokeLabels>,
}

async fn retrieve(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let t = Instant::now();
    let doc = parse_json(&body)?;
    let sketch = parse_sketch_doc(doc.get("sketch").ok_or_else(|| ApiError::bad("bad_request", "missing field sketch"))?)?;
    let top_n = match doc.get("top_n") {
        None => DEFAULT_TOP_N,
        Some(v) => v.as_u64().ok_or_else(|| ApiError::bad("bad_request", "top_n must be a non-negative integer"))? as usize,
    };
    let labels: Vec<Vec<u32>> = match doc.get("result") {
        Some(r) => serde_json::from_value::<SegmentedStrokes>(r.clone())
            .map_err(|e| ApiError::bad("bad_request", format!("result: {e}")))?
            .strokes
            .into_iter()
            .map(|s| s.labels)
            .collect(),
        None => sketch
            .strokes
            .iter()
            .map(|s| s.gt_labels.clone())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| ApiError::bad("missing_labels", "send a segmentation result or a labeled sketch"))?,
    };
    if labels.len() != sketch.strokes.len() || labels.iter().zip(&sketch.strokes).any(|(l, s)| l.len() != s.len()) {
        return Err(ApiError::bad("label_mismatch", "labels do not match the sketch's strokes and points"));
    }
    let cat = app.category(&sketch.category)?;
    if cat.db.is_none() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "no_feature_db",
            format!("category {:?} has no feature database", sketch.category),
        ));
    }
    let parts = blocking(move || -> Result<Vec<Value>, RetrievalError> {
        let db = cat.db.as_ref().expect("checked above");
        let feats = sketch_part_features(&cat.model, &sketch, &labels)?;
        Ok(feats
            .into_iter()
            .map(|(label, f)| json!({"label": label, "candidates": query_parts(&f, label, db, top_n)}))
            .collect())
    })
    .await??;
    Ok(Json(json!({"parts": parts, "latency_ms": since_ms(t)})))
}

#[derive(Deserialize)]
struct AssembleRequest {
    category: String,
    parts: Vec<Selection>,
}

async fn assemble_parts(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let t = Instant::now();
    let req: AssembleRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad("bad_request", e.to_string()))?;
    let cat = app.category(&req.category)?;
    let db = cat.db.as_ref().ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "no_feature_db",
            format!("category {:?} has no feature database", req.category),
        )
    })?;
    let a = assemble(&req.parts, db)?;
    Ok(Json(json!({"placed": a.placed, "residual": a.residual, "latency_ms": since_ms(t)})))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/categories", get(categories))
        .route("/v1/segment", post(segment))
        .route("/v1/retrieve", post(retrieve))
        .route("/v1/assemble", post(assemble_parts))
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Loads the configured models and serves until interrupted.
pub async fn serve(config: Config) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::load(&config)?);
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: config.listen.clone(),
            source,
        })?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
