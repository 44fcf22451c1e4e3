use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::error::ApiError;
use crate::items::{item_view, ItemView};
use crate::query::{execute, QueryResponse, QuerySpec, Snapshot};

pub const DEFAULT_PORT: u16 = 8471;

/// Request body cap; inline volumes arrive as JSON float arrays.
pub const MAX_BODY_BYTES: usize = 512 << 20;

/// Port from `RR_PORT`, else the default.
pub fn port_from_env() -> Result<u16, ApiError> {
    match std::env::var("RR_PORT") {
        Ok(s) => s.parse().map_err(|_| ApiError::bad_request("BadPort", format!("RR_PORT={s:?} is not a port"))),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

/// Shared service state; the snapshot is swapped whole on reload.
#[derive(Debug, Clone, Default)]
pub struct AppState {
    current: Arc<RwLock<Option<Arc<Snapshot>>>>,
}

impl AppState {
    pub fn new(snapshot: Option<Snapshot>) -> Self {
        AppState { current: Arc::new(RwLock::new(snapshot.map(Arc::new))) }
    }

    pub fn replace(&self, snapshot: Snapshot) {
        *self.current.write().expect("state lock") = Some(Arc::new(snapshot));
    }

    pub fn snapshot(&self) -> Result<Arc<Snapshot>, ApiError> {
        self.current
            .read()
            .expect("state lock")
            .clone()
            .ok_or_else(|| ApiError::new(409, "IndexNotLoaded", "no index and checkpoint are loaded"))
    }
}

async fn query(State(state): State<AppState>, body: Bytes) -> Result<Json<QueryResponse>, ApiError> {
    let spec: QuerySpec = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("BadRequest", e.to_string()))?;
    let snap = state.snapshot()?;
    let out = tokio::task::spawn_blocking(move || execute(&snap, &spec))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(out))
}

async fn item(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ItemView>, ApiError> {
    let snap = state.snapshot()?;
    let out = tokio::task::spawn_blocking(move || item_view(&snap, &id))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(out))
}

pub fn endpoint_listing() -> Value {
    json!({
        "service": "tumor-retrieval",
        "version": env!("CARGO_PKG_VERSION"),
        "paths": {
            "/query": {
                "post": {
                    "summary": "Rank indexed tumors against an image, radiomics, or APE query",
                    "request": {
                        "image": { "type": "image", "volume_id": "string (or inline volume {dims, spacing, origin, data})", "prompts": "1-10 [x, y, z] voxels", "k": "integer, default 10" },
                        "radiomics": { "type": "radiomics", "features": "name -> value, any subset of the 72 names", "units": "z (default) or raw", "ape": "optional [a, b, c] in [-1, 1]", "k": "integer" },
                        "ape": { "type": "ape", "ape": "[a, b, c] in [-1, 1]", "k": "integer" }
                    },
                    "response": "{setting, k, embedding_norm, results: [{id, similarity, rank, region, region_id, class, thumbnail_ref}]}",
                    "errors": ["400 UnknownFeatureName", "400 BadPromptCount", "400 EmptyQuery", "400 BadApe", "404 UnknownId", "409 IndexNotLoaded", "422 VolumeParseError"]
                }
            },
            "/items/{id}": {
                "get": {
                    "summary": "Record metadata, raw and z-scored radiomics, and three mid-tumor slices",
                    "response": "{id, region, region_id, class, radiomics: {names, raw, z}, centroid_ape, center_voxel, slices: [{axis, index, dims, pixels}]}",
                    "errors": ["404 UnknownId", "409 IndexNotLoaded"]
                }
            },
            "/spec": { "get": { "summary": "This listing" } }
        }
    })
}

async fn spec() -> Json<Value> {
    Json(endpoint_listing())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/query", post(query))
        .route("/items/{id}", get(item))
        .route("/spec", get(spec))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
