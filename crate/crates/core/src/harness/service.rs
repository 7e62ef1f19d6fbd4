//! HTTP API consumed by the annotation front end.
//!
//! | method | path | body / reply |
//! |---|---|---|
//! | GET | `/samples?sort=frac_out_desc\|wrong_first&offset=&limit=` | `SamplePage` |
//! | GET | `/samples/{id}/image` | PNG |
//! | GET | `/samples/{id}/overlay` | PNG |
//! | POST | `/samples/{id}/bbox` | `BBoxRequest` → 201 `AnnotationRecord`, 404, 422 `FieldError` |
//! | GET | `/annotations` | JSONL |

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::overlay::{OverlayEntry, OverlayManifest};
use crate::data::{AnnotationRecord, AnnotationStore, BBox};
use crate::Result;

#[derive(Debug)]
pub struct AppState {
    pub export_dir: PathBuf,
    pub manifest: OverlayManifest,
    pub annotations: AnnotationStore,
}

impl AppState {
    /// Reads the overlay export in `export_dir`; annotations are appended to
    /// `annotations_path`.
    pub fn open(export_dir: impl Into<PathBuf>, annotations_path: impl Into<PathBuf>) -> Result<Self> {
        let export_dir = export_dir.into();
        Ok(Self {
            manifest: OverlayManifest::read(&export_dir)?,
            export_dir,
            annotations: AnnotationStore::open(annotations_path)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    /// Highest outside-attention fraction first; samples without one last.
    #[default]
    FracOutDesc,
    /// Misclassified samples first, then by outside-attention fraction.
    WrongFirst,
}

#[derive(Debug, Deserialize)]
pub struct SampleQuery {
    #[serde(default)]
    pub sort: SortOrder,
    #[serde(default)]
    pub offset: usize,
    pub limit: Option<usize>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub sample_id: String,
    pub frac_out: Option<f64>,
    pub predicted: usize,
    pub label: usize,
    pub wrong: bool,
    pub width: usize,
    pub height: usize,
    /// Latest annotation if any, else the box shipped with the data.
    pub bbox: Option<BBox>,
    pub annotated: bool,
    pub image_url: String,
    pub overlay_url: String,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePage {
    pub total: usize,
    pub offset: usize,
    pub items: Vec<SampleSummary>,
}

#[derive(Debug, Deserialize)]
pub struct BBoxRequest {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
    #[serde(default)]
    pub author: Option<String>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub error: String,
    pub field: Option<String>,
}

const DEFAULT_LIMIT: usize = 50;

fn error(status: StatusCode, message: impl Into<String>, field: Option<&str>) -> Response {
    (
        status,
        Json(FieldError {
            error: message.into(),
            field: field.map(str::to_string),
        }),
    )
        .into_response()
}

fn internal(e: impl std::fmt::Display) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None)
}

fn frac_key(e: &OverlayEntry) -> f64 {
    e.frac_out.unwrap_or(f64::NEG_INFINITY)
}

async fn list_samples(State(state): State<Arc<AppState>>, Query(q): Query<SampleQuery>) -> Response {
    let latest = match state.annotations.latest() {
        Ok(l) => l,
        Err(e) => return internal(e),
    };
    let mut entries: Vec<&OverlayEntry> = state.manifest.entries.iter().collect();
    match q.sort {
        SortOrder::FracOutDesc => entries.sort_by(|a, b| frac_key(b).total_cmp(&frac_key(a))),
        SortOrder::WrongFirst => entries.sort_by(|a, b| {
            b.is_wrong()
                .cmp(&a.is_wrong())
                .then(frac_key(b).total_cmp(&frac_key(a)))
        }),
    }
    let total = entries.len();
    let limit = q.limit.unwrap_or(DEFAULT_LIMIT);
    let items = entries
        .into_iter()
        .skip(q.offset)
        .take(limit)
        .map(|e| {
            let ann = latest.get(&e.sample_id);
            SampleSummary {
                sample_id: e.sample_id.clone(),
                frac_out: e.frac_out,
                predicted: e.predicted,
                label: e.label,
                wrong: e.is_wrong(),
                width: e.width,
                height: e.height,
                bbox: ann.map(|r| r.bbox).or(e.bbox),
                annotated: ann.is_some(),
                image_url: format!("/samples/{}/image", e.sample_id),
                overlay_url: format!("/samples/{}/overlay", e.sample_id),
            }
        })
        .collect();
    Json(SamplePage {
        total,
        offset: q.offset,
        items,
    })
    .into_response()
}

async fn send_png(state: &AppState, id: &str, overlay: bool) -> Response {
    let Some(entry) = state.manifest.get(id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown sample {id}"), None);
    };
    let rel = if overlay { &entry.overlay_path } else { &entry.image_path };
    match tokio::fs::read(state.export_dir.join(rel)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => internal(e),
    }
}

async fn get_overlay(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    send_png(&state, &id, true).await
}

async fn get_image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    send_png(&state, &id, false).await
}

fn to_bbox(req: &BBoxRequest) -> std::result::Result<BBox, (String, &'static str)> {
    let field = |v: i64, name: &'static str| {
        u32::try_from(v).map_err(|_| (format!("{name} must be a non-negative pixel coordinate"), name))
    };
    Ok(BBox::new(
        field(req.x_min, "x_min")?,
        field(req.y_min, "y_min")?,
        field(req.x_max, "x_max")?,
        field(req.y_max, "y_max")?,
    ))
}

async fn post_bbox(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: std::result::Result<Json<BBoxRequest>, JsonRejection>,
) -> Response {
    let Some(entry) = state.manifest.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown sample {id}"), None);
    };
    let req = match body {
        Ok(Json(r)) => r,
        Err(rej) => return error(StatusCode::UNPROCESSABLE_ENTITY, rej.body_text(), None),
    };
    let bbox = match to_bbox(&req) {
        Ok(b) => b,
        Err((msg, field)) => return error(StatusCode::UNPROCESSABLE_ENTITY, msg, Some(field)),
    };
    if let Err(v) = bbox.validate(entry.width, entry.height) {
        return error(StatusCode::UNPROCESSABLE_ENTITY, v.message, Some(v.field));
    }
    let record = AnnotationRecord::now(id, bbox, req.author.unwrap_or_else(|| "anonymous".into()));
    let store_state = state.clone();
    let stored = record.clone();
    match tokio::task::spawn_blocking(move || store_state.annotations.append(&stored)).await {
        Ok(Ok(())) => (StatusCode::CREATED, Json(record)).into_response(),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

async fn get_annotations(State(state): State<Arc<AppState>>) -> Response {
    match state.annotations.dump() {
        Ok(text) => ([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response(),
        Err(e) => internal(e),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/samples", get(list_samples))
        .route("/samples/{id}/image", get(get_image))
        .route("/samples/{id}/overlay", get(get_overlay))
        .route("/samples/{id}/bbox", post(post_bbox))
        .route("/annotations", get(get_annotations))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}
