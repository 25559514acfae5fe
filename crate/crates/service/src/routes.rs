use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use floodviz_core::io::{encode_image_png, encode_mask_png};
use floodviz_core::manifest::TripletRecord;
use floodviz_core::polygon::{rasterize_polygon, Vertex};
use floodviz_core::BinaryMask;
use serde::Deserialize;

use crate::api::{
    consistency_iou, encode_b64, GenerateRequest, GenerateResponse, MaskSource, ModelStatus, TileEntry, TilePage,
};
use crate::config::CATEGORIES;
use crate::error::ApiError;
use crate::state::{load_pre, load_tile_mask, AppState, ModelSlot, MANIFEST_MASK_ID};

pub const DEFAULT_PAGE: usize = 100;
pub const MAX_PAGE: usize = 1000;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/tiles", get(list_tiles))
        .route("/v1/tiles/{id}/pre", get(tile_pre))
        .route("/v1/models", get(list_models))
        .route("/v1/generate", post(generate))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
pub struct ListParams {
    dataset: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn list_tiles(
    State(state): State<Arc<AppState>>,
    params: Result<Query<ListParams>, QueryRejection>,
) -> Result<Json<TilePage>, ApiError> {
    let Query(p) = params.map_err(|e| ApiError::bad_request("invalid_query", e.body_text()))?;
    let name = match p.dataset {
        Some(d) => d,
        None if state.datasets.len() == 1 => state.datasets.keys().next().cloned().unwrap_or_default(),
        None => {
            return Err(ApiError::bad_request(
                "missing_dataset",
                "several datasets are registered; pass ?dataset=",
            ))
        }
    };
    let ds = state
        .datasets
        .get(&name)
        .ok_or_else(|| ApiError::not_found("unknown_dataset", format!("no dataset `{name}`")))?;
    let limit = p.limit.unwrap_or(DEFAULT_PAGE);
    if limit > MAX_PAGE {
        return Err(ApiError::bad_request(
            "invalid_query",
            format!("limit {limit} exceeds {MAX_PAGE}"),
        ));
    }
    let offset = p.offset.unwrap_or(0);
    let entries = ds
        .records
        .iter()
        .skip(offset)
        .take(limit)
        .map(|r| {
            let rasters: Vec<_> = state.rasters_for(&r.tile_id).collect();
            let mut categories: Vec<u8> = rasters.iter().filter_map(|e| e.category).collect();
            categories.sort_unstable();
            TileEntry {
                tile_id: r.tile_id.clone(),
                event: r.event,
                split: r.split,
                gsd_m_per_px: r.gsd_m_per_px,
                rasters: std::iter::once(MANIFEST_MASK_ID.to_string())
                    .chain(rasters.iter().map(|e| e.raster_id.clone()))
                    .collect(),
                categories,
            }
        })
        .collect();
    Ok(Json(TilePage {
        dataset: ds.name.clone(),
        total: ds.records.len(),
        offset,
        limit,
        entries,
    }))
}

fn find_tile<'a>(state: &'a AppState, id: &str) -> Result<&'a TripletRecord, ApiError> {
    state
        .tile(id)
        .ok_or_else(|| ApiError::not_found("unknown_tile", format!("no tile `{id}`")))
}

async fn tile_pre(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let rec = find_tile(&state, &id)?.clone();
    let png = tokio::task::spawn_blocking(move || encode_image_png(&load_pre(&rec)?))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png))
}

async fn list_models(State(state): State<Arc<AppState>>) -> Json<Vec<ModelStatus>> {
    Json(
        state
            .models
            .statuses()
            .into_iter()
            .map(|(tag, s)| ModelStatus {
                tag,
                status: s.to_string(),
            })
            .collect(),
    )
}

#[derive(Deserialize)]
#[serde(untagged)]
enum VertexIn {
    Object(Vertex),
    Pair([f64; 2]),
}

fn parse_polygon(payload: &serde_json::Value) -> Result<Vec<Vertex>, ApiError> {
    let vs: Vec<VertexIn> = serde_json::from_value(payload.clone()).map_err(|_| {
        ApiError::bad_request(
            "invalid_polygon",
            "polygon payload must be a list of {\"x\",\"y\"} objects or [x, y] pairs",
        )
    })?;
    Ok(vs
        .into_iter()
        .map(|v| match v {
            VertexIn::Object(v) => v,
            VertexIn::Pair([x, y]) => Vertex { x, y },
        })
        .collect())
}

/// Builds the requested mask at the tile's dims.
fn requested_mask(state: &AppState, req: &GenerateRequest, rec: &TripletRecord, dims: (usize, usize)) -> Result<BinaryMask, ApiError> {
    let (h, w) = dims;
    let raster_path = match req.mask_source {
        MaskSource::Polygon => {
            let mask = rasterize_polygon(&parse_polygon(&req.payload)?, h, w)?;
            if mask.count_ones() == 0 {
                return Err(ApiError::bad_request(
                    "invalid_polygon",
                    "polygon covers no pixel center",
                ));
            }
            return Ok(mask.with_gsd(rec.gsd_m_per_px));
        }
        MaskSource::RasterRef => {
            let id = req
                .payload
                .as_str()
                .ok_or_else(|| ApiError::bad_request("invalid_payload", "raster_ref payload must be a raster id string"))?;
            if id == MANIFEST_MASK_ID {
                rec.mask_path.clone()
            } else {
                state
                    .raster(&rec.tile_id, id)
                    .ok_or_else(|| ApiError::not_found("unknown_raster", format!("tile `{}` has no raster `{id}`", rec.tile_id)))?
                    .path
                    .clone()
            }
        }
        MaskSource::Category => {
            let c = req
                .payload
                .as_u64()
                .and_then(|c| u8::try_from(c).ok())
                .filter(|c| CATEGORIES.contains(c))
                .ok_or_else(|| ApiError::bad_request("invalid_category", "category payload must be an integer 1-5"))?;
            state
                .category_raster(&rec.tile_id, c)
                .ok_or_else(|| {
                    ApiError::not_found(
                        "unknown_raster",
                        format!("tile `{}` has no category {c} raster", rec.tile_id),
                    )
                })?
                .path
                .clone()
        }
    };
    Ok(load_tile_mask(&raster_path, rec, dims)?)
}

/// Everything after request validation that touches disk or a model.
fn run_generate(state: &AppState, req: &GenerateRequest, rec: &TripletRecord, model: &dyn crate::ImageModel) -> Result<GenerateResponse, ApiError> {
    let start = Instant::now();
    let pre = load_pre(rec)?;
    let mask = requested_mask(state, req, rec, pre.dims())?;
    let generated = model.generate(&pre, &mask)?;
    let png = encode_image_png(&generated)?;
    let score = consistency_iou(state.segmenter.as_ref(), &png, &mask)?;
    Ok(GenerateResponse {
        tile_id: rec.tile_id.clone(),
        model_tag: req.model_tag.clone(),
        image: encode_b64(&png),
        mask: encode_b64(&encode_mask_png(&mask)?),
        requested_mask_coverage: mask.coverage(),
        consistency_iou: score,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

async fn generate(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<GenerateResponse>, ApiError> {
    let req: GenerateRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))?;
    let rec = find_tile(&state, &req.tile_id)?.clone();
    let model = state
        .models
        .with(&req.model_tag, |slot| match slot {
            ModelSlot::Ready(m) => Ok(m.clone()),
            ModelSlot::Loading => Err(ApiError::new(
                StatusCode::CONFLICT,
                "model_loading",
                format!("model `{}` is still loading", req.model_tag),
            )),
            ModelSlot::Failed(e) => Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "model_unavailable",
                format!("model `{}` failed to load: {e}", req.model_tag),
            )),
        })
        .ok_or_else(|| ApiError::not_found("unknown_model", format!("no model `{}`", req.model_tag)))??;
    let permit = state
        .permits
        .clone()
        .acquire_owned()
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let st = state.clone();
    let resp = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        run_generate(&st, &req, &rec, model.as_ref())
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(resp))
}
