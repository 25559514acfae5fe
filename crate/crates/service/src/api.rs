//! Request and response bodies, and the scoring path shared with clients.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use floodviz_core::io::{decode_image_png, decode_mask_png};
use floodviz_core::metrics::{iou, MaskPredictor};
use floodviz_core::{BinaryMask, Event};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    RasterRef,
    Polygon,
    Category,
}

/// `payload` is a raster id string, a vertex list (`[{"x":..,"y":..}]` or
/// `[[x, y]]`, tile pixel coordinates) or a category 1 to 5, matching
/// `mask_source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub tile_id: String,
    pub mask_source: MaskSource,
    pub payload: serde_json::Value,
    pub model_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub tile_id: String,
    pub model_tag: String,
    /// Base64 PNG of the generated tile.
    pub image: String,
    /// Base64 PNG of the requested mask at tile resolution.
    pub mask: String,
    pub requested_mask_coverage: f64,
    /// IoU between the requested mask and the segmentation of `image`.
    pub consistency_iou: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    pub tile_id: String,
    pub event: Event,
    pub split: floodviz_core::manifest::Split,
    pub gsd_m_per_px: f64,
    pub rasters: Vec<String>,
    pub categories: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePage {
    pub dataset: String,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub entries: Vec<TileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStatus {
    pub tag: String,
    pub status: String,
}

pub fn encode_b64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode_b64(text: &str) -> Result<Vec<u8>, base64::DecodeError> {
    STANDARD.decode(text)
}

/// Segments a PNG-encoded image and scores it against `mask`. The server
/// scores the exact bytes it returns, so a client running this on the
/// response reproduces `consistency_iou`.
pub fn consistency_iou(segmenter: &dyn MaskPredictor, png: &[u8], mask: &BinaryMask) -> floodviz_core::Result<f64> {
    let image = decode_image_png(png, "generated", mask.gsd_m_per_px, Event::Synthetic)?;
    iou(&segmenter.predict(&image)?, mask)
}

/// Client-side recomputation from a response body.
pub fn rescore(segmenter: &dyn MaskPredictor, resp: &GenerateResponse) -> floodviz_core::Result<f64> {
    let bad = |e: base64::DecodeError| floodviz_core::Error::InvalidArgument(format!("base64: {e}"));
    let png = decode_b64(&resp.image).map_err(bad)?;
    let mask = decode_mask_png(&decode_b64(&resp.mask).map_err(bad)?, 1.0)?;
    consistency_iou(segmenter, &png, &mask)
}
