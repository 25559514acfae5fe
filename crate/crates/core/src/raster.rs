//! In-memory raster types: RGB image tiles and binary masks.
//!
//! Images are stored row-major, channel-interleaved (`HWC`) as `f32` in
//! `[0, 1]`. Masks are stored row-major as `u8` with every element in `{0, 1}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paper-scale tile edge length in pixels.
pub const PAPER_TILE_PX: usize = 1024;
/// Smallest accepted desk-scale model input.
pub const MIN_MODEL_TILE_PX: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Event {
    Harvey,
    Florence,
    Michael,
    Matthew,
    Midwest,
    Tsunami,
    Monsoon,
    Reforestation,
    Arctic,
    Synthetic,
}

impl Event {
    pub const ALL: [Event; 10] = [
        Event::Harvey,
        Event::Florence,
        Event::Michael,
        Event::Matthew,
        Event::Midwest,
        Event::Tsunami,
        Event::Monsoon,
        Event::Reforestation,
        Event::Arctic,
        Event::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Event::Harvey => "harvey",
            Event::Florence => "florence",
            Event::Michael => "michael",
            Event::Matthew => "matthew",
            Event::Midwest => "midwest",
            Event::Tsunami => "tsunami",
            Event::Monsoon => "monsoon",
            Event::Reforestation => "reforestation",
            Event::Arctic => "arctic",
            Event::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Event {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let needle = s.trim().to_ascii_lowercase();
        Event::ALL
            .into_iter()
            .find(|e| e.as_str() == needle)
            .ok_or_else(|| Error::UnknownEvent(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSemantics {
    #[default]
    Flood,
    Reforestation,
    Ice,
}

/// An RGB raster with its geospatial metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTile {
    pixels: Vec<f32>,
    height: usize,
    width: usize,
    pub gsd_m_per_px: f64,
    pub tile_id: String,
    pub event: Event,
    pub acquisition: Option<String>,
}

impl ImageTile {
    /// Builds a tile from interleaved RGB pixels, rejecting NaN and
    /// out-of-range values.
    pub fn new(
        tile_id: impl Into<String>,
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        gsd_m_per_px: f64,
        event: Event,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidRaster("zero-sized image".into()));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::InvalidRaster(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if !(gsd_m_per_px > 0.0 && gsd_m_per_px.is_finite()) {
            return Err(Error::InvalidRaster(format!(
                "ground sample distance must be positive, got {gsd_m_per_px}"
            )));
        }
        if let Some(i) = pixels.iter().position(|v| v.is_nan()) {
            return Err(Error::NaN(i));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidRaster(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            pixels,
            height,
            width,
            gsd_m_per_px,
            tile_id: tile_id.into(),
            event,
            acquisition: None,
        })
    }

    /// A constant-color tile.
    pub fn filled(tile_id: impl Into<String>, height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(tile_id, height, width, pixels, 0.5, Event::Synthetic)
    }

    /// Builds a tile from 8-bit RGB data; every value maps to `v / 255`.
    pub fn from_rgb8(
        tile_id: impl Into<String>,
        height: usize,
        width: usize,
        data: &[u8],
        gsd_m_per_px: f64,
        event: Event,
    ) -> Result<Self> {
        let pixels = data.iter().map(|&v| f32::from(v) / 255.0).collect();
        Self::new(tile_id, height, width, pixels, gsd_m_per_px, event)
    }

    /// Quantizes to 8-bit RGB. Exact inverse of [`ImageTile::from_rgb8`].
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize_u8(v)).collect()
    }

    /// Same metadata, new pixel buffer. Values are clamped into `[0, 1]`.
    pub fn with_pixels(&self, height: usize, width: usize, mut pixels: Vec<f32>) -> Result<Self> {
        for v in pixels.iter_mut() {
            if v.is_nan() {
                return Err(Error::NaN(0));
            }
            *v = v.clamp(0.0, 1.0);
        }
        let mut out = Self::new(
            self.tile_id.clone(),
            height,
            width,
            pixels,
            self.gsd_m_per_px,
            self.event,
        )?;
        out.acquisition = self.acquisition.clone();
        Ok(out)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Checks the generator's shape contract: square, power of two, at least
    /// [`MIN_MODEL_TILE_PX`].
    pub fn check_model_shape(&self) -> Result<()> {
        check_model_dims(self.height, self.width)
    }
}

pub fn check_model_dims(height: usize, width: usize) -> Result<()> {
    if height != width || !height.is_power_of_two() || height < MIN_MODEL_TILE_PX {
        return Err(Error::InvalidRaster(format!(
            "model tiles must be square powers of two >= {MIN_MODEL_TILE_PX}px, got {height}x{width}"
        )));
    }
    Ok(())
}

#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// A `{0, 1}` raster at a stated ground sample distance.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    values: Vec<u8>,
    height: usize,
    width: usize,
    pub gsd_m_per_px: f64,
    pub semantics: MaskSemantics,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>, gsd_m_per_px: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidRaster("zero-sized mask".into()));
        }
        if values.len() != height * width {
            return Err(Error::InvalidRaster(format!(
                "expected {} mask values for {height}x{width}, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidRaster(format!("mask value {v} is not binary")));
        }
        if !(gsd_m_per_px > 0.0 && gsd_m_per_px.is_finite()) {
            return Err(Error::InvalidRaster(format!(
                "ground sample distance must be positive, got {gsd_m_per_px}"
            )));
        }
        Ok(Self {
            values,
            height,
            width,
            gsd_m_per_px,
            semantics: MaskSemantics::Flood,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![0; height * width], 0.5).expect("valid dims")
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![1; height * width], 0.5).expect("valid dims")
    }

    /// Builds a mask from rows of 0/1 values; handy for small literals.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidRaster("ragged mask rows".into()));
        }
        Self::new(height, width, rows.concat(), 0.5)
    }

    /// Builds a mask from a predicate over `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let values = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .map(|(r, c)| u8::from(f(r, c)))
            .collect();
        Self::new(height, width, values, 0.5).expect("valid dims")
    }

    pub fn with_gsd(mut self, gsd_m_per_px: f64) -> Self {
        self.gsd_m_per_px = gsd_m_per_px;
        self
    }

    pub fn with_semantics(mut self, semantics: MaskSemantics) -> Self {
        self.semantics = semantics;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.values[row * self.width + col] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// Fraction of pixels set.
    pub fn coverage(&self) -> f64 {
        self.count_ones() as f64 / self.values.len() as f64
    }

    /// Same metadata, new values.
    pub(crate) fn with_values(&self, height: usize, width: usize, values: Vec<u8>) -> Self {
        debug_assert!(values.iter().all(|&v| v <= 1));
        debug_assert_eq!(values.len(), height * width);
        Self {
            values,
            height,
            width,
            gsd_m_per_px: self.gsd_m_per_px,
            semantics: self.semantics,
        }
    }
}
