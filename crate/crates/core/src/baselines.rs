//! Deterministic reference generators: flat-color overlays of the mask onto
//! the pre-event image, plus the input stacks shared with the learned models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::masks::fit_mask;
use crate::metrics::MaskPredictor;
use crate::raster::{BinaryMask, ImageTile, MaskSemantics};

/// An 8-bit RGB overlay color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OverlayColor {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

/// Hand-picked flood brown, `#998d6f`.
pub const FLOOD_BROWN: OverlayColor = OverlayColor::new(0x99, 0x8d, 0x6f);

impl OverlayColor {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    /// The color as `[0, 1]` floats (`v / 255`).
    pub fn to_unit(self) -> [f32; 3] {
        [self.r, self.g, self.b].map(|v| f32::from(v) / 255.0)
    }
}

impl FromStr for OverlayColor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidColor(s.to_string());
        let hex = s.trim().strip_prefix('#').ok_or_else(bad)?;
        if hex.len() != 6 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(bad());
        }
        let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad());
        Ok(Self::new(byte(0)?, byte(2)?, byte(4)?))
    }
}

impl fmt::Display for OverlayColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{:02x}{:02x}{:02x}", self.r, self.g, self.b)
    }
}

impl Serialize for OverlayColor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OverlayColor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GreenVariant {
    /// RGB 33, 64, 61.
    Dark,
    /// RGB 78, 116, 85.
    Light,
}

impl GreenVariant {
    pub fn color(self) -> OverlayColor {
        match self {
            GreenVariant::Dark => OverlayColor::new(33, 64, 61),
            GreenVariant::Light => OverlayColor::new(78, 116, 85),
        }
    }
}

/// Replaces every mask pixel of `pre` with `color`. Coarser masks are
/// upsampled with nearest neighbor first.
pub fn handcrafted_composite(pre: &ImageTile, mask: &BinaryMask, color: OverlayColor) -> Result<ImageTile> {
    let mask = fit_mask(mask, pre.dims())?;
    let rgb = color.to_unit();
    let mut out = pre.clone();
    for (i, &m) in mask.values().iter().enumerate() {
        if m == 1 {
            out.set_pixel(i / pre.width(), i % pre.width(), rgb);
        }
    }
    Ok(out)
}

pub fn green_mask_composite(pre: &ImageTile, mask: &BinaryMask, variant: GreenVariant) -> Result<ImageTile> {
    handcrafted_composite(pre, mask, variant.color())
}

/// A channel-first `[0, 1]` input stack for the generator: RGB, optionally
/// followed by the mask channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// `CHW` layout.
    pub data: Vec<f32>,
}

fn image_planes(pre: &ImageTile) -> Vec<f32> {
    let n = pre.height() * pre.width();
    let mut data = vec![0.0; 3 * n];
    for (i, p) in pre.pixels().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = p[c];
        }
    }
    data
}

/// Three-channel input for the generator without physics conditioning.
pub fn unconditioned_input(pre: &ImageTile) -> ModelInput {
    ModelInput {
        channels: 3,
        height: pre.height(),
        width: pre.width(),
        data: image_planes(pre),
    }
}

/// Four-channel input: RGB plus the (upsampled) mask.
pub fn conditioned_input(pre: &ImageTile, mask: &BinaryMask) -> Result<ModelInput> {
    let mask = fit_mask(mask, pre.dims())?;
    let mut data = image_planes(pre);
    data.extend(mask.values().iter().map(|&v| f32::from(v)));
    Ok(ModelInput {
        channels: 4,
        height: pre.height(),
        width: pre.width(),
        data,
    })
}

impl ModelInput {
    /// Back to an interleaved RGB tile (the first three channels).
    pub fn rgb_tile(&self, template: &ImageTile) -> Result<ImageTile> {
        let n = self.height * self.width;
        let pixels = (0..n)
            .flat_map(|i| [self.data[i], self.data[n + i], self.data[2 * n + i]])
            .collect();
        template.with_pixels(self.height, self.width, pixels)
    }
}

/// Segments by color: a pixel is set when every channel lies within
/// `tolerance` of `color`. With tolerance 0 it recovers an overlay mask
/// exactly whenever the overlay color does not occur in the source image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorMatchSegmenter {
    pub color: OverlayColor,
    pub tolerance: f32,
}

impl ColorMatchSegmenter {
    pub fn exact(color: OverlayColor) -> Self {
        Self { color, tolerance: 0.0 }
    }

    pub fn segment(&self, image: &ImageTile) -> BinaryMask {
        let target = self.color.to_unit();
        let values = image
            .pixels()
            .chunks_exact(3)
            .map(|p| u8::from((0..3).all(|c| (p[c] - target[c]).abs() <= self.tolerance)))
            .collect();
        BinaryMask::new(image.height(), image.width(), values, image.gsd_m_per_px)
            .expect("image dims are valid")
            .with_semantics(MaskSemantics::Flood)
    }
}

impl MaskPredictor for ColorMatchSegmenter {
    fn predict(&self, image: &ImageTile) -> Result<BinaryMask> {
        Ok(self.segment(image))
    }
}
