//! Scene tiling and mask construction: thresholding, majority coarse-graining
//! and nearest-neighbor upsampling.

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, ImageTile, MaskSemantics};

/// Default threshold for turning a hazard-probability raster into a mask.
pub const DEFAULT_MASK_THRESHOLD: f32 = 0.5;

fn tile_origins(len: usize, tile_px: usize, stride: usize) -> impl Iterator<Item = usize> {
    let n = (len - tile_px) / stride + 1;
    (0..n).map(move |i| i * stride)
}

fn check_tiling(dims: (usize, usize), tile_px: usize, overlap_px: usize) -> Result<usize> {
    if tile_px == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    if overlap_px >= tile_px {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap_px}px must be smaller than the tile size {tile_px}px"
        )));
    }
    if dims.0 < tile_px || dims.1 < tile_px {
        return Err(Error::SceneTooSmall { scene: dims, tile_px });
    }
    Ok(tile_px - overlap_px)
}

/// Tile id for the tile at grid position `(row, col)` of `scene_id`.
pub fn tile_id_for(scene_id: &str, row: usize, col: usize) -> String {
    format!("{scene_id}_r{row:03}_c{col:03}")
}

/// Cuts a scene into square tiles left-to-right, top-to-bottom. Trailing
/// partial tiles are dropped.
pub fn tile_scene(scene: &ImageTile, tile_px: usize, overlap_px: usize) -> Result<Vec<ImageTile>> {
    let stride = check_tiling(scene.dims(), tile_px, overlap_px)?;
    let mut tiles = Vec::new();
    for (gr, y0) in tile_origins(scene.height(), tile_px, stride).enumerate() {
        for (gc, x0) in tile_origins(scene.width(), tile_px, stride).enumerate() {
            let mut pixels = Vec::with_capacity(tile_px * tile_px * 3);
            for y in y0..y0 + tile_px {
                let start = (y * scene.width() + x0) * 3;
                pixels.extend_from_slice(&scene.pixels()[start..start + tile_px * 3]);
            }
            let mut tile = scene.with_pixels(tile_px, tile_px, pixels)?;
            tile.tile_id = tile_id_for(&scene.tile_id, gr, gc);
            tiles.push(tile);
        }
    }
    Ok(tiles)
}

/// Mask counterpart of [`tile_scene`] with the same grid and ordering.
pub fn tile_mask_scene(mask: &BinaryMask, tile_px: usize, overlap_px: usize) -> Result<Vec<BinaryMask>> {
    let stride = check_tiling(mask.dims(), tile_px, overlap_px)?;
    let mut tiles = Vec::new();
    for y0 in tile_origins(mask.height(), tile_px, stride) {
        for x0 in tile_origins(mask.width(), tile_px, stride) {
            let mut values = Vec::with_capacity(tile_px * tile_px);
            for y in y0..y0 + tile_px {
                let start = y * mask.width() + x0;
                values.extend_from_slice(&mask.values()[start..start + tile_px]);
            }
            tiles.push(mask.with_values(tile_px, tile_px, values));
        }
    }
    Ok(tiles)
}

/// 1 where `raster >= threshold`, else 0.
pub fn binarize_mask(
    raster: &[f32],
    height: usize,
    width: usize,
    threshold: f32,
    gsd_m_per_px: f64,
) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if raster.len() != height * width {
        return Err(Error::InvalidRaster(format!(
            "expected {} values for {height}x{width}, got {}",
            height * width,
            raster.len()
        )));
    }
    if let Some(i) = raster.iter().position(|v| v.is_nan()) {
        return Err(Error::NaN(i));
    }
    let values = raster.iter().map(|&v| u8::from(v >= threshold)).collect();
    BinaryMask::new(height, width, values, gsd_m_per_px)
}

/// Pooling block edge for coarse-graining from `from_gsd` to `to_gsd`.
pub fn coarse_block(from_gsd: f64, to_gsd: f64) -> Result<usize> {
    if !(to_gsd > from_gsd) {
        return Err(Error::InvalidArgument(format!(
            "target GSD {to_gsd} must be coarser than the mask GSD {from_gsd}"
        )));
    }
    let block = (to_gsd / from_gsd).round();
    if block < 2.0 {
        return Err(Error::InvalidArgument(format!(
            "GSD ratio {to_gsd}/{from_gsd} rounds to a block of {block}; need at least 2"
        )));
    }
    Ok(block as usize)
}

/// Majority-pools a mask to a coarser GSD. A block becomes 1 when at least
/// half of its pixels are set; trailing partial blocks are pooled over the
/// pixels they actually contain.
pub fn coarse_grain_mask(mask: &BinaryMask, target_gsd: f64) -> Result<BinaryMask> {
    let block = coarse_block(mask.gsd_m_per_px, target_gsd)?;
    Ok(coarse_grain_by_block(mask, block))
}

pub fn coarse_grain_by_block(mask: &BinaryMask, block: usize) -> BinaryMask {
    let (h, w) = mask.dims();
    let (oh, ow) = (h.div_ceil(block), w.div_ceil(block));
    let mut ones = vec![0usize; oh * ow];
    let mut total = vec![0usize; oh * ow];
    for r in 0..h {
        let row = &mask.values()[r * w..(r + 1) * w];
        let orow = (r / block) * ow;
        for (c, &v) in row.iter().enumerate() {
            let o = orow + c / block;
            ones[o] += v as usize;
            total[o] += 1;
        }
    }
    let values = ones
        .iter()
        .zip(&total)
        .map(|(&k, &n)| u8::from(2 * k >= n))
        .collect();
    let mut out = mask.with_values(oh, ow, values);
    out.gsd_m_per_px = mask.gsd_m_per_px * block as f64;
    out
}

/// Nearest-neighbor upsampling to `target` dims (height, width).
pub fn upsample_mask(mask: &BinaryMask, target: (usize, usize)) -> Result<BinaryMask> {
    let (h, w) = mask.dims();
    let (th, tw) = target;
    if th < h || tw < w {
        return Err(Error::InvalidArgument(format!(
            "upsample target {th}x{tw} is smaller than the mask {h}x{w}"
        )));
    }
    let mut values = Vec::with_capacity(th * tw);
    for y in 0..th {
        let sy = y * h / th;
        for x in 0..tw {
            values.push(mask.get(sy, x * w / tw));
        }
    }
    let mut out = mask.with_values(th, tw, values);
    out.gsd_m_per_px = mask.gsd_m_per_px * h as f64 / th as f64;
    Ok(out)
}

/// Coarse-grains to `target_gsd` and replicates every block back over the
/// pixels it pooled, so the result keeps the input's dims and GSD. Unlike
/// [`upsample_mask`] this stays block-aligned when dims are not divisible.
pub fn degrade_mask(mask: &BinaryMask, target_gsd: f64) -> Result<BinaryMask> {
    let block = coarse_block(mask.gsd_m_per_px, target_gsd)?;
    let coarse = coarse_grain_by_block(mask, block);
    let (h, w) = mask.dims();
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            values.push(coarse.get(y / block, x / block));
        }
    }
    Ok(mask.with_values(h, w, values))
}

/// Brings a mask to `dims`: unchanged when equal, upsampled when smaller,
/// otherwise a dimension error.
pub fn fit_mask(mask: &BinaryMask, dims: (usize, usize)) -> Result<BinaryMask> {
    if mask.dims() == dims {
        return Ok(mask.clone());
    }
    if mask.height() <= dims.0 && mask.width() <= dims.1 {
        return upsample_mask(mask, dims);
    }
    Err(Error::DimMismatch {
        left: mask.dims(),
        right: dims,
    })
}

/// Ice mask: 1 where the channel mean is exactly full intensity.
pub fn threshold_ice_mask(image: &ImageTile) -> BinaryMask {
    let values = image
        .pixels()
        .chunks_exact(3)
        .map(|p| u8::from((p[0] + p[1] + p[2]) / 3.0 == 1.0))
        .collect();
    BinaryMask::new(image.height(), image.width(), values, image.gsd_m_per_px)
        .expect("image dims are valid")
        .with_semantics(MaskSemantics::Ice)
}

/// True when a mask carries no spatial information (all 0 or all 1).
pub fn reject_trivial_pair(mask: &BinaryMask) -> bool {
    let ones = mask.count_ones();
    ones == 0 || ones == mask.values().len()
}
