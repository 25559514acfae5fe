//! Loading manifest triplets into memory.

use floodviz_core::io::{read_image, read_mask};
use floodviz_core::manifest::{Manifest, Split, TripletRecord};
use floodviz_core::masks::fit_mask;
use floodviz_core::{BinaryMask, ImageTile};
use floodviz_models::checkpoint::config_hash;

use crate::error::{Error, Result};

/// One triplet with the mask brought to the image dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tile_id: String,
    pub pre: ImageTile,
    pub mask: BinaryMask,
    pub post: ImageTile,
}

impl Sample {
    pub fn load(rec: &TripletRecord) -> Result<Self> {
        let pre = read_image(&rec.pre_path, rec.gsd_m_per_px, rec.event)?;
        let post = read_image(&rec.post_path, rec.gsd_m_per_px, rec.event)?;
        if pre.dims() != post.dims() {
            return Err(floodviz_core::Error::DimMismatch {
                left: pre.dims(),
                right: post.dims(),
            }
            .into());
        }
        // The manifest GSD describes the images; a coarser mask raster
        // covers the same extent with fewer pixels.
        let (mh, _) = floodviz_core::io::raster_dims(&rec.mask_path)?;
        let mask_gsd = rec.gsd_m_per_px * pre.height() as f64 / mh.max(1) as f64;
        let mask = fit_mask(&read_mask(&rec.mask_path, mask_gsd)?, pre.dims())?;
        let mut pre = pre;
        let mut post = post;
        pre.tile_id = rec.tile_id.clone();
        post.tile_id = rec.tile_id.clone();
        Ok(Self {
            tile_id: rec.tile_id.clone(),
            pre,
            mask,
            post,
        })
    }
}

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

/// Loads every record of `split`, in manifest order. An empty split is an
/// error.
pub fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<Sample>> {
    let samples = manifest
        .split(split)
        .map(Sample::load)
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::EmptySplit(split_name(split)));
    }
    Ok(samples)
}

/// Identifies a manifest by its tile ids, splits and GSDs. File contents are
/// not hashed.
pub fn dataset_fingerprint(manifest: &Manifest) -> Result<String> {
    let keys: Vec<(&str, Split, f64)> = manifest
        .records
        .iter()
        .map(|r| (r.tile_id.as_str(), r.split, r.gsd_m_per_px))
        .collect();
    Ok(config_hash(&(&manifest.dataset_name, keys))?)
}

/// All samples must share one size equal to `tile_px`.
pub fn check_tile_size(samples: &[Sample], tile_px: usize) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| s.pre.dims() != (tile_px, tile_px)) {
        return Err(Error::Config(format!(
            "tile `{}` is {}x{} but the preset expects {tile_px}x{tile_px}",
            s.tile_id,
            s.pre.height(),
            s.pre.width()
        )));
    }
    Ok(())
}
