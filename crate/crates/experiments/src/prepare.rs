//! Turning directories of (pre, mask, post) rasters into a tiled, split
//! manifest.

use std::path::{Path, PathBuf};

use floodviz_core::io::{raster_dims, read_image, read_mask, write_image, write_mask};
use floodviz_core::manifest::{build_manifest, split_dataset, BuildOptions, Manifest, SplitPolicy, TripletRecord};
use floodviz_core::masks::{coarse_block, reject_trivial_pair, tile_mask_scene, tile_scene};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub pre_dir: PathBuf,
    pub mask_dir: PathBuf,
    pub post_dir: PathBuf,
    pub out: PathBuf,
    pub tile_px: usize,
    pub overlap_px: usize,
    pub gsd_m_per_px: f64,
    pub coarse_gsd: f64,
    pub split: Option<SplitPolicy>,
}

#[derive(Debug, Clone)]
pub struct PrepareSummary {
    pub manifest: Manifest,
    /// Tile ids missing at least one member of the triple.
    pub incomplete: Vec<String>,
    /// Tiles dropped because their mask was all-zero or all-one.
    pub rejected_trivial: usize,
}

fn tiles_dir(out: &Path) -> PathBuf {
    out.parent().unwrap_or(Path::new(".")).join("tiles")
}

/// Cuts one scene triple into `tile_px` tiles under `root`. The mask is cut
/// with the same footprint at its own resolution.
fn tile_record(rec: &TripletRecord, tile_px: usize, overlap_px: usize, root: &Path) -> Result<(Vec<TripletRecord>, usize)> {
    let pre = read_image(&rec.pre_path, rec.gsd_m_per_px, rec.event)?;
    let post = read_image(&rec.post_path, rec.gsd_m_per_px, rec.event)?;
    let (mh, _) = raster_dims(&rec.mask_path)?;
    let ratio = pre.height() / mh;
    if tile_px % ratio != 0 || overlap_px % ratio != 0 {
        return Err(Error::Config(format!(
            "tile `{}`: a {tile_px}px tile does not align with a mask {ratio}x coarser than the image",
            rec.tile_id
        )));
    }
    let mask = read_mask(&rec.mask_path, rec.gsd_m_per_px * ratio as f64)?;
    let mut pre = pre;
    let mut post = post;
    pre.tile_id = rec.tile_id.clone();
    post.tile_id = rec.tile_id.clone();
    let pres = tile_scene(&pre, tile_px, overlap_px)?;
    let posts = tile_scene(&post, tile_px, overlap_px)?;
    let masks = tile_mask_scene(&mask, tile_px / ratio, overlap_px / ratio)?;
    if masks.len() != pres.len() {
        return Err(Error::Config(format!(
            "tile `{}`: mask tiling gives {} tiles, image tiling {}",
            rec.tile_id,
            masks.len(),
            pres.len()
        )));
    }
    let mut out = Vec::new();
    let mut rejected = 0;
    for ((p, m), q) in pres.iter().zip(&masks).zip(&posts) {
        if reject_trivial_pair(m) {
            rejected += 1;
            continue;
        }
        let r = TripletRecord {
            tile_id: p.tile_id.clone(),
            pre_path: root.join("pre").join(format!("{}.png", p.tile_id)),
            mask_path: root.join("mask").join(format!("{}.png", p.tile_id)),
            post_path: root.join("post").join(format!("{}.png", p.tile_id)),
            event: rec.event,
            split: rec.split,
            gsd_m_per_px: rec.gsd_m_per_px,
        };
        write_image(&r.pre_path, p)?;
        write_mask(&r.mask_path, m)?;
        write_image(&r.post_path, q)?;
        out.push(r);
    }
    Ok((out, rejected))
}

/// Pairs the three directories by file stem, cuts scenes larger than
/// `tile_px` into tiles (written next to the manifest under `tiles/`),
/// drops trivial masks, assigns splits and writes the manifest.
pub fn prepare_data(opts: &PrepareOptions) -> Result<PrepareSummary> {
    // Fails early when low-resolution evaluation could not pool these masks.
    coarse_block(opts.gsd_m_per_px, opts.coarse_gsd)?;
    let build = build_manifest(
        &opts.pre_dir,
        &opts.mask_dir,
        &opts.post_dir,
        "manifest",
        &BuildOptions {
            gsd_m_per_px: opts.gsd_m_per_px,
            ..BuildOptions::default()
        },
    )?;
    let root = tiles_dir(&opts.out);
    let mut records = Vec::new();
    let mut rejected_trivial = 0;
    for rec in &build.manifest.records {
        let dims = raster_dims(&rec.pre_path)?;
        if dims == (opts.tile_px, opts.tile_px) {
            let mask = read_mask(&rec.mask_path, rec.gsd_m_per_px)?;
            if reject_trivial_pair(&mask) {
                rejected_trivial += 1;
            } else {
                records.push(rec.clone());
            }
            continue;
        }
        let (tiles, rejected) = tile_record(rec, opts.tile_px, opts.overlap_px, &root)?;
        records.extend(tiles);
        rejected_trivial += rejected;
    }
    if rejected_trivial > 0 {
        tracing::warn!(rejected_trivial, "tiles with all-zero or all-one masks dropped");
    }
    if records.is_empty() {
        return Err(floodviz_core::Error::NoTriples.into());
    }
    let name = opts
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    let mut manifest = Manifest::new(name, records)?;
    match &opts.split {
        Some(policy) => manifest = split_dataset(&manifest, policy)?,
        None => tracing::warn!("no split policy given: every tile goes to train"),
    }
    manifest.write(&opts.out)?;
    Ok(PrepareSummary {
        manifest,
        incomplete: build.incomplete.into_iter().map(|i| i.tile_id).collect(),
        rejected_trivial,
    })
}
