//! Segmenter training from hand labels: mask PNGs paired with images by
//! file stem, cross-validated with a holdout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use floodviz_core::io::{read_image, read_mask};
use floodviz_core::masks::fit_mask;
use floodviz_core::{BinaryMask, Event, ImageTile};
use floodviz_models::segmenter::{cross_validate, CrossValidation, Segmenter, SegmenterConfig};
use serde::{Deserialize, Serialize};

use crate::config::version_string;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Labeled {
    pub tile_id: String,
    pub image: ImageTile,
    pub mask: BinaryMask,
}

fn index(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !floodviz_core::io::is_raster_path(&path) {
            continue;
        }
        if let Some(stem) = path.file_stem() {
            out.insert(stem.to_string_lossy().into_owned(), path);
        }
    }
    Ok(out)
}

/// Pairs every label in `labels_dir` with the image of the same stem in
/// `images_dir`, sorted by stem. Labels without an image are an error;
/// unlabeled images are skipped.
pub fn pair_labels(images_dir: &Path, labels_dir: &Path, gsd_m_per_px: f64) -> Result<Vec<Labeled>> {
    let images = index(images_dir)?;
    let labels = index(labels_dir)?;
    let missing: Vec<&str> = labels
        .keys()
        .filter(|k| !images.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "labels without a matching image in {}: {}",
            images_dir.display(),
            missing.join(", ")
        )));
    }
    if labels.is_empty() {
        return Err(Error::Config(format!("no label rasters in {}", labels_dir.display())));
    }
    let mut out = Vec::with_capacity(labels.len());
    for (stem, lpath) in &labels {
        let mut image = read_image(&images[stem], gsd_m_per_px, Event::Synthetic)?;
        image.tile_id = stem.clone();
        let mask = fit_mask(&read_mask(lpath, gsd_m_per_px)?, image.dims())?;
        out.push(Labeled {
            tile_id: stem.clone(),
            image,
            mask,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmenterRun {
    pub n_labeled: usize,
    pub k: usize,
    pub holdout: usize,
    pub seed: u64,
    pub cross_validation: CrossValidation,
}

/// Cross-validates, saves the best fold's model as `segmenter.safetensors`
/// and writes `cv.json`, the frozen segmenter config and `VERSION` into
/// `out_dir`.
pub fn train_segmenter_cv(
    labeled: &[Labeled],
    k: usize,
    holdout: usize,
    cfg: &SegmenterConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<(SegmenterRun, Segmenter)> {
    cfg.validate()?;
    let pairs: Vec<(ImageTile, BinaryMask)> = labeled.iter().map(|l| (l.image.clone(), l.mask.clone())).collect();
    let (cv, seg) = cross_validate(&pairs, k, holdout, cfg, seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ids: Vec<&str> = labeled.iter().map(|l| l.tile_id.as_str()).collect();
    let fingerprint = floodviz_models::checkpoint::config_hash(&ids)?;
    seg.save(&out_dir.join(SEGMENTER_FILE), &fingerprint)?;
    let run = SegmenterRun {
        n_labeled: labeled.len(),
        k,
        holdout,
        seed,
        cross_validation: cv,
    };
    write_text(&out_dir.join("cv.json"), &serde_json::to_string_pretty(&run)?)?;
    write_text(
        &out_dir.join("segmenter.toml"),
        &toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    write_text(&out_dir.join("VERSION"), &format!("{}\n", version_string()))?;
    Ok((run, seg))
}

pub const SEGMENTER_FILE: &str = "segmenter.safetensors";

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use floodviz_core::io::{write_image, write_mask};

    #[test]
    fn labels_pair_by_stem() {
        let tmp = tempfile::tempdir().unwrap();
        let (img, lab) = (tmp.path().join("img"), tmp.path().join("lab"));
        for id in ["a", "b", "c"] {
            let t = ImageTile::filled(id, 8, 8, [0.5; 3]).unwrap();
            write_image(&img.join(format!("{id}.png")), &t).unwrap();
        }
        for id in ["c", "a"] {
            write_mask(&lab.join(format!("{id}.png")), &BinaryMask::from_fn(4, 4, |y, _| y < 2)).unwrap();
        }
        let l = pair_labels(&img, &lab, 1.0).unwrap();
        let ids: Vec<_> = l.iter().map(|x| x.tile_id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert_eq!(l[0].mask.dims(), (8, 8));

        write_mask(&lab.join("z.png"), &BinaryMask::zeros(8, 8)).unwrap();
        let err = pair_labels(&img, &lab, 1.0).unwrap_err();
        assert!(err.to_string().contains('z'), "{err}");
    }
}
