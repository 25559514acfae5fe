//! Procedural triplets for desk-scale runs: textured pre-images, random blob
//! masks, and post-images painted with the flood overlay.

use std::f32::consts::TAU;
use std::path::Path;

use floodviz_core::baselines::{handcrafted_composite, FLOOD_BROWN};
use floodviz_core::io::{write_image, write_mask};
use floodviz_core::manifest::{split_dataset, Manifest, Split, SplitPolicy, TripletRecord};
use floodviz_core::masks::reject_trivial_pair;
use floodviz_core::{BinaryMask, Event, ImageTile, MaskSemantics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest red value in a pre-image. Flood brown has red 153, so every
/// pre pixel stays at least 63 levels away from the overlay.
pub const MAX_PRE_RED: u8 = 90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOptions {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    /// 3.75 m/px puts a 30 m block at exactly 8 pixels.
    pub gsd_m_per_px: f64,
    pub test_frac: f64,
}

impl SyntheticOptions {
    pub fn new(n: usize, size: usize, seed: u64) -> Self {
        Self {
            n,
            size,
            seed,
            gsd_m_per_px: 3.75,
            test_frac: 0.25,
        }
    }
}

struct Wave {
    fy: f32,
    fx: f32,
    phase: f32,
    amp: f32,
}

fn waves(rng: &mut ChaCha8Rng, n: usize, max_freq: f32) -> Vec<Wave> {
    (0..n)
        .map(|_| Wave {
            fy: rng.random_range(-max_freq..max_freq),
            fx: rng.random_range(-max_freq..max_freq),
            phase: rng.random_range(0.0..TAU),
            amp: rng.random_range(0.3..1.0),
        })
        .collect()
}

fn field(ws: &[Wave], y: f32, x: f32) -> f32 {
    let total: f32 = ws.iter().map(|w| w.amp).sum();
    ws.iter()
        .map(|w| w.amp * (TAU * (w.fy * y + w.fx * x) + w.phase).sin())
        .sum::<f32>()
        / total
}

/// Vegetation-like texture with a few buildings and a road.
pub fn synthetic_pre(size: usize, tile_id: &str, gsd: f64, rng: &mut ChaCha8Rng) -> Result<ImageTile> {
    let s = size as f32;
    let low = waves(rng, 4, 3.0);
    let base = [
        rng.random_range(30.0..60.0f32),
        rng.random_range(80.0..130.0f32),
        rng.random_range(40.0..80.0f32),
    ];
    let mut px = vec![[0f32; 3]; size * size];
    for y in 0..size {
        for x in 0..size {
            let t = field(&low, y as f32 / s, x as f32 / s);
            let grain: f32 = rng.random_range(-8.0..8.0);
            px[y * size + x] = [
                base[0] + 15.0 * t + grain,
                base[1] + 35.0 * t + grain,
                base[2] + 20.0 * t + grain,
            ];
        }
    }
    // Road: a straight band across the tile.
    let (ry0, ry1) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
    let half = rng.random_range(1.0..2.5f32);
    for y in 0..size {
        for x in 0..size {
            let center = ry0 + (ry1 - ry0) * x as f32 / s;
            if (y as f32 - center).abs() <= half {
                px[y * size + x] = [75.0, 75.0, 78.0];
            }
        }
    }
    for _ in 0..rng.random_range(2..6) {
        let h = rng.random_range(size / 16..size / 6 + 1).max(2);
        let w = rng.random_range(size / 16..size / 6 + 1).max(2);
        let y0 = rng.random_range(0..size - h);
        let x0 = rng.random_range(0..size - w);
        let roof = [
            rng.random_range(50.0..90.0f32),
            rng.random_range(50.0..110.0f32),
            rng.random_range(60.0..140.0f32),
        ];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                px[y * size + x] = roof;
            }
        }
    }
    let data: Vec<u8> = px
        .iter()
        .flat_map(|p| {
            [
                p[0].round().clamp(0.0, f32::from(MAX_PRE_RED)) as u8,
                p[1].round().clamp(0.0, 255.0) as u8,
                p[2].round().clamp(0.0, 255.0) as u8,
            ]
        })
        .collect();
    Ok(ImageTile::from_rgb8(tile_id, size, size, &data, gsd, Event::Synthetic)?)
}

/// Union of a few wobbly ellipses. Retries until coverage lies in
/// `[0.1, 0.6]`, so the mask is never trivial.
pub fn synthetic_mask(size: usize, gsd: f64, rng: &mut ChaCha8Rng) -> BinaryMask {
    let s = size as f32;
    loop {
        let blobs: Vec<_> = (0..rng.random_range(1..4))
            .map(|_| {
                (
                    rng.random_range(0.0..s),
                    rng.random_range(0.0..s),
                    rng.random_range(0.12 * s..0.35 * s),
                    rng.random_range(0.12 * s..0.35 * s),
                    waves(rng, 3, 2.0),
                )
            })
            .collect();
        let edge = waves(rng, 3, 6.0);
        let mask = BinaryMask::from_fn(size, size, |y, x| {
            let (yf, xf) = (y as f32 + 0.5, x as f32 + 0.5);
            let wobble = 0.25 * field(&edge, yf / s, xf / s);
            blobs.iter().any(|(cy, cx, ry, rx, ws)| {
                let d = ((yf - cy) / ry).powi(2) + ((xf - cx) / rx).powi(2);
                d <= 1.0 + wobble + 0.15 * field(ws, yf / s, xf / s)
            })
        })
        .with_gsd(gsd)
        .with_semantics(MaskSemantics::Flood);
        let cov = mask.coverage();
        if !reject_trivial_pair(&mask) && (0.1..=0.6).contains(&cov) {
            return mask;
        }
    }
}

/// Writes `pre/`, `mask/`, `post/` PNGs and `manifest.jsonl` under `out_dir`
/// and returns the manifest. The same options give byte-identical files.
pub fn make_synthetic_dataset(opts: &SyntheticOptions, out_dir: &Path) -> Result<Manifest> {
    if opts.n == 0 {
        return Err(Error::Config("synthetic dataset needs n >= 1".into()));
    }
    floodviz_core::raster::check_model_dims(opts.size, opts.size)?;
    let mut records = Vec::with_capacity(opts.n);
    for i in 0..opts.n {
        let tile_id = format!("synthetic_{i:04}");
        let mut rng = ChaCha8Rng::seed_from_u64(floodviz_core::augment::derive_seed(opts.seed, &tile_id));
        let pre = synthetic_pre(opts.size, &tile_id, opts.gsd_m_per_px, &mut rng)?;
        let mask = synthetic_mask(opts.size, opts.gsd_m_per_px, &mut rng);
        let post = handcrafted_composite(&pre, &mask, FLOOD_BROWN)?;
        let rec = TripletRecord {
            pre_path: out_dir.join("pre").join(format!("{tile_id}.png")),
            mask_path: out_dir.join("mask").join(format!("{tile_id}.png")),
            post_path: out_dir.join("post").join(format!("{tile_id}.png")),
            tile_id,
            event: Event::Synthetic,
            split: Split::Train,
            gsd_m_per_px: opts.gsd_m_per_px,
        };
        write_image(&rec.pre_path, &pre)?;
        write_mask(&rec.mask_path, &mask)?;
        write_image(&rec.post_path, &post)?;
        records.push(rec);
    }
    let manifest = Manifest::new("manifest", records)?;
    let manifest = split_dataset(
        &manifest,
        &SplitPolicy::Random {
            seed: opts.seed,
            test_frac: opts.test_frac,
        },
    )?;
    manifest.write(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
