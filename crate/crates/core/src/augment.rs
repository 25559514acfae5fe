//! Joint augmentation of `(pre, mask, post)` triplets.
//!
//! Geometric transforms are resampled with nearest neighbor through a single
//! shared index map, so the mask stays binary and stays aligned with both
//! images. Photometric transforms touch the two images only, with identical
//! parameters for both.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, ImageTile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationAug {
    pub p: f64,
    /// Rotate by a uniformly chosen angle in `[-max_degrees, max_degrees]`.
    /// Ignored when `quarter_turns` is set.
    pub max_degrees: f64,
    /// Restrict to multiples of 90 degrees (lossless).
    pub quarter_turns: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropAug {
    pub p: f64,
    pub size_px: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticAug {
    pub p: f64,
    /// Displacement noise is drawn on a grid coarser than the tile by this factor.
    pub grid: usize,
    pub alpha: f64,
    pub sigma: f64,
}

impl Default for ElasticAug {
    fn default() -> Self {
        Self {
            p: 0.5,
            grid: 4,
            alpha: 34.0,
            sigma: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownscaleAug {
    pub p: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HueAug {
    pub p: f64,
    /// Maximum hue rotation as a fraction of the hue circle.
    pub max_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastAug {
    pub p: f64,
    /// Contrast factor drawn from `[1 - range, 1 + range]`.
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorJitterAug {
    pub p: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

/// Per-transform probabilities and ranges. `Default` disables everything.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub rotation: Option<RotationAug>,
    pub crop: Option<CropAug>,
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub elastic: Option<ElasticAug>,
    pub downscale: Option<DownscaleAug>,
    pub hue: Option<HueAug>,
    pub contrast: Option<ContrastAug>,
    pub color_jitter: Option<ColorJitterAug>,
}

impl AugmentConfig {
    /// Flood preset: rotation, hue and contrast variation, elastic warps.
    /// Cropping is opt-in because it changes the tile size.
    pub fn flood() -> Self {
        Self {
            rotation: Some(RotationAug {
                p: 0.5,
                max_degrees: 180.0,
                quarter_turns: true,
            }),
            elastic: Some(ElasticAug::default()),
            hue: Some(HueAug {
                p: 0.5,
                max_shift: 0.05,
            }),
            contrast: Some(ContrastAug { p: 0.5, range: 0.2 }),
            ..Self::default()
        }
    }

    /// Reforestation preset: downscale to 0.8, both flips and color jitter,
    /// each with probability 0.67.
    pub fn reforestation() -> Self {
        const P: f64 = 0.67;
        Self {
            downscale: Some(DownscaleAug { p: P, scale: 0.8 }),
            hflip_p: P,
            vflip_p: P,
            color_jitter: Some(ColorJitterAug {
                p: P,
                brightness: 0.4,
                contrast: 0.2,
                saturation: 0.0,
                hue: 0.0,
            }),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeometricOp {
    /// Counter-clockwise quarter turns.
    Rot90(u8),
    Rotate { degrees: f64 },
    Crop { top: usize, left: usize, size: usize },
    HFlip,
    VFlip,
    Elastic { seed: u64, grid: usize, alpha: f64, sigma: f64 },
    Downscale { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhotometricOp {
    Hue { shift: f64 },
    Contrast { factor: f64 },
    Jitter { brightness: f64, contrast: f64, saturation: f64, hue: f64 },
}

/// A concrete, fully parameterized sequence of transforms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentPlan {
    pub geometric: Vec<GeometricOp>,
    pub photometric: Vec<PhotometricOp>,
}

impl AugmentPlan {
    /// Draws a plan for a tile of `dims` from `cfg`.
    pub fn sample(cfg: &AugmentConfig, dims: (usize, usize), seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut plan = AugmentPlan::default();
        let mut dims = dims;
        let fires = |rng: &mut ChaCha8Rng, p: f64| p > 0.0 && rng.random::<f64>() < p;

        if let Some(r) = &cfg.rotation {
            if fires(&mut rng, r.p) {
                let op = if r.quarter_turns {
                    GeometricOp::Rot90(rng.random_range(1..4))
                } else {
                    GeometricOp::Rotate {
                        degrees: rng.random_range(-r.max_degrees..=r.max_degrees),
                    }
                };
                if let GeometricOp::Rot90(k) = op {
                    if k % 2 == 1 {
                        dims = (dims.1, dims.0);
                    }
                }
                plan.geometric.push(op);
            }
        }
        if let Some(c) = &cfg.crop {
            if c.size_px > dims.0 || c.size_px > dims.1 || c.size_px == 0 {
                return Err(Error::InvalidArgument(format!(
                    "crop of {}px does not fit a {}x{} tile",
                    c.size_px, dims.0, dims.1
                )));
            }
            if fires(&mut rng, c.p) {
                let top = rng.random_range(0..=dims.0 - c.size_px);
                let left = rng.random_range(0..=dims.1 - c.size_px);
                plan.geometric.push(GeometricOp::Crop {
                    top,
                    left,
                    size: c.size_px,
                });
            }
        }
        if fires(&mut rng, cfg.hflip_p) {
            plan.geometric.push(GeometricOp::HFlip);
        }
        if fires(&mut rng, cfg.vflip_p) {
            plan.geometric.push(GeometricOp::VFlip);
        }
        if let Some(e) = &cfg.elastic {
            if fires(&mut rng, e.p) {
                plan.geometric.push(GeometricOp::Elastic {
                    seed: rng.random(),
                    grid: e.grid,
                    alpha: e.alpha,
                    sigma: e.sigma,
                });
            }
        }
        if let Some(d) = &cfg.downscale {
            if fires(&mut rng, d.p) {
                plan.geometric.push(GeometricOp::Downscale { scale: d.scale });
            }
        }
        if let Some(h) = &cfg.hue {
            if fires(&mut rng, h.p) {
                plan.photometric.push(PhotometricOp::Hue {
                    shift: rng.random_range(-h.max_shift..=h.max_shift),
                });
            }
        }
        if let Some(c) = &cfg.contrast {
            if fires(&mut rng, c.p) {
                plan.photometric.push(PhotometricOp::Contrast {
                    factor: rng.random_range(1.0 - c.range..=1.0 + c.range),
                });
            }
        }
        if let Some(j) = &cfg.color_jitter {
            if fires(&mut rng, j.p) {
                let mut factor = |range: f64| {
                    if range > 0.0 {
                        rng.random_range((1.0 - range).max(0.0)..=1.0 + range)
                    } else {
                        1.0
                    }
                };
                let (brightness, contrast, saturation) = (factor(j.brightness), factor(j.contrast), factor(j.saturation));
                let hue = if j.hue > 0.0 {
                    rng.random_range(-j.hue..=j.hue)
                } else {
                    0.0
                };
                plan.photometric.push(PhotometricOp::Jitter {
                    brightness,
                    contrast,
                    saturation,
                    hue,
                });
            }
        }
        Ok(plan)
    }
}

/// Output dims plus, for each output pixel, the source pixel index
/// (`None` = outside the source).
type IndexMap = ((usize, usize), Vec<Option<usize>>);

fn index_map(op: &GeometricOp, (h, w): (usize, usize)) -> Result<IndexMap> {
    let flat = |y: usize, x: usize| Some(y * w + x);
    Ok(match *op {
        GeometricOp::Rot90(k) => match k % 4 {
            0 => ((h, w), (0..h * w).map(Some).collect()),
            1 => {
                let (oh, ow) = (w, h);
                let map = (0..oh)
                    .flat_map(|y| (0..ow).map(move |x| (y, x)))
                    .map(|(y, x)| flat(x, w - 1 - y))
                    .collect();
                ((oh, ow), map)
            }
            2 => {
                let map = (0..h)
                    .flat_map(|y| (0..w).map(move |x| (y, x)))
                    .map(|(y, x)| flat(h - 1 - y, w - 1 - x))
                    .collect();
                ((h, w), map)
            }
            _ => {
                let (oh, ow) = (w, h);
                let map = (0..oh)
                    .flat_map(|y| (0..ow).map(move |x| (y, x)))
                    .map(|(y, x)| flat(h - 1 - x, y))
                    .collect();
                ((oh, ow), map)
            }
        },
        GeometricOp::Rotate { degrees } => {
            let (s, c) = (-degrees.to_radians()).sin_cos();
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let map = (0..h)
                .flat_map(|y| (0..w).map(move |x| (y, x)))
                .map(|(y, x)| {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    let sy = (s * dx + c * dy + cy).round();
                    let sx = (c * dx - s * dy + cx).round();
                    (sy >= 0.0 && sx >= 0.0 && sy < h as f64 && sx < w as f64)
                        .then(|| sy as usize * w + sx as usize)
                })
                .collect();
            ((h, w), map)
        }
        GeometricOp::Crop { top, left, size } => {
            if top + size > h || left + size > w || size == 0 {
                return Err(Error::InvalidArgument(format!(
                    "crop {size}px at ({top},{left}) does not fit a {h}x{w} tile"
                )));
            }
            let map = (0..size)
                .flat_map(|y| (0..size).map(move |x| (y, x)))
                .map(|(y, x)| flat(top + y, left + x))
                .collect();
            ((size, size), map)
        }
        GeometricOp::HFlip => {
            let map = (0..h)
                .flat_map(|y| (0..w).map(move |x| (y, x)))
                .map(|(y, x)| flat(y, w - 1 - x))
                .collect();
            ((h, w), map)
        }
        GeometricOp::VFlip => {
            let map = (0..h)
                .flat_map(|y| (0..w).map(move |x| (y, x)))
                .map(|(y, x)| flat(h - 1 - y, x))
                .collect();
            ((h, w), map)
        }
        GeometricOp::Elastic {
            seed,
            grid,
            alpha,
            sigma,
        } => {
            let (dy, dx) = elastic_field((h, w), seed, grid, alpha, sigma);
            let map = (0..h * w)
                .map(|i| {
                    let (y, x) = (i / w, i % w);
                    let sy = (y as f64 + dy[i]).round().clamp(0.0, (h - 1) as f64) as usize;
                    let sx = (x as f64 + dx[i]).round().clamp(0.0, (w - 1) as f64) as usize;
                    flat(sy, sx)
                })
                .collect();
            ((h, w), map)
        }
        GeometricOp::Downscale { scale } => {
            if !(scale > 0.0 && scale <= 1.0) {
                return Err(Error::InvalidArgument(format!("downscale factor {scale} outside (0, 1]")));
            }
            let dh = ((h as f64 * scale).round() as usize).max(1);
            let dw = ((w as f64 * scale).round() as usize).max(1);
            // Nearest-neighbor down to (dh, dw) and back up.
            let map = (0..h)
                .flat_map(|y| (0..w).map(move |x| (y, x)))
                .map(|(y, x)| {
                    let (ly, lx) = (y * dh / h, x * dw / w);
                    flat(ly * h / dh, lx * w / dw)
                })
                .collect();
            ((h, w), map)
        }
    })
}

/// Smooth random displacement field: Gaussian noise on a grid `grid` times
/// coarser than the tile, blurred with `sigma` (in tile pixels), scaled by
/// `alpha` and bilinearly upsampled.
fn elastic_field((h, w): (usize, usize), seed: u64, grid: usize, alpha: f64, sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let grid = grid.max(1);
    let (gh, gw) = (h.div_ceil(grid), w.div_ceil(grid));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..gh * gw)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v
            })
            .collect()
    };
    let (ny, nx) = (noise(&mut rng), noise(&mut rng));
    let coarse_sigma = sigma / grid as f64;
    let (ny, nx) = (
        gaussian_blur(&ny, gh, gw, coarse_sigma),
        gaussian_blur(&nx, gh, gw, coarse_sigma),
    );
    // Renormalize so alpha is the displacement standard deviation in pixels
    // divided by the blur width, matching the usual parameterization.
    let scale = |v: &[f64]| {
        let std = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt().max(1e-12);
        alpha / sigma.max(1.0) / std
    };
    let (sy, sx) = (scale(&ny), scale(&nx));
    let up = |v: &[f64], s: f64| bilinear_upsample(v, gh, gw, h, w).into_iter().map(|d| d * s).collect::<Vec<_>>();
    (up(&ny, sy), up(&nx, sx))
}

fn gaussian_blur(v: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return v.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let off = k as isize - radius;
                    let (yy, xx) = if horizontal {
                        (y, (x + off).clamp(0, w as isize - 1))
                    } else {
                        ((y + off).clamp(0, h as isize - 1), x)
                    };
                    acc += kv * src[yy as usize * w + xx as usize];
                }
                out[y as usize * w + x as usize] = acc / norm;
            }
        }
        out
    };
    pass(&pass(v, true), false)
}

fn bilinear_upsample(v: &[f64], gh: usize, gw: usize, h: usize, w: usize) -> Vec<f64> {
    let sample = |pos: f64, n: usize| {
        let p = pos.clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (y0, y1, fy) = sample((y as f64 + 0.5) * gh as f64 / h as f64 - 0.5, gh);
        for x in 0..w {
            let (x0, x1, fx) = sample((x as f64 + 0.5) * gw as f64 / w as f64 - 0.5, gw);
            let top = v[y0 * gw + x0] * (1.0 - fx) + v[y0 * gw + x1] * fx;
            let bot = v[y1 * gw + x0] * (1.0 - fx) + v[y1 * gw + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

fn remap_image(img: &ImageTile, (dims, map): &IndexMap) -> Result<ImageTile> {
    let src = img.pixels();
    let pixels = map
        .iter()
        .flat_map(|s| match s {
            Some(i) => [src[i * 3], src[i * 3 + 1], src[i * 3 + 2]],
            None => [0.0; 3],
        })
        .collect();
    img.with_pixels(dims.0, dims.1, pixels)
}

fn remap_mask(mask: &BinaryMask, (dims, map): &IndexMap) -> BinaryMask {
    let values = map.iter().map(|s| s.map_or(0, |i| mask.values()[i])).collect();
    mask.with_values(dims.0, dims.1, values)
}

/// Applies one geometric op to a mask alone.
pub fn apply_geometric_mask(op: &GeometricOp, mask: &BinaryMask) -> Result<BinaryMask> {
    Ok(remap_mask(mask, &index_map(op, mask.dims())?))
}

/// Applies one geometric op to an image alone.
pub fn apply_geometric_image(op: &GeometricOp, img: &ImageTile) -> Result<ImageTile> {
    remap_image(img, &index_map(op, img.dims())?)
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[inline]
fn gray(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn map_pixels(img: &ImageTile, f: impl Fn([f32; 3]) -> [f32; 3]) -> Result<ImageTile> {
    let pixels = img
        .pixels()
        .chunks_exact(3)
        .flat_map(|p| f([p[0], p[1], p[2]]).map(|v| v.clamp(0.0, 1.0)))
        .collect();
    img.with_pixels(img.height(), img.width(), pixels)
}

fn mean_gray(img: &ImageTile) -> f32 {
    let n = (img.height() * img.width()) as f64;
    let sum: f64 = img.pixels().chunks_exact(3).map(|p| gray([p[0], p[1], p[2]]) as f64).sum();
    (sum / n) as f32
}

fn adjust_contrast(img: &ImageTile, factor: f32) -> Result<ImageTile> {
    let m = mean_gray(img);
    map_pixels(img, |p| p.map(|v| (v - m) * factor + m))
}

fn shift_hue(img: &ImageTile, shift: f32) -> Result<ImageTile> {
    map_pixels(img, |p| {
        let [h, s, v] = rgb_to_hsv(p);
        hsv_to_rgb([h + shift, s, v])
    })
}

/// Applies one photometric op to an image.
pub fn apply_photometric(op: &PhotometricOp, img: &ImageTile) -> Result<ImageTile> {
    match *op {
        PhotometricOp::Hue { shift } => shift_hue(img, shift as f32),
        PhotometricOp::Contrast { factor } => adjust_contrast(img, factor as f32),
        PhotometricOp::Jitter {
            brightness,
            contrast,
            saturation,
            hue,
        } => {
            let mut out = map_pixels(img, |p| p.map(|v| v * brightness as f32))?;
            if contrast != 1.0 {
                out = adjust_contrast(&out, contrast as f32)?;
            }
            if saturation != 1.0 {
                let s = saturation as f32;
                out = map_pixels(&out, |p| {
                    let g = gray(p);
                    p.map(|v| (v - g) * s + g)
                })?;
            }
            if hue != 0.0 {
                out = shift_hue(&out, hue as f32)?;
            }
            Ok(out)
        }
    }
}

/// An augmented triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub pre: ImageTile,
    pub mask: BinaryMask,
    pub post: ImageTile,
}

impl Triplet {
    pub fn new(pre: ImageTile, mask: BinaryMask, post: ImageTile) -> Result<Self> {
        if pre.dims() != post.dims() {
            return Err(Error::DimMismatch {
                left: pre.dims(),
                right: post.dims(),
            });
        }
        if mask.dims() != pre.dims() {
            return Err(Error::DimMismatch {
                left: mask.dims(),
                right: pre.dims(),
            });
        }
        Ok(Self { pre, mask, post })
    }

    /// Applies a concrete plan: geometric ops to all three rasters through
    /// the same index map, photometric ops to the two images.
    pub fn apply(&self, plan: &AugmentPlan) -> Result<Triplet> {
        let mut out = self.clone();
        for op in &plan.geometric {
            let map = index_map(op, out.pre.dims())?;
            out = Triplet {
                pre: remap_image(&out.pre, &map)?,
                mask: remap_mask(&out.mask, &map),
                post: remap_image(&out.post, &map)?,
            };
        }
        for op in &plan.photometric {
            out.pre = apply_photometric(op, &out.pre)?;
            out.post = apply_photometric(op, &out.post)?;
        }
        Ok(out)
    }
}

/// Samples a plan from `cfg` with `seed` and applies it to the triplet.
pub fn augment(
    pre: &ImageTile,
    mask: &BinaryMask,
    post: &ImageTile,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<(ImageTile, BinaryMask, ImageTile)> {
    let triplet = Triplet::new(pre.clone(), mask.clone(), post.clone())?;
    let plan = AugmentPlan::sample(cfg, pre.dims(), seed)?;
    let out = triplet.apply(&plan)?;
    Ok((out.pre, out.mask, out.post))
}

/// Stable per-record seed from a global seed and a tile id (FNV-1a).
pub fn derive_seed(global_seed: u64, tile_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ global_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for b in tile_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
