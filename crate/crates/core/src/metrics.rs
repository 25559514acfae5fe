//! Physical-consistency and photorealism metrics, and their combination
//! into the flood visualization plausibility score (FVPS).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, ImageTile};

/// Default guard term added to both submetrics inside the harmonic mean.
pub const DEFAULT_FVPS_EPS: f64 = 1e-6;

/// Predicts a binary mask from an image (the segmentation oracle).
pub trait MaskPredictor: Send + Sync {
    fn predict(&self, image: &ImageTile) -> Result<BinaryMask>;
}

impl<F> MaskPredictor for F
where
    F: Fn(&ImageTile) -> Result<BinaryMask> + Send + Sync,
{
    fn predict(&self, image: &ImageTile) -> Result<BinaryMask> {
        self(image)
    }
}

/// A perceptual distance in `[0, 1]`, 0 meaning identical.
pub trait PerceptualMetric: Send + Sync {
    fn distance(&self, a: &ImageTile, b: &ImageTile) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskResolution {
    High,
    Low,
}

impl MaskResolution {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskResolution::High => "high",
            MaskResolution::Low => "low",
        }
    }
}

impl std::fmt::Display for MaskResolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MaskResolution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high" => Ok(MaskResolution::High),
            "low" => Ok(MaskResolution::Low),
            _ => Err(Error::InvalidArgument(format!("mask resolution `{s}`: expected high|low"))),
        }
    }
}

/// The two distinct epsilons: the FVPS guard and the consistency margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonConfig {
    pub fvps_eps: f64,
    pub consistency_margin: f64,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        Self {
            fvps_eps: DEFAULT_FVPS_EPS,
            consistency_margin: 0.05,
        }
    }
}

impl EpsilonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fvps_eps > 0.0) || !(self.consistency_margin > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilons must be strictly positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-image metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub tile_id: String,
    pub model_tag: String,
    pub mask_resolution: MaskResolution,
    pub iou: f64,
    pub lpips: f64,
    pub fvps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub model_tag: String,
    pub mask_resolution: MaskResolution,
    pub mean_iou: f64,
    pub mean_lpips: f64,
    pub mean_fvps: f64,
    pub n_images: usize,
}

fn check_same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch { left: a, right: b });
    }
    Ok(())
}

/// Intersection over union of the set pixels. Two empty masks agree
/// perfectly and score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_same_dims(a.dims(), b.dims())?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        inter += u64::from(x & y);
        union += u64::from(x | y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Harmonic mean of `iou` and `1 - lpips`, each guarded by `eps`.
pub fn fvps(iou_val: f64, lpips_val: f64, eps: f64) -> Result<f64> {
    for (name, v) in [("iou", iou_val), ("lpips", lpips_val)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
        }
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    Ok(2.0 / (1.0 / (iou_val + eps) + 1.0 / (1.0 - lpips_val + eps)))
}

/// Mean absolute difference between two masks, in `[0, 1]`.
pub fn mask_mean_abs_diff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_same_dims(a.dims(), b.dims())?;
    let diff = a.values().iter().zip(b.values()).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.values().len() as f64)
}

/// Whether the segmented flood extent of `gen` lies within `margin`
/// (mean absolute difference) of `flood_map`. Mismatched dims or a failing
/// segmenter count as inconsistent.
pub fn is_physically_consistent(
    gen: &ImageTile,
    flood_map: &BinaryMask,
    segmenter: &dyn MaskPredictor,
    margin: f64,
) -> bool {
    segmenter
        .predict(gen)
        .and_then(|seg| mask_mean_abs_diff(&seg, flood_map))
        .is_ok_and(|d| d < margin)
}

/// Bundles the segmentation oracle, the perceptual backbone and the FVPS
/// guard used to score generated images.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub segmenter: &'a dyn MaskPredictor,
    pub perceptual: &'a dyn PerceptualMetric,
    pub eps: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(segmenter: &'a dyn MaskPredictor, perceptual: &'a dyn PerceptualMetric) -> Self {
        Self {
            segmenter,
            perceptual,
            eps: DEFAULT_FVPS_EPS,
        }
    }

    /// Scores one generated image: IoU of its segmentation against the flood
    /// map, perceptual distance to the ground-truth post image, and FVPS.
    pub fn evaluate_image(
        &self,
        gen: &ImageTile,
        gt_post: &ImageTile,
        flood_map: &BinaryMask,
        model_tag: &str,
        mask_resolution: MaskResolution,
    ) -> Result<MetricRecord> {
        check_same_dims(gen.dims(), gt_post.dims())?;
        let seg = self.segmenter.predict(gen)?;
        let iou_val = iou(&seg, flood_map)?;
        let lpips = self.perceptual.distance(gen, gt_post)?.clamp(0.0, 1.0);
        Ok(MetricRecord {
            tile_id: gen.tile_id.clone(),
            model_tag: model_tag.to_string(),
            mask_resolution,
            iou: iou_val,
            lpips,
            fvps: fvps(iou_val, lpips, self.eps)?,
        })
    }
}

/// Arithmetic means over per-image records. The FVPS summary is the mean of
/// per-image scores, not the score of the means.
pub fn aggregate(records: &[MetricRecord]) -> Result<MetricSummary> {
    let first = records.first().ok_or(Error::Empty("metric records"))?;
    if let Some(r) = records
        .iter()
        .find(|r| r.model_tag != first.model_tag || r.mask_resolution != first.mask_resolution)
    {
        return Err(Error::InvalidArgument(format!(
            "cannot aggregate ({}, {}) with ({}, {})",
            first.model_tag, first.mask_resolution, r.model_tag, r.mask_resolution
        )));
    }
    let n = records.len() as f64;
    let mean = |f: fn(&MetricRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    Ok(MetricSummary {
        model_tag: first.model_tag.clone(),
        mask_resolution: first.mask_resolution,
        mean_iou: mean(|r| r.iou),
        mean_lpips: mean(|r| r.lpips),
        mean_fvps: mean(|r| r.fvps),
        n_images: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(BinaryMask);
    impl MaskPredictor for Fixed {
        fn predict(&self, _: &ImageTile) -> Result<BinaryMask> {
            Ok(self.0.clone())
        }
    }

    struct PixelL1;
    impl PerceptualMetric for PixelL1 {
        fn distance(&self, a: &ImageTile, b: &ImageTile) -> Result<f64> {
            let s: f64 = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).abs() as f64).sum();
            Ok(s / a.pixels().len() as f64)
        }
    }

    fn rec(iou: f64, lpips: f64) -> MetricRecord {
        MetricRecord {
            tile_id: "t".into(),
            model_tag: "m".into(),
            mask_resolution: MaskResolution::High,
            iou,
            lpips,
            fvps: fvps(iou, lpips, DEFAULT_FVPS_EPS).unwrap(),
        }
    }

    #[test]
    fn iou_examples() {
        let a = BinaryMask::from_fn(4, 4, |r, c| r < 2 && c < 2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let p = BinaryMask::from_fn(2, 2, |r, c| r == 0 && c == 0);
        let q = BinaryMask::from_fn(2, 2, |r, c| r == 1 && c == 1);
        assert_eq!(iou(&p, &q).unwrap(), 0.0);
        let b = BinaryMask::from_fn(4, 4, |r, c| r < 2 && (1..=2).contains(&c));
        assert!((iou(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(iou(&BinaryMask::zeros(3, 3), &BinaryMask::zeros(3, 3)).unwrap(), 1.0);
        assert!(matches!(
            iou(&BinaryMask::zeros(3, 3), &BinaryMask::zeros(3, 4)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn fvps_examples() {
        assert!(fvps(0.0, 0.0, 1e-6).unwrap() <= 2e-6);
        assert!((fvps(1.0, 0.0, 1e-6).unwrap() - 1.0).abs() <= 1e-5);
        // Exact value is 0.5 + eps, on the edge of the 1e-6 band; allow f64 rounding.
        let mid = fvps(0.5, 0.5, 1e-6).unwrap();
        assert!((mid - (0.5 + 1e-6)).abs() <= 1e-15);
        assert!((mid - 0.5).abs() <= 1e-6 + 1e-12);
        assert!(fvps(1.2, 0.0, 1e-6).is_err());
        assert!(fvps(0.5, -0.1, 1e-6).is_err());
        assert!(fvps(0.5, 0.5, 0.0).is_err());
    }

    #[test]
    fn consistency_examples() {
        let img = ImageTile::filled("g", 10, 10, [0.5; 3]).unwrap();
        let map = BinaryMask::from_fn(10, 10, |r, _| r < 5);
        assert!(is_physically_consistent(&img, &map, &Fixed(map.clone()), 1e-9));

        let inverted = BinaryMask::from_fn(10, 10, |r, _| r >= 5);
        assert!(!is_physically_consistent(&img, &map, &Fixed(inverted), 0.99));

        let mut one_off = map.clone();
        one_off.set(9, 9, true);
        assert_eq!(mask_mean_abs_diff(&one_off, &map).unwrap(), 0.01);
        assert!(is_physically_consistent(&img, &map, &Fixed(one_off), 0.05));
    }

    #[test]
    fn evaluate_image_examples() {
        let img = ImageTile::filled("g", 4, 4, [0.2, 0.4, 0.6]).unwrap();
        let a = BinaryMask::from_fn(4, 4, |r, c| r < 2 && c < 2);
        let seg = Fixed(a.clone());
        let r = Evaluator::new(&seg, &PixelL1)
            .evaluate_image(&img, &img, &a, "m", MaskResolution::High)
            .unwrap();
        assert_eq!(r.lpips, 0.0);
        assert_eq!(r.iou, 1.0);
        assert!((r.fvps - 1.0).abs() < 1e-5);

        let seg = Fixed(BinaryMask::zeros(4, 4));
        let r = Evaluator::new(&seg, &PixelL1)
            .evaluate_image(&img, &img, &a, "m", MaskResolution::High)
            .unwrap();
        assert_eq!(r.iou, 0.0);
        assert!(r.fvps < 2e-6);

        let b = BinaryMask::from_fn(4, 4, |r, c| r < 2 && (1..=2).contains(&c));
        let seg = Fixed(b);
        let r = Evaluator::new(&seg, &PixelL1)
            .evaluate_image(&img, &img, &a, "m", MaskResolution::High)
            .unwrap();
        assert!((r.iou - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_examples() {
        let mut a = rec(0.5, 0.5);
        a.fvps = 0.2;
        let mut b = rec(0.5, 0.5);
        b.fvps = 0.4;
        assert!((aggregate(&[a, b]).unwrap().mean_fvps - 0.3).abs() < 1e-15);

        let single = rec(0.7, 0.2);
        let s = aggregate(std::slice::from_ref(&single)).unwrap();
        assert_eq!((s.mean_iou, s.mean_lpips, s.mean_fvps, s.n_images), (0.7, 0.2, single.fvps, 1));

        let s = aggregate(&[rec(1.0, 0.0), rec(0.0, 0.0)]).unwrap();
        assert!((s.mean_fvps - 0.5).abs() < 1e-5);
        let of_means = fvps(s.mean_iou, s.mean_lpips, DEFAULT_FVPS_EPS).unwrap();
        assert!((of_means - 2.0 / 3.0).abs() < 1e-5);

        assert!(matches!(aggregate(&[]), Err(Error::Empty(_))));
        let mut other = rec(0.1, 0.1);
        other.model_tag = "x".into();
        assert!(aggregate(&[rec(0.1, 0.1), other]).is_err());
    }

    #[test]
    fn epsilon_config_validation() {
        assert!(EpsilonConfig::default().validate().is_ok());
        let bad = EpsilonConfig {
            fvps_eps: 0.0,
            consistency_margin: 0.1,
        };
        assert!(bad.validate().is_err());
    }
}
