//! U-Net flood segmenter trained on L1, soft-IoU and a single-scale
//! adversarial term, with an optional L1-only finetune of the last layers.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use floodviz_core::metrics::{iou, MaskPredictor};
use floodviz_core::{BinaryMask, ImageTile};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::convert::{image_tensor, mask_tensor, probabilities_to_mask};
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::layers::{sigmoid, Conv2d, ConvTranspose2d};
use crate::losses::{discriminator_loss, generator_adversarial, LossConfig};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Init, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegLossWeights {
    pub l1_weight: f64,
    pub iou_weight: f64,
    pub adversarial_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub enabled: bool,
    pub l1_only: bool,
    /// Number of trailing layer groups (head first) updated while finetuning.
    pub layers: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub depth: usize,
    pub base_width: usize,
    pub losses: SegLossWeights,
    pub finetune: FinetuneConfig,
    pub threshold: f64,
    /// Smoothing constant of the soft-IoU loss.
    pub iou_smooth: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            out_channels: 1,
            depth: 3,
            base_width: 8,
            losses: SegLossWeights {
                l1_weight: 1.0,
                iou_weight: 1.0,
                adversarial_weight: 0.05,
            },
            finetune: FinetuneConfig {
                enabled: true,
                l1_only: true,
                layers: 2,
                steps: 20,
            },
            threshold: 0.5,
            iou_smooth: 1.0,
            lr: 1e-3,
            batch_size: 4,
            steps: 200,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 3 || self.out_channels != 1 {
            return Err(Error::Config("segmenter maps 3 channels to 1".into()));
        }
        if self.depth == 0 || self.base_width == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "depth, base_width and batch_size must be positive".into(),
            ));
        }
        let w = &self.losses;
        for v in [
            w.l1_weight,
            w.iou_weight,
            w.adversarial_weight,
            self.iou_smooth,
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weights must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// `1 - (sum(p y) + s) / (sum(p) + sum(y) - sum(p y) + s)` over the batch.
pub fn soft_iou_loss(p: &Tensor, y: &Tensor, smooth: f64) -> Result<Tensor> {
    let inter = (p * y)?.sum_all()?;
    let union = ((p.sum_all()? + y.sum_all()?)? - &inter)?;
    let ratio = ((inter + smooth)? / (union + smooth)?)?;
    Ok(ratio.affine(-1.0, 1.0)?)
}

struct DoubleConv {
    c1: Conv2d,
    c2: Conv2d,
}

impl DoubleConv {
    fn new(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            c1: Conv2d::new(
                ps,
                &format!("{name}.c1"),
                c_in,
                c_out,
                3,
                1,
                1,
                true,
                Init::Kaiming,
            )?,
            c2: Conv2d::new(
                ps,
                &format!("{name}.c2"),
                c_out,
                c_out,
                3,
                1,
                1,
                true,
                Init::Kaiming,
            )?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.c1.forward(x, true)?.relu()?;
        Ok(self.c2.forward(&h, true)?.relu()?)
    }
}

pub struct Segmenter {
    cfg: SegmenterConfig,
    params: ParamStore,
    enc: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    up: Vec<ConvTranspose2d>,
    dec: Vec<DoubleConv>,
    head: Conv2d,
}

impl Segmenter {
    pub fn new(cfg: SegmenterConfig, dtype: DType, device: &Device, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(dtype, device, seed);
        let w = cfg.base_width;
        let mut enc = Vec::new();
        let mut c_in = cfg.in_channels;
        for i in 0..cfg.depth {
            enc.push(DoubleConv::new(&mut ps, &format!("enc{i}"), c_in, w << i)?);
            c_in = w << i;
        }
        let bottleneck = DoubleConv::new(&mut ps, "mid", c_in, w << cfg.depth)?;
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for i in (0..cfg.depth).rev() {
            let c = w << (i + 1);
            up.push(ConvTranspose2d::new(
                &mut ps,
                &format!("up{i}"),
                c,
                c / 2,
                2,
                2,
                0,
                0,
                true,
                Init::Kaiming,
            )?);
            dec.push(DoubleConv::new(&mut ps, &format!("dec{i}"), c, c / 2)?);
        }
        let head = Conv2d::new(
            &mut ps,
            "head",
            w,
            cfg.out_channels,
            1,
            1,
            0,
            true,
            Init::Kaiming,
        )?;
        Ok(Self {
            cfg,
            params: ps,
            enc,
            bottleneck,
            up,
            dec,
            head,
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Layer-group name prefixes in forward order.
    pub fn layer_groups(&self) -> Vec<String> {
        let mut g: Vec<String> = (0..self.cfg.depth).map(|i| format!("enc{i}.")).collect();
        g.push("mid.".into());
        for i in (0..self.cfg.depth).rev() {
            g.push(format!("up{i}."));
            g.push(format!("dec{i}."));
        }
        g.push("head.".into());
        g
    }

    /// Probabilities in `[0, 1]`, shape `(N, 1, H, W)`, for a `[-1, 1]` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let m = 1 << self.cfg.depth;
        if c != self.cfg.in_channels || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "segmenter expects {} channels and dims divisible by {m}, got {c}x{h}x{w}",
                self.cfg.in_channels
            )));
        }
        let mut skips = Vec::new();
        let mut hcur = x.clone();
        for e in &self.enc {
            let s = e.forward(&hcur)?;
            hcur = s.max_pool2d(2)?;
            skips.push(s);
        }
        hcur = self.bottleneck.forward(&hcur)?;
        for (u, d) in self.up.iter().zip(&self.dec) {
            let skip = skips.pop().expect("one skip per level");
            let upd = u.forward(&hcur)?;
            hcur = d.forward(&Tensor::cat(&[&upd, &skip], 1)?)?;
        }
        sigmoid(&self.head.forward(&hcur, true)?)
    }

    pub fn probabilities(&self, image: &ImageTile) -> Result<Tensor> {
        let x = image_tensor(image, self.params.dtype(), self.params.device())?;
        self.forward(&x)
    }

    pub fn segment_with_threshold(&self, image: &ImageTile, threshold: f64) -> Result<BinaryMask> {
        let p = self.probabilities(image)?;
        probabilities_to_mask(&p, threshold, image.gsd_m_per_px)
    }

    pub fn segment(&self, image: &ImageTile) -> Result<BinaryMask> {
        self.segment_with_threshold(image, self.cfg.threshold)
    }

    pub fn save(&self, path: &Path, dataset_fingerprint: &str) -> Result<()> {
        let meta = CheckpointMeta::new("segmenter", &self.cfg, dataset_fingerprint, 0)?;
        save_checkpoint(path, &self.params.named_tensors("s."), &meta)
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        let (meta, tensors) = load_checkpoint(path, device, None, false)?;
        if meta.kind != "segmenter" {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("holds a `{}` model, not a segmenter", meta.kind),
            });
        }
        let cfg: SegmenterConfig = serde_json::from_str(&meta.config_json)?;
        let s = Self::new(cfg, DType::F32, device, 0)?;
        s.params.load(&tensors, "s.")?;
        Ok(s)
    }
}

impl MaskPredictor for Segmenter {
    fn predict(&self, image: &ImageTile) -> floodviz_core::Result<BinaryMask> {
        Ok(self.segment(image)?)
    }
}

/// Per-step loss history of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmenterHistory {
    /// Weighted L1 + soft-IoU.
    pub supervised: Vec<f64>,
    pub adversarial: Vec<f64>,
    pub discriminator: Vec<f64>,
    pub finetune: Vec<f64>,
}

fn batch(
    labeled: &[(ImageTile, BinaryMask)],
    idx: &[usize],
    dtype: DType,
    device: &Device,
) -> Result<(Tensor, Tensor)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &i in idx {
        let (img, mask) = &labeled[i];
        if img.dims() != mask.dims() {
            return Err(Error::Core(floodviz_core::Error::DimMismatch {
                left: img.dims(),
                right: mask.dims(),
            }));
        }
        xs.push(image_tensor(img, dtype, device)?);
        ys.push(mask_tensor(mask, dtype, device)?);
    }
    Ok((Tensor::cat(&xs, 0)?, Tensor::cat(&ys, 0)?))
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Yields batches of indices, reshuffled every pass over the data with a
/// generator derived from `(seed, pass)`.
struct Batcher {
    n: usize,
    batch_size: usize,
    seed: u64,
    pass: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            n,
            batch_size: batch_size.min(n),
            seed,
            pass: 0,
            order: Vec::new(),
            pos: usize::MAX,
        }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order = (0..self.n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.seed ^ self.pass.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            self.order.shuffle(&mut rng);
            self.pass += 1;
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let b = self.order[self.pos..end].to_vec();
        self.pos = end;
        b
    }
}

/// Trains a segmenter on `(image, mask)` pairs. Reproducible for a fixed
/// seed and thread count.
pub fn train_segmenter(
    labeled: &[(ImageTile, BinaryMask)],
    cfg: &SegmenterConfig,
    seed: u64,
) -> Result<(Segmenter, SegmenterHistory)> {
    if labeled.is_empty() {
        return Err(Error::Empty("labeled segmentation set"));
    }
    let device = Device::Cpu;
    let dtype = DType::F32;
    let seg = Segmenter::new(cfg.clone(), dtype, &device, seed)?;
    let w = &cfg.losses;
    let use_adv = w.adversarial_weight > 0.0;
    let disc = if use_adv {
        let dcfg = DiscriminatorConfig {
            in_channels: 4,
            n_scales: 1,
            n_layers: 3,
            base_width: cfg.base_width,
            use_spectral_norm: false,
        };
        Some(Discriminator::new(dcfg, dtype, &device, seed ^ 0xD15C)?)
    } else {
        None
    };
    let lsgan = LossConfig::default();
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut opt_s = Adam::new(seg.params.select(&[String::new()]), adam)?;
    let mut opt_d = match &disc {
        Some(d) => Some(Adam::new(d.params().select(&[String::new()]), adam)?),
        None => None,
    };
    let mut history = SegmenterHistory::default();
    let mut batches = Batcher::new(labeled.len(), cfg.batch_size, seed);

    for step in 0..cfg.steps {
        let (x, y) = batch(labeled, &batches.next(), dtype, &device)?;
        let p = seg.forward(&x)?;
        // Discriminator sees (image, mask) pairs with the mask in [-1, 1].
        let (adv, d_val) = match (&disc, &mut opt_d) {
            (Some(d), Some(od)) => {
                let real = d.forward(&Tensor::cat(&[&x, &y.affine(2.0, -1.0)?], 1)?, true)?;
                let fake_in = Tensor::cat(&[&x, &p.affine(2.0, -1.0)?], 1)?;
                let fake_d = d.forward(&fake_in.detach(), true)?;
                let (ld, _, _) = discriminator_loss(&real.detach(), &fake_d, &lsgan)?;
                od.step(&ld.backward()?)?;
                let fake = d.forward(&fake_in, true)?;
                (
                    Some(generator_adversarial(&real.detach(), &fake, &lsgan)?),
                    scalar(&ld)?,
                )
            }
            _ => (None, 0.0),
        };
        let l1 = (&p - &y)?.abs()?.mean_all()?;
        let siou = soft_iou_loss(&p, &y, cfg.iou_smooth)?;
        let supervised = ((l1 * w.l1_weight)? + (siou * w.iou_weight)?)?;
        let sup_val = scalar(&supervised)?;
        let (total, adv_val) = match adv {
            Some(a) => {
                let v = scalar(&a)?;
                ((supervised + (a * w.adversarial_weight)?)?, v)
            }
            None => (supervised, 0.0),
        };
        if !sup_val.is_finite() || !adv_val.is_finite() || !d_val.is_finite() {
            return Err(Error::NonFinite {
                what: "segmenter",
                step,
            });
        }
        opt_s.step(&total.backward()?)?;
        history.supervised.push(sup_val);
        history.adversarial.push(adv_val);
        history.discriminator.push(d_val);
    }

    if cfg.finetune.enabled && cfg.finetune.steps > 0 {
        let groups = seg.layer_groups();
        let keep = cfg.finetune.layers.min(groups.len());
        let tail: Vec<String> = groups[groups.len() - keep..].to_vec();
        let mut opt_f = Adam::new(seg.params.select(&tail), adam)?;
        for step in 0..cfg.finetune.steps {
            let (x, y) = batch(labeled, &batches.next(), dtype, &device)?;
            let p = seg.forward(&x)?;
            let mut loss = (&p - &y)?.abs()?.mean_all()?;
            if !cfg.finetune.l1_only {
                loss = (loss + soft_iou_loss(&p, &y, cfg.iou_smooth)?)?;
            }
            let v = scalar(&loss)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "finetune",
                    step,
                });
            }
            opt_f.step(&loss.backward()?)?;
            history.finetune.push(v);
        }
    }
    Ok((seg, history))
}

/// Holdout and fold assignment (indices into the labeled set).
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub holdout: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// The cross-validation pool (everything but the holdout), sorted.
    pub fn pool(&self) -> Vec<usize> {
        let mut p: Vec<usize> = self.folds.iter().flatten().copied().collect();
        p.sort_unstable();
        p
    }
}

/// Shuffles `0..n` with `seed`, takes the first `holdout` indices as the
/// test set and deals the rest into `k` folds (sizes differ by at most one).
pub fn plan_folds(n: usize, k: usize, holdout: usize, seed: u64) -> Result<FoldPlan> {
    if n <= holdout {
        return Err(Error::Config(format!(
            "{n} labeled images leave nothing after a holdout of {holdout}"
        )));
    }
    let pool = n - holdout;
    if k == 0 || k > pool {
        return Err(Error::Config(format!(
            "cannot make {k} folds from {pool} images"
        )));
    }
    if k == 1 {
        tracing::warn!("k = 1: single split, the pool trains and the holdout validates");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, rest) = order.split_at(holdout);
    let (base, extra) = (pool / k, pool % k);
    let mut folds = Vec::with_capacity(k);
    let mut pos = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        folds.push(rest[pos..pos + size].to_vec());
        pos += size;
    }
    Ok(FoldPlan {
        holdout: test.to_vec(),
        folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub fold_iou: Vec<f64>,
    pub mean_iou: f64,
    pub best_fold: usize,
    /// Mean IoU of the best fold's model on the holdout.
    pub holdout_iou: f64,
}

fn mean_iou(seg: &Segmenter, labeled: &[(ImageTile, BinaryMask)], idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in idx {
        let (img, mask) = &labeled[i];
        total += iou(&seg.segment(img)?, mask)?;
    }
    Ok(total / idx.len() as f64)
}

/// k-fold cross-validation after setting aside `holdout` images. The fold
/// with the best validation IoU is scored on the holdout and returned.
pub fn cross_validate(
    labeled: &[(ImageTile, BinaryMask)],
    k: usize,
    holdout: usize,
    cfg: &SegmenterConfig,
    seed: u64,
) -> Result<(CrossValidation, Segmenter)> {
    let plan = plan_folds(labeled.len(), k, holdout, seed)?;
    let mut fold_iou = Vec::with_capacity(k);
    let mut models = Vec::with_capacity(k);
    for (f, val) in plan.folds.iter().enumerate() {
        let (train_idx, val_idx): (Vec<usize>, &[usize]) = if k == 1 {
            (val.clone(), &plan.holdout)
        } else {
            let train = plan
                .folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            (train, val)
        };
        let train: Vec<_> = train_idx.iter().map(|&i| labeled[i].clone()).collect();
        let (seg, _) = train_segmenter(&train, cfg, seed.wrapping_add(f as u64 + 1))?;
        fold_iou.push(mean_iou(&seg, labeled, val_idx)?);
        models.push(seg);
    }
    let best_fold = fold_iou
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("k >= 1");
    let holdout_iou = if plan.holdout.is_empty() {
        f64::NAN
    } else {
        mean_iou(&models[best_fold], labeled, &plan.holdout)?
    };
    let cv = CrossValidation {
        mean_iou: fold_iou.iter().sum::<f64>() / k as f64,
        fold_iou,
        best_fold,
        holdout_iou,
    };
    Ok((cv, models.swap_remove(best_fold)))
}

/// Named segmenter tensors, for embedding into other checkpoints.
pub fn segmenter_tensors(seg: &Segmenter) -> BTreeMap<String, Tensor> {
    seg.params.named_tensors("s.")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn paper_fold_counts() {
        let plan = plan_folds(111, 4, 23, 0).unwrap();
        assert_eq!(plan.holdout.len(), 23);
        assert_eq!(
            plan.folds.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![22; 4]
        );
        let all: HashSet<usize> = plan
            .holdout
            .iter()
            .chain(plan.folds.iter().flatten())
            .copied()
            .collect();
        assert_eq!(all.len(), 111);
        assert!(plan_folds(23, 4, 23, 0).is_err());
        assert!(plan_folds(30, 8, 23, 0).is_err());
        assert_eq!(plan_folds(30, 1, 23, 0).unwrap().folds.len(), 1);
    }

    #[test]
    fn soft_iou_on_binary_inputs() {
        let dev = Device::Cpu;
        let p = Tensor::new(&[1.0f64, 1.0, 0.0, 0.0], &dev).unwrap();
        let y = Tensor::new(&[1.0f64, 0.0, 1.0, 0.0], &dev).unwrap();
        // Unsmoothed: exactly 1 - IoU = 1 - 1/3.
        let l0 = soft_iou_loss(&p, &y, 0.0)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!((l0 - 2.0 / 3.0).abs() < 1e-15);
        // Smoothed: 1 - 2/4.
        let l1 = soft_iou_loss(&p, &y, 1.0)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!((l1 - 0.5).abs() < 1e-15);
        assert_eq!(
            soft_iou_loss(&y, &y, 1.0)
                .unwrap()
                .to_scalar::<f64>()
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn segment_is_binary_and_shape_preserving() {
        let seg = Segmenter::new(SegmenterConfig::default(), DType::F32, &Device::Cpu, 0).unwrap();
        let img = ImageTile::filled("x", 64, 64, [0.3, 0.5, 0.2]).unwrap();
        let m = seg.segment(&img).unwrap();
        assert_eq!(m.dims(), (64, 64));
        assert_eq!(m, seg.segment(&img).unwrap());
        let lo = seg.segment_with_threshold(&img, 0.2).unwrap();
        let hi = seg.segment_with_threshold(&img, 0.8).unwrap();
        assert!(lo.values().iter().zip(hi.values()).all(|(a, b)| b <= a));
    }

    #[test]
    fn empty_training_set_errors() {
        assert!(matches!(
            train_segmenter(&[], &SegmenterConfig::default(), 0),
            Err(Error::Empty(_))
        ));
    }
}
