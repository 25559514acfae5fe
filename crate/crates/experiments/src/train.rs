//! GAN training loop with periodic, resumable checkpoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use floodviz_core::augment::{augment, derive_seed, AugmentConfig};
use floodviz_core::manifest::{Manifest, Split};
use floodviz_models::checkpoint::{config_hash, load_checkpoint, read_checkpoint_meta, save_checkpoint, CheckpointMeta};
use floodviz_models::convert::{image_tensor, input_tensor};
use floodviz_models::discriminator::{Discriminator, DiscriminatorConfig};
use floodviz_models::generator::{Generator, GeneratorConfig};
use floodviz_models::losses::{discriminator_loss, feature_matching, generator_adversarial, LossConfig};
use floodviz_models::optim::Adam;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, RunConfig, TrainConfig};
use crate::data::{check_tile_size, dataset_fingerprint, load_split, Sample};
use crate::error::{Error, Result};

pub const GAN_CHECKPOINT_KIND: &str = "gan";
const DISC_SEED_SALT: u64 = 0xD15C_0000_0000_0001;

/// Everything that determines the trained weights, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanCheckpointConfig {
    pub model: ModelKind,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    pub epochs: usize,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
}

impl GanCheckpointConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            model: cfg.model,
            generator: cfg.generator_config(),
            discriminator: cfg.discriminator_config(),
            train: cfg.train.clone(),
            epochs: cfg.epochs,
            seed: cfg.seed,
            augment: cfg.augment.clone(),
        }
    }
}

/// Mean losses over the steps of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub d_loss: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub g_loss: f64,
    pub g_adv: f64,
    pub g_feature_matching: f64,
    /// Unweighted mean absolute error to the post image, in model range.
    pub g_l1: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Accept a resume checkpoint whose config hash differs.
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub history: Vec<EpochStats>,
}

struct Gan {
    g: Generator,
    d: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
}

impl Gan {
    fn new(ck: &GanCheckpointConfig) -> Result<Self> {
        let device = Device::Cpu;
        let g = Generator::new(ck.generator.clone(), DType::F32, &device, ck.seed)?;
        let d = Discriminator::new(ck.discriminator.clone(), DType::F32, &device, ck.seed ^ DISC_SEED_SALT)?;
        let opt_g = Adam::new(g.params().select(&[String::new()]), ck.train.adam)?;
        let opt_d = Adam::new(d.params().select(&[String::new()]), ck.train.adam)?;
        Ok(Self { g, d, opt_g, opt_d })
    }

    fn tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut t = self.g.params().named_tensors("g.");
        t.extend(self.d.params().named_tensors("d."));
        t.extend(self.opt_g.state_tensors("og.")?);
        t.extend(self.opt_d.state_tensors("od.")?);
        for (i, conv) in self.d.convs().enumerate() {
            if let Some(sn) = conv.spectral_norm() {
                let (u, v) = sn.vectors();
                t.insert(format!("sn.{i}.u"), u);
                t.insert(format!("sn.{i}.v"), v);
            }
        }
        Ok(t)
    }

    fn load(&mut self, t: &std::collections::HashMap<String, Tensor>) -> Result<()> {
        self.g.params().load(t, "g.")?;
        self.d.params().load(t, "d.")?;
        self.opt_g.load_state(t, "og.")?;
        self.opt_d.load_state(t, "od.")?;
        for (i, conv) in self.d.convs().enumerate() {
            if let Some(sn) = conv.spectral_norm() {
                let get = |k: String| {
                    t.get(&k)
                        .cloned()
                        .ok_or_else(|| floodviz_models::Error::Shape(format!("missing tensor `{k}`")))
                };
                sn.set_vectors(get(format!("sn.{i}.u"))?, get(format!("sn.{i}.v"))?);
            }
        }
        Ok(())
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Sample order of one epoch; depends only on `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
    order
}

fn batch_tensors(
    samples: &[Sample],
    idx: &[usize],
    ck: &GanCheckpointConfig,
    epoch: usize,
) -> Result<(Tensor, Tensor)> {
    let device = Device::Cpu;
    let conditioned = ck.generator.conditioned();
    let mut xs = Vec::with_capacity(idx.len());
    let mut ys = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &samples[i];
        let (pre, mask, post) = match &ck.augment {
            Some(aug) => {
                let seed = derive_seed(epoch_seed(ck.seed, epoch), &s.tile_id);
                augment(&s.pre, &s.mask, &s.post, aug, seed)?
            }
            None => (s.pre.clone(), s.mask.clone(), s.post.clone()),
        };
        let mask = conditioned.then_some(&mask);
        xs.push(input_tensor(&pre, mask, DType::F32, &device)?);
        ys.push(image_tensor(&post, DType::F32, &device)?);
    }
    Ok((Tensor::cat(&xs, 0)?, Tensor::cat(&ys, 0)?))
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

struct StepLosses {
    d: f64,
    d_real: f64,
    d_fake: f64,
    g: f64,
    g_adv: f64,
    g_fm: f64,
    g_l1: f64,
}

/// One joint update: both objectives are computed against the current
/// discriminator, then the generator and discriminator each take a step.
fn train_step(gan: &mut Gan, x: &Tensor, real: &Tensor, loss: &LossConfig) -> Result<StepLosses> {
    let fake = gan.g.forward(x)?;
    let real_in = Tensor::cat(&[x, real], 1)?;
    let real_pack = gan.d.forward(&real_in, true)?;
    let fake_pack = gan.d.forward(&Tensor::cat(&[x, &fake], 1)?, false)?;
    let fake_pack_d = gan.d.forward(&Tensor::cat(&[x, &fake.detach()], 1)?, false)?;

    let (ld, d_real, d_fake) = discriminator_loss(&real_pack, &fake_pack_d, loss)?;
    let adv = generator_adversarial(&real_pack, &fake_pack, loss)?;
    let fm = feature_matching(&real_pack, &fake_pack, loss.feature_matching_weight)?;
    let l1 = (&fake - real)?.abs()?.mean_all()?;
    let lg = ((&adv + &fm)? + (&l1 * loss.l1_weight)?)?;

    let gg = lg.backward()?;
    let gd = ld.backward()?;
    gan.opt_g.step(&gg)?;
    gan.opt_d.step(&gd)?;
    Ok(StepLosses {
        d: scalar(&ld)?,
        d_real,
        d_fake,
        g: scalar(&lg)?,
        g_adv: scalar(&adv)?,
        g_fm: scalar(&fm)?,
        g_l1: scalar(&l1)?,
    })
}

fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch_{epoch:04}.safetensors"))
}

/// File name of the last checkpoint of a run.
pub const FINAL_CHECKPOINT: &str = "final.safetensors";

fn save(gan: &Gan, ck: &GanCheckpointConfig, fingerprint: &str, epoch: usize, path: &Path) -> Result<()> {
    let meta = CheckpointMeta::new(GAN_CHECKPOINT_KIND, ck, fingerprint, epoch)?;
    save_checkpoint(path, &gan.tensors()?, &meta)?;
    Ok(())
}

/// Trains a GAN model from a run config, writing the frozen config,
/// checkpoints and `history.json` into `out_dir`.
pub fn train(cfg: &RunConfig, out_dir: &Path, opts: &TrainOptions) -> Result<TrainOutcome> {
    if !cfg.model.is_trainable() {
        return Err(Error::NotTrainable(cfg.model.to_string()));
    }
    cfg.validate()?;
    let manifest = Manifest::read(&cfg.dataset)?;
    let samples = load_split(&manifest, Split::Train)?;
    check_tile_size(&samples, cfg.preset.tile_px())?;
    train_on(cfg, &samples, &dataset_fingerprint(&manifest)?, out_dir, opts)
}

/// Training on already loaded samples.
pub fn train_on(
    cfg: &RunConfig,
    samples: &[Sample],
    fingerprint: &str,
    out_dir: &Path,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if !cfg.model.is_trainable() {
        return Err(Error::NotTrainable(cfg.model.to_string()));
    }
    if samples.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    cfg.freeze(out_dir)?;
    let ck = GanCheckpointConfig::from_run(cfg);
    let mut gan = Gan::new(&ck)?;
    let mut history: Vec<EpochStats> = Vec::new();
    let mut start = 0;
    if let Some(path) = &opts.resume {
        let hash = config_hash(&ck)?;
        let (meta, tensors) = load_checkpoint(path, &Device::Cpu, Some(&hash), opts.force)?;
        if meta.kind != GAN_CHECKPOINT_KIND {
            return Err(floodviz_models::Error::Checkpoint {
                path: path.clone(),
                message: format!("holds a `{}` model, not a GAN", meta.kind),
            }
            .into());
        }
        gan.load(&tensors)?;
        start = meta.epoch;
        history = read_history(&out_dir.join("history.json"))
            .unwrap_or_default()
            .into_iter()
            .filter(|h| h.epoch < start)
            .collect();
        tracing::info!(epoch = start, path = %path.display(), "resumed");
    }

    let bs = cfg.train.batch_size;
    for epoch in start..cfg.epochs {
        let lr = cfg.train.lr_at(epoch, cfg.epochs);
        gan.opt_g.set_lr(lr);
        gan.opt_d.set_lr(lr);
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        let mut acc = [0f64; 7];
        let mut steps = 0;
        for (step, idx) in order.chunks(bs).enumerate() {
            let (x, real) = batch_tensors(samples, idx, &ck, epoch)?;
            let l = train_step(&mut gan, &x, &real, &cfg.train.loss)?;
            if !l.d.is_finite() {
                return Err(Error::NonFinite { what: "discriminator", epoch, step });
            }
            if !l.g.is_finite() {
                return Err(Error::NonFinite { what: "generator", epoch, step });
            }
            for (a, v) in acc.iter_mut().zip([l.d, l.d_real, l.d_fake, l.g, l.g_adv, l.g_fm, l.g_l1]) {
                *a += v;
            }
            steps += 1;
        }
        let n = steps as f64;
        let stats = EpochStats {
            epoch,
            lr,
            d_loss: acc[0] / n,
            d_real: acc[1] / n,
            d_fake: acc[2] / n,
            g_loss: acc[3] / n,
            g_adv: acc[4] / n,
            g_feature_matching: acc[5] / n,
            g_l1: acc[6] / n,
            steps,
        };
        tracing::info!(
            epoch,
            lr,
            d = stats.d_loss,
            g = stats.g_loss,
            l1 = stats.g_l1,
            "epoch done"
        );
        history.push(stats);
        let done = epoch + 1;
        if done % cfg.train.checkpoint_every == 0 {
            save(&gan, &ck, fingerprint, done, &checkpoint_path(out_dir, done))?;
        }
        write_history(&out_dir.join("history.json"), &history)?;
    }
    let last = out_dir.join(FINAL_CHECKPOINT);
    save(&gan, &ck, fingerprint, cfg.epochs.max(start), &last)?;
    write_history(&out_dir.join("history.json"), &history)?;
    Ok(TrainOutcome {
        checkpoint: last,
        history,
    })
}

fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    let json = serde_json::to_string_pretty(history)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochStats>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the generator of a GAN checkpoint for inference, with the model
/// kind it was trained as.
fn gan_config(path: &Path) -> Result<GanCheckpointConfig> {
    let meta = read_checkpoint_meta(path)?;
    if meta.kind != GAN_CHECKPOINT_KIND {
        return Err(floodviz_models::Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!("holds a `{}` model, not a GAN", meta.kind),
        }
        .into());
    }
    Ok(serde_json::from_str(&meta.config_json)?)
}

/// The model kind stored in a GAN checkpoint, read from its header only.
pub fn checkpoint_model_kind(path: &Path) -> Result<ModelKind> {
    Ok(gan_config(path)?.model)
}

pub fn load_generator(path: &Path) -> Result<(Generator, ModelKind)> {
    let ck = gan_config(path)?;
    let (_, tensors) = load_checkpoint(path, &Device::Cpu, None, false)?;
    let g = Generator::new(ck.generator, DType::F32, &Device::Cpu, 0)?;
    g.params().load(&tensors, "g.")?;
    Ok((g, ck.model))
}

/// Mean absolute difference between generated and ground-truth post images
/// in `[0, 1]` units.
pub fn l1_to_target(g: &Generator, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let mask = g.config().conditioned().then_some(&s.mask);
        let out = g.generate(&s.pre, mask)?;
        let d: f64 = out
            .pixels()
            .iter()
            .zip(s.post.pixels())
            .map(|(a, b)| f64::from((a - b).abs()))
            .sum();
        total += d / out.pixels().len() as f64;
    }
    Ok(total / samples.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    #[test]
    fn baselines_refuse_training() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [ModelKind::Handcrafted, ModelKind::GreenMaskDark, ModelKind::GreenMaskLight] {
            let cfg = RunConfig::new("missing.jsonl", kind, Preset::Desk64, 1, 0);
            let err = train(&cfg, dir.path(), &TrainOptions::default()).unwrap_err();
            assert!(err.to_string().contains("baselines are not trainable"), "{err}");
        }
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(10, 1, 3);
        assert_eq!(a, epoch_order(10, 1, 3));
        assert_ne!(a, epoch_order(10, 1, 4));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }
}
