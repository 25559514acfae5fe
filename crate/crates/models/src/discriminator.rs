//! Multi-scale patch discriminator. Scale `k` sees the input average-pooled
//! `k` times by a factor of two; every scale exposes its intermediate
//! features for the feature-matching loss.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{instance_norm, leaky_relu, Conv2d, GAN_INIT};
use crate::params::ParamStore;

const KERNEL: usize = 4;
const PAD: usize = 2;
const MAX_WIDTH: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Conditioning channels plus the 3 candidate image channels.
    pub in_channels: usize,
    pub n_scales: usize,
    /// Feature blocks per scale; the logit layer comes on top.
    pub n_layers: usize,
    pub base_width: usize,
    pub use_spectral_norm: bool,
}

impl DiscriminatorConfig {
    pub fn paper(conditioned: bool) -> Self {
        Self {
            in_channels: if conditioned { 7 } else { 6 },
            n_scales: 2,
            n_layers: 3,
            base_width: 64,
            use_spectral_norm: false,
        }
    }

    pub fn desk(conditioned: bool) -> Self {
        Self {
            base_width: 16,
            ..Self::paper(conditioned)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_scales == 0 || self.n_layers < 2 || self.base_width == 0 || self.in_channels == 0
        {
            return Err(Error::Config(
                "discriminator needs n_scales >= 1, n_layers >= 2 and a positive width".into(),
            ));
        }
        Ok(())
    }
}

/// Turns on spectral normalization of every discriminator layer.
/// Idempotent.
pub fn apply_spectral_norm(cfg: &DiscriminatorConfig) -> DiscriminatorConfig {
    DiscriminatorConfig {
        use_spectral_norm: true,
        ..cfg.clone()
    }
}

/// Per-scale patch logits and intermediate features.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    pub logits: Vec<Tensor>,
    pub features: Vec<Vec<Tensor>>,
}

impl DiscriminatorOutput {
    pub fn detach(&self) -> Self {
        Self {
            logits: self.logits.iter().map(Tensor::detach).collect(),
            features: self
                .features
                .iter()
                .map(|f| f.iter().map(Tensor::detach).collect())
                .collect(),
        }
    }
}

struct PatchNet {
    blocks: Vec<Conv2d>,
    logit: Conv2d,
}

impl PatchNet {
    fn new(ps: &mut ParamStore, cfg: &DiscriminatorConfig, scale: usize) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut c_in = cfg.in_channels;
        let mut width = cfg.base_width;
        for i in 0..cfg.n_layers {
            let stride = if i + 1 < cfg.n_layers { 2 } else { 1 };
            // The first block has no normalization, so it keeps its bias.
            let conv = Conv2d::new(
                ps,
                &format!("s{scale}.b{i}"),
                c_in,
                width,
                KERNEL,
                stride,
                PAD,
                i == 0,
                GAN_INIT,
            )?;
            blocks.push(conv);
            c_in = width;
            width = (width * 2).min(MAX_WIDTH);
        }
        let logit = Conv2d::new(
            ps,
            &format!("s{scale}.logit"),
            c_in,
            1,
            KERNEL,
            1,
            PAD,
            true,
            GAN_INIT,
        )?;
        let mut net = Self { blocks, logit };
        if cfg.use_spectral_norm {
            net.blocks = net
                .blocks
                .into_iter()
                .map(|c| c.with_spectral_norm(ps))
                .collect::<Result<_>>()?;
            net.logit = net.logit.with_spectral_norm(ps)?;
        }
        Ok(net)
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, Vec<Tensor>)> {
        let mut feats = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(&h, train)?;
            if i > 0 {
                h = instance_norm(&h)?;
            }
            h = leaky_relu(&h, 0.2)?;
            feats.push(h.clone());
        }
        Ok((self.logit.forward(&h, train)?, feats))
    }
}

pub struct Discriminator {
    cfg: DiscriminatorConfig,
    params: ParamStore,
    scales: Vec<PatchNet>,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, dtype: DType, device: &Device, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(dtype, device, seed);
        let scales = (0..cfg.n_scales)
            .map(|k| PatchNet::new(&mut ps, &cfg, k))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            params: ps,
            scales,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Every convolution, scale by scale, block by block, logit last.
    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.scales
            .iter()
            .flat_map(|s| s.blocks.iter().chain(std::iter::once(&s.logit)))
    }

    /// `x` is the channel concatenation of conditioning and candidate image.
    /// `train` advances the spectral-norm power iteration.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<DiscriminatorOutput> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {c}",
                self.cfg.in_channels
            )));
        }
        let mut logits = Vec::new();
        let mut features = Vec::new();
        let mut input = x.clone();
        for (k, net) in self.scales.iter().enumerate() {
            if k > 0 {
                input = input.avg_pool2d(2)?;
            }
            let (l, f) = net.forward(&input, train)?;
            logits.push(l);
            features.push(f);
        }
        Ok(DiscriminatorOutput { logits, features })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(n: usize, c: usize) -> Tensor {
        let mut ps = ParamStore::new(DType::F32, &Device::Cpu, 9);
        ps.random_normal(&[1, c, n, n]).unwrap()
    }

    #[test]
    fn two_scales_and_feature_counts() {
        let d = Discriminator::new(DiscriminatorConfig::desk(true), DType::F32, &Device::Cpu, 0)
            .unwrap();
        let out = d.forward(&input(256, 7), false).unwrap();
        assert_eq!(out.logits.len(), 2);
        assert!(out.features.iter().all(|f| f.len() == 3));
        // Scale 1 runs on the 128px downsample: same layer stack, half the size.
        let d0 = out.logits[0].dims()[2];
        let d1 = out.logits[1].dims()[2];
        assert!(d0 < 256 && d1 < d0);
        assert_eq!(out.features[1][0].dims()[2], 128 / 2 + 1);
        let again = d.forward(&input(256, 7), false).unwrap();
        let a: Vec<f32> = out.logits[1].flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = again.logits[1].flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn channel_mismatch_errors() {
        let d = Discriminator::new(
            DiscriminatorConfig::desk(false),
            DType::F32,
            &Device::Cpu,
            0,
        )
        .unwrap();
        assert!(d.forward(&input(64, 7), false).is_err());
    }

    #[test]
    fn spectral_norm_toggle_is_idempotent() {
        let cfg = DiscriminatorConfig::desk(true);
        let once = apply_spectral_norm(&cfg);
        assert!(once.use_spectral_norm);
        assert_eq!(apply_spectral_norm(&once), once);
        let plain = Discriminator::new(cfg.clone(), DType::F32, &Device::Cpu, 0).unwrap();
        assert!(plain.convs().all(|c| c.spectral_norm().is_none()));
        for c in plain.convs() {
            let a: Vec<f32> = c.raw_weight().flatten_all().unwrap().to_vec1().unwrap();
            let b: Vec<f32> = c
                .effective_weight(true)
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1()
                .unwrap();
            assert_eq!(a, b);
        }
    }
}
