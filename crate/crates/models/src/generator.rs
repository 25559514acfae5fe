//! Coarse-to-fine residual generator: a global encoder/residual/decoder
//! network with an optional local enhancer branch at full resolution.

use candle_core::{DType, Device, Tensor};
use floodviz_core::{BinaryMask, ImageTile};
use serde::{Deserialize, Serialize};

use crate::convert::{input_tensor, tensor_to_tile};
use crate::error::{Error, Result};
use crate::layers::{instance_norm, reflect_pad, Conv2d, ConvTranspose2d, GAN_INIT};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// 4 with the mask channel, 3 without.
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub n_downsample: usize,
    pub n_residual_blocks: usize,
    pub use_local_enhancer: bool,
    #[serde(default = "default_local_blocks")]
    pub n_local_residual_blocks: usize,
    #[serde(default)]
    pub output_activation: OutputActivation,
}

fn default_local_blocks() -> usize {
    3
}

impl GeneratorConfig {
    /// Full-size global generator (64 filters, 4 downsamplings, 9 blocks).
    pub fn paper(conditioned: bool) -> Self {
        Self {
            in_channels: if conditioned { 4 } else { 3 },
            out_channels: 3,
            base_width: 64,
            n_downsample: 4,
            n_residual_blocks: 9,
            use_local_enhancer: false,
            n_local_residual_blocks: 3,
            output_activation: OutputActivation::Tanh,
        }
    }

    /// Reduced widths for 64-256px tiles on a CPU.
    pub fn desk(conditioned: bool) -> Self {
        Self {
            base_width: 16,
            n_downsample: 2,
            n_residual_blocks: 3,
            ..Self::paper(conditioned)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 3 | 4) {
            return Err(Error::Config(format!(
                "in_channels must be 3 or 4, got {}",
                self.in_channels
            )));
        }
        if self.out_channels != 3 || self.base_width == 0 {
            return Err(Error::Config(
                "generator needs 3 output channels and a positive width".into(),
            ));
        }
        Ok(())
    }

    /// Spatial dims must be divisible by this factor.
    pub fn size_multiple(&self) -> usize {
        1 << (self.n_downsample + usize::from(self.use_local_enhancer))
    }

    pub fn conditioned(&self) -> bool {
        self.in_channels == 4
    }
}

struct ResBlock {
    c1: Conv2d,
    c2: Conv2d,
}

impl ResBlock {
    fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            c1: Conv2d::new(
                ps,
                &format!("{name}.c1"),
                dim,
                dim,
                3,
                1,
                0,
                false,
                GAN_INIT,
            )?,
            c2: Conv2d::new(
                ps,
                &format!("{name}.c2"),
                dim,
                dim,
                3,
                1,
                0,
                false,
                GAN_INIT,
            )?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = instance_norm(&self.c1.forward(&reflect_pad(x, 1)?, true)?)?.relu()?;
        let h = instance_norm(&self.c2.forward(&reflect_pad(&h, 1)?, true)?)?;
        Ok((x + h)?)
    }
}

fn conv_in_relu(conv: &Conv2d, x: &Tensor) -> Result<Tensor> {
    Ok(instance_norm(&conv.forward(x, true)?)?.relu()?)
}

struct GlobalNet {
    stem: Conv2d,
    down: Vec<Conv2d>,
    blocks: Vec<ResBlock>,
    up: Vec<ConvTranspose2d>,
    head: Option<Conv2d>,
}

impl GlobalNet {
    fn new(
        ps: &mut ParamStore,
        cfg: &GeneratorConfig,
        width: usize,
        with_head: bool,
    ) -> Result<Self> {
        let stem = Conv2d::new(
            ps,
            "global.stem",
            cfg.in_channels,
            width,
            7,
            1,
            0,
            false,
            GAN_INIT,
        )?;
        let mut down = Vec::new();
        for i in 0..cfg.n_downsample {
            let (a, b) = (width << i, width << (i + 1));
            down.push(Conv2d::new(
                ps,
                &format!("global.down{i}"),
                a,
                b,
                3,
                2,
                1,
                false,
                GAN_INIT,
            )?);
        }
        let deep = width << cfg.n_downsample;
        let blocks = (0..cfg.n_residual_blocks)
            .map(|i| ResBlock::new(ps, &format!("global.res{i}"), deep))
            .collect::<Result<_>>()?;
        let mut up = Vec::new();
        for i in 0..cfg.n_downsample {
            let a = width << (cfg.n_downsample - i);
            up.push(ConvTranspose2d::new(
                ps,
                &format!("global.up{i}"),
                a,
                a / 2,
                3,
                2,
                1,
                1,
                false,
                GAN_INIT,
            )?);
        }
        let head = if with_head {
            Some(Conv2d::new(
                ps,
                "global.head",
                width,
                cfg.out_channels,
                7,
                1,
                0,
                true,
                GAN_INIT,
            )?)
        } else {
            None
        };
        Ok(Self {
            stem,
            down,
            blocks,
            up,
            head,
        })
    }

    fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = conv_in_relu(&self.stem, &reflect_pad(x, 3)?)?;
        for d in &self.down {
            h = conv_in_relu(d, &h)?;
        }
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        for u in &self.up {
            h = instance_norm(&u.forward(&h)?)?.relu()?;
        }
        Ok(h)
    }
}

struct LocalBranch {
    stem: Conv2d,
    down: Conv2d,
    blocks: Vec<ResBlock>,
    up: ConvTranspose2d,
    head: Conv2d,
}

impl LocalBranch {
    fn new(ps: &mut ParamStore, cfg: &GeneratorConfig) -> Result<Self> {
        let w = cfg.base_width;
        Ok(Self {
            stem: Conv2d::new(
                ps,
                "local.stem",
                cfg.in_channels,
                w,
                7,
                1,
                0,
                false,
                GAN_INIT,
            )?,
            down: Conv2d::new(ps, "local.down", w, 2 * w, 3, 2, 1, false, GAN_INIT)?,
            blocks: (0..cfg.n_local_residual_blocks)
                .map(|i| ResBlock::new(ps, &format!("local.res{i}"), 2 * w))
                .collect::<Result<_>>()?,
            up: ConvTranspose2d::new(ps, "local.up", 2 * w, w, 3, 2, 1, 1, false, GAN_INIT)?,
            head: Conv2d::new(
                ps,
                "local.head",
                w,
                cfg.out_channels,
                7,
                1,
                0,
                true,
                GAN_INIT,
            )?,
        })
    }
}

pub struct Generator {
    cfg: GeneratorConfig,
    params: ParamStore,
    global: GlobalNet,
    local: Option<LocalBranch>,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, dtype: DType, device: &Device, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(dtype, device, seed);
        let (global, local) = if cfg.use_local_enhancer {
            let global = GlobalNet::new(&mut ps, &cfg, 2 * cfg.base_width, false)?;
            (global, Some(LocalBranch::new(&mut ps, &cfg)?))
        } else {
            (GlobalNet::new(&mut ps, &cfg, cfg.base_width, true)?, None)
        };
        Ok(Self {
            cfg,
            params: ps,
            global,
            local,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "generator expects {} input channels, got {c}",
                self.cfg.in_channels
            )));
        }
        let m = self.cfg.size_multiple();
        if h % m != 0 || w % m != 0 || h <= 2 * m || w <= 2 * m {
            return Err(Error::Shape(format!(
                "input {h}x{w} must be a multiple of {m} and larger than {}",
                2 * m
            )));
        }
        Ok(())
    }

    /// Maps a `[-1, 1]` input batch to a `[-1, 1]` output batch of the same
    /// spatial size.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let y = match &self.local {
            None => {
                let h = self.global.features(x)?;
                let head = self
                    .global
                    .head
                    .as_ref()
                    .expect("global head without local branch");
                head.forward(&reflect_pad(&h, 3)?, true)?
            }
            Some(l) => {
                let coarse = self.global.features(&x.avg_pool2d(2)?)?;
                let h = conv_in_relu(&l.stem, &reflect_pad(x, 3)?)?;
                let mut h = (conv_in_relu(&l.down, &h)? + coarse)?;
                for b in &l.blocks {
                    h = b.forward(&h)?;
                }
                let h = instance_norm(&l.up.forward(&h)?)?.relu()?;
                l.head.forward(&reflect_pad(&h, 3)?, true)?
            }
        };
        Ok(y.tanh()?)
    }

    /// Inference on one tile. The mask must be present exactly when the
    /// generator is conditioned.
    pub fn generate(&self, pre: &ImageTile, mask: Option<&BinaryMask>) -> Result<ImageTile> {
        match (self.cfg.conditioned(), mask.is_some()) {
            (true, false) => {
                return Err(Error::Config("conditioned generator needs a mask".into()))
            }
            (false, true) => {
                return Err(Error::Config(
                    "unconditioned generator takes no mask".into(),
                ))
            }
            _ => {}
        }
        let x = input_tensor(pre, mask, self.params.dtype(), self.params.device())?;
        let y = self.forward(&x)?;
        tensor_to_tile(&y, pre)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use floodviz_core::Event;

    fn tile(n: usize) -> ImageTile {
        let data: Vec<u8> = (0..n * n * 3).map(|i| (i % 251) as u8).collect();
        ImageTile::from_rgb8("g", n, n, &data, 0.5, Event::Synthetic).unwrap()
    }

    #[test]
    fn shape_contract_and_range() {
        let g = Generator::new(GeneratorConfig::desk(true), DType::F32, &Device::Cpu, 0).unwrap();
        let out = g
            .generate(&tile(64), Some(&BinaryMask::ones(64, 64)))
            .unwrap();
        assert_eq!(out.dims(), (64, 64));
        assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(g.generate(&tile(64), None).is_err());
    }

    #[test]
    fn inference_is_deterministic() {
        let g = Generator::new(GeneratorConfig::desk(false), DType::F32, &Device::Cpu, 5).unwrap();
        let a = g.generate(&tile(64), None).unwrap();
        let b = g.generate(&tile(64), None).unwrap();
        assert_eq!(a, b);
        assert!(g
            .generate(&tile(64), Some(&BinaryMask::ones(64, 64)))
            .is_err());
    }

    #[test]
    fn local_enhancer_preserves_shape() {
        let cfg = GeneratorConfig {
            use_local_enhancer: true,
            n_residual_blocks: 1,
            n_local_residual_blocks: 1,
            base_width: 4,
            ..GeneratorConfig::desk(true)
        };
        let g = Generator::new(cfg, DType::F32, &Device::Cpu, 0).unwrap();
        let x = Tensor::zeros((2, 4, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(g.forward(&x).unwrap().dims(), &[2, 3, 64, 64]);
        let bad = Tensor::zeros((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(g.forward(&bad).is_err());
    }

    #[test]
    fn rejects_bad_channel_counts() {
        let cfg = GeneratorConfig {
            in_channels: 5,
            ..GeneratorConfig::desk(true)
        };
        assert!(Generator::new(cfg, DType::F32, &Device::Cpu, 0).is_err());
    }
}
