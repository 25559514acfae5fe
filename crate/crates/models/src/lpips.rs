//! Learned perceptual distance on an AlexNet-style feature stack with
//! per-layer linear calibration.
//!
//! Pretrained weights are loaded from one safetensors file holding the
//! torchvision AlexNet keys `features.{0,3,6,8,10}.{weight,bias}` and the
//! calibration keys `lin{0..4}.model.1.weight`.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use floodviz_core::metrics::PerceptualMetric;
use floodviz_core::ImageTile;

use crate::convert::image_tensor;
use crate::error::{Error, Result};
use crate::params::{Init, ParamStore};

const SHIFT: [f32; 3] = [-0.030, -0.088, -0.188];
const SCALE: [f32; 3] = [0.458, 0.448, 0.450];
/// `(key index, c_in, c_out, kernel, stride, padding, max-pool before)`.
const ALEXNET: [(usize, usize, usize, usize, usize, usize, bool); 5] = [
    (0, 3, 64, 11, 4, 2, false),
    (3, 64, 192, 5, 1, 2, true),
    (6, 192, 384, 3, 1, 1, true),
    (8, 384, 256, 3, 1, 1, false),
    (10, 256, 256, 3, 1, 1, false),
];

pub const MISSING_WEIGHTS_HINT: &str =
    "Export torchvision's ImageNet AlexNet `features.*` tensors and the \
     LPIPS v0.1 `lin*` calibration tensors into one safetensors file and pass its path, \
     or select the uncalibrated stand-in with `random:<seed>`.";

struct Layer {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
    pool_before: bool,
    lin: Tensor,
}

pub struct Lpips {
    layers: Vec<Layer>,
    device: Device,
    calibrated: bool,
}

impl Lpips {
    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingWeights {
                path: path.to_path_buf(),
                hint: MISSING_WEIGHTS_HINT,
            });
        }
        let tensors = candle_core::safetensors::load(path, device)?;
        Self::from_tensors(&tensors, device)
    }

    pub fn from_tensors(tensors: &HashMap<String, Tensor>, device: &Device) -> Result<Self> {
        let get = |k: String, shape: &[usize]| -> Result<Tensor> {
            let t = tensors
                .get(&k)
                .ok_or_else(|| Error::Shape(format!("perceptual weights: `{k}` missing")))?;
            if t.dims() != shape {
                return Err(Error::Shape(format!(
                    "perceptual weights: `{k}` is {:?}, expected {shape:?}",
                    t.dims()
                )));
            }
            Ok(t.to_dtype(DType::F32)?)
        };
        let mut layers = Vec::new();
        for (i, &(key, c_in, c_out, k, stride, padding, pool_before)) in ALEXNET.iter().enumerate()
        {
            let lin = get(format!("lin{i}.model.1.weight"), &[1, c_out, 1, 1])?;
            if lin.flatten_all()?.min(0)?.to_scalar::<f32>()? < 0.0 {
                return Err(Error::Shape(format!(
                    "lin{i} has negative calibration weights"
                )));
            }
            layers.push(Layer {
                weight: get(format!("features.{key}.weight"), &[c_out, c_in, k, k])?,
                bias: get(format!("features.{key}.bias"), &[c_out])?,
                stride,
                padding,
                pool_before,
                lin,
            });
        }
        Ok(Self {
            layers,
            device: device.clone(),
            calibrated: true,
        })
    }

    /// Seeded random backbone with uniform calibration `1 / (4 L)` per
    /// channel, which bounds the distance by 1. Not a calibrated metric;
    /// meant for tests and offline desk runs.
    pub fn random_init(seed: u64, device: &Device) -> Result<Self> {
        let mut ps = ParamStore::new(DType::F32, device, seed);
        let n = ALEXNET.len() as f64;
        let mut tensors = HashMap::new();
        for (i, &(key, c_in, c_out, k, _, _, _)) in ALEXNET.iter().enumerate() {
            let w = ps.var(
                &format!("features.{key}.weight"),
                &[c_out, c_in, k, k],
                Init::Kaiming,
            )?;
            tensors.insert(format!("features.{key}.weight"), w.as_tensor().clone());
            tensors.insert(
                format!("features.{key}.bias"),
                Tensor::zeros(c_out, DType::F32, device)?,
            );
            let lin = (Tensor::ones((1, c_out, 1, 1), DType::F32, device)? / (4.0 * n))?;
            tensors.insert(format!("lin{i}.model.1.weight"), lin);
        }
        let mut out = Self::from_tensors(&tensors, device)?;
        out.calibrated = false;
        Ok(out)
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let shift = Tensor::new(&SHIFT, &self.device)?.reshape((1, 3, 1, 1))?;
        let scale = Tensor::new(&SCALE, &self.device)?.reshape((1, 3, 1, 1))?;
        let mut h = x.broadcast_sub(&shift)?.broadcast_div(&scale)?;
        let mut taps = Vec::new();
        for l in &self.layers {
            if l.pool_before {
                h = h.max_pool2d_with_stride(3, 2)?;
            }
            h = h
                .conv2d(&l.weight, l.padding, l.stride, 1, 1)?
                .broadcast_add(&l.bias.reshape((1, (), 1, 1))?)?
                .relu()?;
            taps.push(h.clone());
        }
        Ok(taps)
    }

    /// Raw (unclamped) distance between two `[-1, 1]` batches, one value per
    /// batch element.
    pub fn forward(&self, a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
        if a.dims() != b.dims() {
            return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
        }
        let (_, _, h, w) = a.dims4()?;
        if h < 32 || w < 32 {
            return Err(Error::Shape(format!(
                "perceptual distance needs at least 32x32 inputs, got {h}x{w}"
            )));
        }
        let (fa, fb) = (self.features(a)?, self.features(b)?);
        let mut total: Option<Tensor> = None;
        for ((x, y), l) in fa.iter().zip(&fb).zip(&self.layers) {
            let d = (unit_normalize(x)? - unit_normalize(y)?)?.sqr()?;
            let d = d.broadcast_mul(&l.lin)?.sum_keepdim(1)?;
            let d = d
                .mean_keepdim(D::Minus1)?
                .mean_keepdim(D::Minus2)?
                .flatten_all()?;
            total = Some(match total {
                Some(t) => (t + d)?,
                None => d,
            });
        }
        let total = total.expect("at least one layer");
        Ok(total.to_dtype(DType::F64)?.to_vec1()?)
    }
}

fn unit_normalize(x: &Tensor) -> Result<Tensor> {
    let n = x.sqr()?.sum_keepdim(1)?.sqrt()?;
    Ok(x.broadcast_div(&(n + 1e-10)?)?)
}

impl PerceptualMetric for Lpips {
    fn distance(&self, a: &ImageTile, b: &ImageTile) -> floodviz_core::Result<f64> {
        if a.dims() != b.dims() {
            return Err(floodviz_core::Error::DimMismatch {
                left: a.dims(),
                right: b.dims(),
            });
        }
        let ta = image_tensor(a, DType::F32, &self.device)?;
        let tb = image_tensor(b, DType::F32, &self.device)?;
        Ok(self.forward(&ta, &tb)?[0].clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use floodviz_core::Event;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_tile(seed: u64) -> ImageTile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<u8> = (0..64 * 64 * 3).map(|_| rng.random()).collect();
        ImageTile::from_rgb8("n", 64, 64, &data, 0.5, Event::Synthetic).unwrap()
    }

    #[test]
    fn identity_symmetry_and_range() {
        let m = Lpips::random_init(0, &Device::Cpu).unwrap();
        let (a, b) = (noise_tile(1), noise_tile(2));
        assert_eq!(m.distance(&a, &a).unwrap(), 0.0);
        let ab = m.distance(&a, &b).unwrap();
        assert!((ab - m.distance(&b, &a).unwrap()).abs() < 1e-12);
        assert!(ab > 0.0 && ab <= 1.0);
        assert!(!m.is_calibrated());
    }

    #[test]
    fn missing_weights_explain_how_to_supply_them() {
        let err = Lpips::load(Path::new("/nonexistent/lpips.safetensors"), &Device::Cpu)
            .err()
            .unwrap();
        let msg = err.to_string();
        assert!(
            msg.contains("safetensors") && msg.contains("random:"),
            "{msg}"
        );
    }

    #[test]
    fn rejects_small_or_mismatched_inputs() {
        let m = Lpips::random_init(0, &Device::Cpu).unwrap();
        let small = ImageTile::filled("s", 16, 16, [0.5; 3]).unwrap();
        assert!(m.distance(&small, &small).is_err());
        let other = ImageTile::filled("s", 64, 32, [0.5; 3]).unwrap();
        assert!(m.distance(&noise_tile(0), &other).is_err());
    }
}
