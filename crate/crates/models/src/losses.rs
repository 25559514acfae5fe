//! Adversarial and feature-matching objectives.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorOutput;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialLoss {
    #[default]
    LeastSquares,
    /// Relativistic-average least squares.
    Relativistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub adversarial: AdversarialLoss,
    pub feature_matching_weight: f64,
    /// VGG-style perceptual training loss. Only 0 is supported.
    pub perceptual_weight: f64,
    /// Pixel L1 to the ground-truth post image.
    #[serde(default)]
    pub l1_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            adversarial: AdversarialLoss::LeastSquares,
            feature_matching_weight: 10.0,
            perceptual_weight: 0.0,
            l1_weight: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("feature_matching_weight", self.feature_matching_weight),
            ("perceptual_weight", self.perceptual_weight),
            ("l1_weight", self.l1_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be a finite value >= 0, got {w}"
                )));
            }
        }
        if self.perceptual_weight > 0.0 {
            return Err(Error::Config(
                "perceptual training loss is not implemented; set perceptual_weight = 0".into(),
            ));
        }
        Ok(())
    }
}

/// Scalar values of the individual terms, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub d_real: f64,
    pub d_fake: f64,
    pub g_adv: f64,
    pub g_feature_matching: f64,
    pub g_l1: f64,
}

pub struct GanLosses {
    pub generator: Tensor,
    pub discriminator: Tensor,
    pub components: LossComponents,
}

fn mse_to(x: &Tensor, target: f64) -> Result<Tensor> {
    Ok((x - target)?.sqr()?.mean_all()?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn check_packs(real: &DiscriminatorOutput, fake: &DiscriminatorOutput) -> Result<()> {
    if real.logits.len() != fake.logits.len() || real.features.len() != fake.features.len() {
        return Err(Error::Shape(format!(
            "real pack has {} scales, fake pack {}",
            real.logits.len(),
            fake.logits.len()
        )));
    }
    for (k, (r, f)) in real.logits.iter().zip(&fake.logits).enumerate() {
        if r.dims() != f.dims() {
            return Err(Error::Shape(format!(
                "scale {k}: logits {:?} vs {:?}",
                r.dims(),
                f.dims()
            )));
        }
    }
    for (k, (r, f)) in real.features.iter().zip(&fake.features).enumerate() {
        if r.len() != f.len() || r.iter().zip(f).any(|(a, b)| a.dims() != b.dims()) {
            return Err(Error::Shape(format!("scale {k}: feature lists differ")));
        }
    }
    Ok(())
}

/// Relativistic logits: each side shifted by the mean of the other.
fn relativistic(real: &Tensor, fake: &Tensor) -> Result<(Tensor, Tensor)> {
    let r = real.broadcast_sub(&fake.mean_all()?)?;
    let f = fake.broadcast_sub(&real.mean_all()?)?;
    Ok((r, f))
}

fn sum_scales(terms: Vec<Tensor>) -> Result<Tensor> {
    Ok(Tensor::stack(&terms, 0)?.sum_all()?)
}

/// Discriminator objective summed over scales: real logits toward 1, fake
/// toward 0, halved.
pub fn discriminator_loss(
    real: &DiscriminatorOutput,
    fake: &DiscriminatorOutput,
    cfg: &LossConfig,
) -> Result<(Tensor, f64, f64)> {
    check_packs(real, fake)?;
    let mut reals = Vec::new();
    let mut fakes = Vec::new();
    for (r, f) in real.logits.iter().zip(&fake.logits) {
        let (r, f) = match cfg.adversarial {
            AdversarialLoss::LeastSquares => (r.clone(), f.clone()),
            AdversarialLoss::Relativistic => relativistic(r, f)?,
        };
        reals.push(mse_to(&r, 1.0)?);
        fakes.push(mse_to(&f, 0.0)?);
    }
    let (lr, lf) = (sum_scales(reals)?, sum_scales(fakes)?);
    let (vr, vf) = (scalar(&lr)?, scalar(&lf)?);
    Ok((((lr + lf)? * 0.5)?, vr, vf))
}

/// Mean absolute difference of discriminator features, averaged over layers
/// and scales and scaled by `weight`. Real features carry no gradient.
pub fn feature_matching(
    real: &DiscriminatorOutput,
    fake: &DiscriminatorOutput,
    weight: f64,
) -> Result<Tensor> {
    check_packs(real, fake)?;
    let mut terms = Vec::new();
    for (rf, ff) in real.features.iter().zip(&fake.features) {
        for (r, f) in rf.iter().zip(ff) {
            terms.push((f - r.detach())?.abs()?.mean_all()?);
        }
    }
    let n = terms.len() as f64;
    Ok((sum_scales(terms)? * (weight / n))?)
}

/// Generator objective: fake logits toward 1 (relativistic mode also pushes
/// real logits toward 0) plus weighted feature matching.
pub fn generator_adversarial(
    real: &DiscriminatorOutput,
    fake: &DiscriminatorOutput,
    cfg: &LossConfig,
) -> Result<Tensor> {
    check_packs(real, fake)?;
    let mut terms = Vec::new();
    for (r, f) in real.logits.iter().zip(&fake.logits) {
        match cfg.adversarial {
            AdversarialLoss::LeastSquares => terms.push(mse_to(f, 1.0)?),
            AdversarialLoss::Relativistic => {
                let (r, f) = relativistic(&r.detach(), f)?;
                terms.push(((mse_to(&f, 1.0)? + mse_to(&r, 0.0)?)? * 0.5)?);
            }
        }
    }
    sum_scales(terms)
}

/// Both objectives from one pair of packs. For training, the discriminator
/// side should be computed on a pack from the detached fake instead.
pub fn gan_losses(
    real: &DiscriminatorOutput,
    fake: &DiscriminatorOutput,
    cfg: &LossConfig,
) -> Result<GanLosses> {
    cfg.validate()?;
    let (d, d_real, d_fake) = discriminator_loss(real, fake, cfg)?;
    let adv = generator_adversarial(real, fake, cfg)?;
    let fm = feature_matching(real, fake, cfg.feature_matching_weight)?;
    let components = LossComponents {
        d_real,
        d_fake,
        g_adv: scalar(&adv)?,
        g_feature_matching: scalar(&fm)?,
        g_l1: 0.0,
    };
    Ok(GanLosses {
        generator: (adv + fm)?,
        discriminator: d,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Tensor};

    fn pack(logits: &[f64], feat: &[f64]) -> DiscriminatorOutput {
        let dev = Device::Cpu;
        DiscriminatorOutput {
            logits: vec![Tensor::new(logits, &dev)
                .unwrap()
                .reshape((1, 1, 1, logits.len()))
                .unwrap()],
            features: vec![vec![Tensor::new(feat, &dev).unwrap()]],
        }
    }

    fn val(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn identical_features_give_zero_matching() {
        let p = pack(&[0.3, 0.1], &[1.0, 2.0, 3.0]);
        assert_eq!(val(&feature_matching(&p, &p, 10.0).unwrap()), 0.0);
        let q = pack(&[0.3, 0.1], &[1.5, 2.0, 2.0]);
        // mean |diff| = 0.5, times weight 10.
        assert!((val(&feature_matching(&p, &q, 10.0).unwrap()) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_optimum_is_zero() {
        let real = pack(&[1.0, 1.0], &[0.0]);
        let fake = pack(&[0.0, 0.0], &[0.0]);
        let l = gan_losses(&real, &fake, &LossConfig::default()).unwrap();
        assert_eq!(val(&l.discriminator), 0.0);
        // Generator wants fake at 1: mean((0-1)^2) = 1.
        assert_eq!(val(&l.generator), 1.0);
    }

    #[test]
    fn relativistic_closed_form() {
        // Identical two-element logit vectors [0, 1]: both shifted by 0.5.
        let real = pack(&[0.0, 1.0], &[0.0]);
        let fake = pack(&[0.0, 1.0], &[0.0]);
        let cfg = LossConfig {
            adversarial: AdversarialLoss::Relativistic,
            ..LossConfig::default()
        };
        let l = gan_losses(&real, &fake, &cfg).unwrap();
        // real~ = fake~ = [-0.5, 0.5]
        // D: 0.5 * (mean([(-1.5)^2, (-0.5)^2]) + mean([0.25, 0.25])) = 0.5 * (1.25 + 0.25)
        assert!((val(&l.discriminator) - 0.75).abs() < 1e-12);
        // G: 0.5 * (mean([2.25, 0.25]) + mean([0.25, 0.25])) = 0.75
        assert!((val(&l.generator) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mismatched_packs_error() {
        let a = pack(&[0.0, 1.0], &[0.0]);
        let b = pack(&[0.0, 1.0, 2.0], &[0.0]);
        assert!(gan_losses(&a, &b, &LossConfig::default()).is_err());
        let c = pack(&[0.0, 1.0], &[0.0, 1.0]);
        assert!(feature_matching(&a, &c, 1.0).is_err());
    }

    #[test]
    fn weights_validated() {
        let neg = LossConfig {
            feature_matching_weight: -1.0,
            ..LossConfig::default()
        };
        assert!(neg.validate().is_err());
        let perc = LossConfig {
            perceptual_weight: 1.0,
            ..LossConfig::default()
        };
        assert!(perc.validate().is_err());
    }
}
