//! Finite-difference check of generator gradients through the full
//! adversarial + feature-matching objective, in f64.

use candle_core::{DType, Device, Tensor, Var};
use floodviz_models::discriminator::{Discriminator, DiscriminatorConfig};
use floodviz_models::generator::{Generator, GeneratorConfig};
use floodviz_models::losses::{feature_matching, generator_adversarial, LossConfig};
use floodviz_models::params::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

struct Setup {
    g: Generator,
    d: Discriminator,
    x: Tensor,
    real: Tensor,
}

impl Setup {
    fn loss(&self) -> Tensor {
        let cfg = LossConfig::default();
        let fake = self.g.forward(&self.x).unwrap();
        let real_pack = self
            .d
            .forward(&Tensor::cat(&[&self.x, &self.real], 1).unwrap(), false)
            .unwrap()
            .detach();
        let fake_pack = self
            .d
            .forward(&Tensor::cat(&[&self.x, &fake], 1).unwrap(), false)
            .unwrap();
        let adv = generator_adversarial(&real_pack, &fake_pack, &cfg).unwrap();
        let fm = feature_matching(&real_pack, &fake_pack, cfg.feature_matching_weight).unwrap();
        (adv + fm).unwrap()
    }

    fn loss_value(&self) -> f64 {
        self.loss().to_scalar::<f64>().unwrap()
    }
}

fn setup() -> Setup {
    let dev = Device::Cpu;
    let g = Generator::new(GeneratorConfig::desk(true), DType::F64, &dev, 1).unwrap();
    let d = Discriminator::new(DiscriminatorConfig::desk(true), DType::F64, &dev, 2).unwrap();
    let mut ps = ParamStore::new(DType::F64, &dev, 3);
    let x = ps.random_normal(&[1, 4, 64, 64]).unwrap().tanh().unwrap();
    let real = ps.random_normal(&[1, 3, 64, 64]).unwrap().tanh().unwrap();
    Setup { g, d, x, real }
}

fn entry(var: &Var, flat: usize) -> f64 {
    var.flatten_all().unwrap().to_vec1::<f64>().unwrap()[flat]
}

fn set_entry(var: &Var, flat: usize, value: f64) {
    let shape = var.dims().to_vec();
    let mut v: Vec<f64> = var.flatten_all().unwrap().to_vec1().unwrap();
    v[flat] = value;
    var.set(&Tensor::from_vec(v, shape, var.device()).unwrap())
        .unwrap();
}

#[test]
fn generator_gradients_match_central_differences() {
    let s = setup();
    let grads = s.loss().backward().unwrap();
    let params: Vec<(String, Var)> =
        s.g.params()
            .iter()
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Ten random entries whose analytic gradient is large enough for a
    // relative comparison to be meaningful.
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 10 {
        attempts += 1;
        assert!(
            attempts < 500,
            "could not find 10 entries with usable gradients"
        );
        let (name, var) = &params[rng.random_range(0..params.len())];
        let g: Vec<f64> = grads
            .get(var.as_tensor())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let i = rng.random_range(0..g.len());
        if g[i].abs() < 1e-6 {
            continue;
        }
        let w0 = entry(var, i);
        set_entry(var, i, w0 + H);
        let up = s.loss_value();
        set_entry(var, i, w0 - H);
        let down = s.loss_value();
        set_entry(var, i, w0);
        let numeric = (up - down) / (2.0 * H);
        let rel = (g[i] - numeric).abs() / g[i].abs().max(numeric.abs());
        println!(
            "{name}[{i}]: analytic {:.6e} numeric {numeric:.6e} rel {rel:.1e}",
            g[i]
        );
        assert!(
            rel < 1e-3,
            "{name}[{i}]: analytic {} numeric {numeric} rel {rel}",
            g[i]
        );
        checked += 1;
    }
}
