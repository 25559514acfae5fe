//! Convolution layers and functional building blocks.

use std::sync::Mutex;

use candle_core::{Device, Tensor, Var, D};

use crate::error::{Error, Result};
use crate::params::{Init, ParamStore};

/// Weight std used by the GAN networks.
pub const GAN_INIT: Init = Init::Normal(0.02);

const SN_EPS: f64 = 1e-12;
/// Power iterations run when spectral normalization is first attached.
const SN_WARMUP_ITERS: usize = 50;

/// Power-iteration state for a spectrally normalized weight.
#[derive(Debug)]
struct SpectralState {
    u: Tensor,
    v: Tensor,
}

#[derive(Debug)]
pub struct SpectralNorm {
    state: Mutex<SpectralState>,
}

fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let n = x.sqr()?.sum_all()?.sqrt()?;
    Ok(x.broadcast_div(&(n + SN_EPS)?)?)
}

impl SpectralNorm {
    fn new(weight: &Tensor, ps: &mut ParamStore) -> Result<Self> {
        let out = weight.dim(0)?;
        let w = weight.flatten_from(1)?.detach();
        let mut u = l2_normalize(&ps.random_normal(&[out, 1])?)?;
        let mut v = l2_normalize(&w.t()?.matmul(&u)?)?;
        for _ in 0..SN_WARMUP_ITERS {
            v = l2_normalize(&w.t()?.matmul(&u)?)?;
            u = l2_normalize(&w.matmul(&v)?)?;
        }
        Ok(Self {
            state: Mutex::new(SpectralState { u, v }),
        })
    }

    /// Returns `weight / sigma`. In training mode one power iteration
    /// refines the stored singular vectors first; `sigma` carries the
    /// gradient with respect to `weight`.
    fn normalize(&self, weight: &Tensor, train: bool) -> Result<Tensor> {
        let w = weight.flatten_from(1)?;
        let mut st = self.state.lock().expect("spectral state poisoned");
        if train {
            let wd = w.detach();
            let v = l2_normalize(&wd.t()?.matmul(&st.u)?)?;
            let u = l2_normalize(&wd.matmul(&v)?)?;
            st.u = u;
            st.v = v;
        }
        let sigma = st.u.t()?.matmul(&w.matmul(&st.v)?)?.reshape(())?;
        Ok(weight.broadcast_div(&sigma)?)
    }

    pub fn vectors(&self) -> (Tensor, Tensor) {
        let st = self.state.lock().expect("spectral state poisoned");
        (st.u.clone(), st.v.clone())
    }

    pub fn set_vectors(&self, u: Tensor, v: Tensor) {
        let mut st = self.state.lock().expect("spectral state poisoned");
        st.u = u.detach();
        st.v = v.detach();
    }
}

#[derive(Debug)]
pub struct Conv2d {
    pub name: String,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    sn: Option<SpectralNorm>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let weight = ps.var(
            &format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            init,
        )?;
        let bias = if bias {
            Some(ps.var(&format!("{name}.bias"), &[c_out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            name: name.to_string(),
            weight,
            bias,
            stride,
            padding,
            sn: None,
        })
    }

    /// Attaches spectral normalization. Attaching twice is a no-op.
    pub fn with_spectral_norm(mut self, ps: &mut ParamStore) -> Result<Self> {
        if self.sn.is_none() {
            self.sn = Some(SpectralNorm::new(self.weight.as_tensor(), ps)?);
        }
        Ok(self)
    }

    pub fn spectral_norm(&self) -> Option<&SpectralNorm> {
        self.sn.as_ref()
    }

    pub fn raw_weight(&self) -> &Tensor {
        self.weight.as_tensor()
    }

    /// The weight the forward pass uses, after spectral normalization.
    pub fn effective_weight(&self, train: bool) -> Result<Tensor> {
        match &self.sn {
            Some(sn) => sn.normalize(self.weight.as_tensor(), train),
            None => Ok(self.weight.as_tensor().clone()),
        }
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let w = self.effective_weight(train)?;
        let y = x.conv2d(&w, self.padding, self.stride, 1, 1)?;
        add_bias(y, self.bias.as_ref())
    }
}

/// Transposed convolution; weight layout `(c_in, c_out, k, k)`.
#[derive(Debug)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    output_padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let weight = ps.var(
            &format!("{name}.weight"),
            &[c_in, c_out, kernel, kernel],
            init,
        )?;
        let bias = if bias {
            Some(ps.var(&format!("{name}.bias"), &[c_out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(
            &self.weight,
            self.padding,
            self.output_padding,
            self.stride,
            1,
        )?;
        add_bias(y, self.bias.as_ref())
    }
}

fn add_bias(y: Tensor, bias: Option<&Var>) -> Result<Tensor> {
    match bias {
        Some(b) => Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?),
        None => Ok(y),
    }
}

fn reflect_indices(n: usize, pad: usize, device: &Device) -> Result<Tensor> {
    let idx: Vec<u32> = (0..n + 2 * pad)
        .map(|i| {
            let j = i as i64 - pad as i64;
            let r = if j < 0 {
                -j
            } else if j >= n as i64 {
                2 * (n as i64 - 1) - j
            } else {
                j
            };
            r as u32
        })
        .collect();
    Ok(Tensor::new(idx, device)?)
}

/// Reflection padding on both spatial axes of an `NCHW` tensor.
pub fn reflect_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    if pad >= h || pad >= w {
        return Err(Error::Shape(format!(
            "reflect pad {pad} needs spatial dims > pad, got {h}x{w}"
        )));
    }
    let x = x.index_select(&reflect_indices(h, pad, x.device())?, 2)?;
    Ok(x.index_select(&reflect_indices(w, pad, x.device())?, 3)?)
}

/// Instance normalization without affine parameters.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
    Ok(xc.broadcast_div(&(var + 1e-5)?.sqrt()?)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * slope)?)?)
}

/// Written through tanh: `1 / (1 + exp(-x))` overflows for large negative
/// logits and its backward pass then yields `0 * inf = NaN`.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(0.5, 0.0)?.tanh()?.affine(0.5, 0.5)?)
}
