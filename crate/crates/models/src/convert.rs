//! Conversions between core rasters and `NCHW` tensors.
//!
//! Model-facing image tensors live in `[-1, 1]`; the mask channel is carried
//! as `{-1, +1}` so its range matches the image channels.

use candle_core::{DType, Device, Tensor};
use floodviz_core::baselines::{conditioned_input, unconditioned_input, ModelInput};
use floodviz_core::{BinaryMask, ImageTile};

use crate::error::Result;

fn model_input_tensor(input: &ModelInput, dtype: DType, device: &Device) -> Result<Tensor> {
    let t = Tensor::from_slice(
        &input.data,
        (1, input.channels, input.height, input.width),
        device,
    )?;
    Ok(t.to_dtype(dtype)?.affine(2.0, -1.0)?)
}

/// `(1, 3|4, H, W)` generator input. The mask, if given, is upsampled to the
/// image dims first.
pub fn input_tensor(
    pre: &ImageTile,
    mask: Option<&BinaryMask>,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let input = match mask {
        Some(m) => conditioned_input(pre, m)?,
        None => unconditioned_input(pre),
    };
    model_input_tensor(&input, dtype, device)
}

/// `(1, 3, H, W)` image in `[-1, 1]`.
pub fn image_tensor(img: &ImageTile, dtype: DType, device: &Device) -> Result<Tensor> {
    model_input_tensor(&unconditioned_input(img), dtype, device)
}

/// `(1, 1, H, W)` mask in `{0, 1}`.
pub fn mask_tensor(mask: &BinaryMask, dtype: DType, device: &Device) -> Result<Tensor> {
    let data: Vec<f32> = mask.values().iter().map(|&v| f32::from(v)).collect();
    let t = Tensor::from_vec(data, (1, 1, mask.height(), mask.width()), device)?;
    Ok(t.to_dtype(dtype)?)
}

/// Converts a `(3, H, W)` or `(1, 3, H, W)` tensor in `[-1, 1]` back to a
/// tile carrying `template`'s metadata. Values are clamped into `[0, 1]`.
pub fn tensor_to_tile(t: &Tensor, template: &ImageTile) -> Result<ImageTile> {
    let t = if t.rank() == 4 {
        t.squeeze(0)?
    } else {
        t.clone()
    };
    let (c, h, w) = t.dims3()?;
    debug_assert_eq!(c, 3);
    let hwc: Vec<f32> = t
        .to_dtype(DType::F32)?
        .affine(0.5, 0.5)?
        .clamp(0f32, 1f32)?
        .permute((1, 2, 0))?
        .flatten_all()?
        .to_vec1()?;
    Ok(template.with_pixels(h, w, hwc)?)
}

/// Converts a `(1, H, W)` or `(1, 1, H, W)` probability map to a mask by
/// thresholding at `threshold` (inclusive).
pub fn probabilities_to_mask(p: &Tensor, threshold: f64, gsd_m_per_px: f64) -> Result<BinaryMask> {
    let dims = p.dims().to_vec();
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let values: Vec<u8> = p
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?
        .into_iter()
        .map(|v| u8::from(v >= threshold))
        .collect();
    Ok(BinaryMask::new(h, w, values, gsd_m_per_px)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use floodviz_core::Event;

    #[test]
    fn image_roundtrip_is_exact_on_8bit_values() {
        let data: Vec<u8> = (0..4 * 4 * 3).map(|i| (i * 5) as u8).collect();
        let img = ImageTile::from_rgb8("t", 4, 4, &data, 0.5, Event::Synthetic).unwrap();
        let t = image_tensor(&img, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 4, 4]);
        assert_eq!(tensor_to_tile(&t, &img).unwrap().to_rgb8(), data);
    }

    #[test]
    fn mask_channel_is_plus_minus_one() {
        let img = ImageTile::filled("t", 4, 4, [0.5; 3]).unwrap();
        let mask = BinaryMask::from_fn(2, 2, |r, c| r == c);
        let t = input_tensor(&img, Some(&mask), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 4, 4, 4]);
        let m: Vec<f32> = t
            .get(0)
            .unwrap()
            .get(3)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert!(m.iter().all(|&v| v == 1.0 || v == -1.0));
        assert_eq!(m[0], 1.0);
        assert_eq!(m[2], -1.0);
        let p = mask_tensor(&BinaryMask::ones(3, 3), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(
            probabilities_to_mask(&p, 0.5, 1.0).unwrap(),
            BinaryMask::ones(3, 3).with_gsd(1.0)
        );
    }
}
