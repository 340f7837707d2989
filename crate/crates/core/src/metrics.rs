//! Evaluation metrics on 8-bit images.

use crate::error::Result;
use crate::losses::{self, SsimParams};
use crate::tensor::{Shape, Tensor};

/// 8-bit image in NCHW layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quantized {
    pub shape: Shape,
    pub data: Vec<u8>,
}

/// `[0, 1]` float to byte: clamp, scale by 255, round half up.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

impl Quantized {
    pub fn from_unit(t: &Tensor) -> Self {
        Quantized {
            shape: t.shape(),
            data: t.data().iter().map(|&v| to_u8(v)).collect(),
        }
    }

    /// Byte values as floats in `[0, 255]`.
    pub fn to_tensor_255(&self) -> Tensor {
        Tensor::new(self.shape, self.data.iter().map(|&v| v as f64).collect())
            .expect("shape matches data")
    }

    /// Byte values divided by 255.
    pub fn to_unit(&self) -> Tensor {
        Tensor::new(self.shape, self.data.iter().map(|&v| v as f64 / 255.0).collect())
            .expect("shape matches data")
    }
}

/// `10 log10(255² / mse)`; `+inf` when `mse == 0`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

/// PSNR over all channels and pixels of two 8-bit images.
pub fn psnr(pred: &Quantized, target: &Quantized) -> Result<f64> {
    let mse = losses::mse(&pred.to_tensor_255(), &target.to_tensor_255())?;
    Ok(psnr_from_mse(mse))
}

/// Mean SSIM of two 8-bit images with dynamic range 255.
pub fn ssim(pred: &Quantized, target: &Quantized) -> Result<f64> {
    losses::ssim(
        &pred.to_tensor_255(),
        &target.to_tensor_255(),
        &SsimParams::for_range(255.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(values: Vec<u8>) -> Quantized {
        Quantized {
            shape: Shape::new(1, 1, 1, values.len()),
            data: values,
        }
    }

    #[test]
    fn psnr_sentinels_and_hand_values() {
        let a = image(vec![0, 10, 255]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&image(vec![0; 4]), &image(vec![255; 4])).unwrap(), 0.0);
        assert!((psnr_from_mse(65.025) - 30.0).abs() < 1e-9);
        assert!(psnr(&a, &image(vec![0])).is_err());
    }

    #[test]
    fn quantization_rounds_half_up_and_clamps() {
        assert_eq!(to_u8(-0.2), 0);
        assert_eq!(to_u8(1.7), 255);
        assert_eq!(to_u8(0.5), 128);
        for b in 0..=255u8 {
            assert_eq!(to_u8(b as f64 / 255.0), b);
        }
    }
}
