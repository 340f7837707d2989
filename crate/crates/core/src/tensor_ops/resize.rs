//! Separable image resampling.
//!
//! All modes use half-pixel centres: output index `i` samples the source at
//! `(i + 0.5) * in / out - 0.5`. Borders replicate the edge sample. Bicubic
//! uses the cubic convolution kernel with `a = -0.5` and no antialiasing, so
//! downscaling by 2 samples the source at phase 0.5 with weights
//! `(-0.0625, 0.5625, 0.5625, -0.0625)`.
//!
//! Every mode is a fixed linear map of the input, so the gradient is its
//! transpose.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::tape::{Tape, Var};

pub const BICUBIC_A: f64 = -0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMode {
    Nearest,
    Bilinear,
    Bicubic,
}

impl FromStr for ResizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResizeMode::Nearest),
            "bilinear" => Ok(ResizeMode::Bilinear),
            "bicubic" => Ok(ResizeMode::Bicubic),
            other => Err(Error::invalid("resize", format!("unknown mode {other:?}"))),
        }
    }
}

/// Cubic convolution kernel with parameter `a`.
pub fn cubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Interpolation taps `(source index, weight)` for each output index along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisTaps {
    pub input_len: usize,
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl AxisTaps {
    pub fn new(input_len: usize, output_len: usize, mode: ResizeMode) -> Self {
        let ratio = input_len as f64 / output_len as f64;
        let last = input_len - 1;
        let taps = (0..output_len)
            .map(|i| match mode {
                ResizeMode::Nearest => {
                    let src = ((2 * i + 1) * input_len) / (2 * output_len);
                    vec![(src.min(last), 1.0)]
                }
                ResizeMode::Bilinear => {
                    let src = ((i as f64 + 0.5) * ratio - 0.5).max(0.0);
                    let i0 = (src.floor() as usize).min(last);
                    let i1 = (i0 + 1).min(last);
                    let t = src - i0 as f64;
                    merge(vec![(i0, 1.0 - t), (i1, t)])
                }
                ResizeMode::Bicubic => {
                    let src = (i as f64 + 0.5) * ratio - 0.5;
                    let base = src.floor();
                    let t = src - base;
                    let base = base as isize;
                    let clamp = |k: isize| (base + k).clamp(0, last as isize) as usize;
                    merge(vec![
                        (clamp(-1), cubic_kernel(t + 1.0, BICUBIC_A)),
                        (clamp(0), cubic_kernel(t, BICUBIC_A)),
                        (clamp(1), cubic_kernel(1.0 - t, BICUBIC_A)),
                        (clamp(2), cubic_kernel(2.0 - t, BICUBIC_A)),
                    ])
                }
            })
            .collect();
        AxisTaps { input_len, taps }
    }

    pub fn output_len(&self) -> usize {
        self.taps.len()
    }
}

/// Sums weights of repeated indices (edge clamping) and drops zero weights.
fn merge(raw: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(raw.len());
    for (idx, w) in raw {
        match out.iter_mut().find(|(i, _)| *i == idx) {
            Some(slot) => slot.1 += w,
            None => out.push((idx, w)),
        }
    }
    out.retain(|&(_, w)| w != 0.0);
    out
}

struct Resampler {
    rows: AxisTaps,
    cols: AxisTaps,
}

impl Resampler {
    fn new(input: Shape, out_h: usize, out_w: usize, mode: ResizeMode) -> Self {
        Resampler {
            rows: AxisTaps::new(input.h, out_h, mode),
            cols: AxisTaps::new(input.w, out_w, mode),
        }
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        let s = x.shape();
        let (oh, ow) = (self.rows.output_len(), self.cols.output_len());
        let out_shape = Shape::new(s.n, s.c, oh, ow);
        let mut out = Tensor::zeros(out_shape);
        let mut tmp = vec![0.0; s.h * ow];
        for n in 0..s.n {
            for c in 0..s.c {
                let src = x.plane(n, c);
                for y in 0..s.h {
                    let row = &src[y * s.w..(y + 1) * s.w];
                    for (j, taps) in self.cols.taps.iter().enumerate() {
                        tmp[y * ow + j] = taps.iter().map(|&(k, w)| w * row[k]).sum();
                    }
                }
                let dst = out.plane_mut(n, c);
                for (i, taps) in self.rows.taps.iter().enumerate() {
                    let line = &mut dst[i * ow..(i + 1) * ow];
                    for &(k, w) in taps {
                        let src_line = &tmp[k * ow..(k + 1) * ow];
                        for (o, v) in line.iter_mut().zip(src_line) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
        out
    }

    fn apply_transpose(&self, g: &Tensor, input: Shape) -> Tensor {
        let ow = self.cols.output_len();
        let mut dx = Tensor::zeros(input);
        let mut tmp = vec![0.0; input.h * ow];
        for n in 0..input.n {
            for c in 0..input.c {
                tmp.fill(0.0);
                let gp = g.plane(n, c);
                for (i, taps) in self.rows.taps.iter().enumerate() {
                    let line = &gp[i * ow..(i + 1) * ow];
                    for &(k, w) in taps {
                        for (t, v) in tmp[k * ow..(k + 1) * ow].iter_mut().zip(line) {
                            *t += w * v;
                        }
                    }
                }
                let dst = dx.plane_mut(n, c);
                for y in 0..input.h {
                    let row = &mut dst[y * input.w..(y + 1) * input.w];
                    for (j, taps) in self.cols.taps.iter().enumerate() {
                        let gv = tmp[y * ow + j];
                        for &(k, w) in taps {
                            row[k] += w * gv;
                        }
                    }
                }
            }
        }
        dx
    }
}

pub fn resize(x: &Tensor, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Tensor> {
    check_size(out_h, out_w)?;
    Ok(Resampler::new(x.shape(), out_h, out_w, mode).apply(x))
}

fn check_size(out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize", format!("output size {out_h}x{out_w}")));
    }
    Ok(())
}

impl Tape {
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Var> {
        check_size(out_h, out_w)?;
        let input = self.shape(x);
        if (input.h, input.w) == (out_h, out_w) {
            // Every mode samples at phase 0 when sizes match.
            return Ok(x);
        }
        let sampler = Resampler::new(input, out_h, out_w, mode);
        let out = sampler.apply(self.value(x));
        Ok(self.push(
            "resize",
            out,
            &[x],
            Box::new(move |g, inputs, _, _| {
                vec![Some(sampler.apply_transpose(g, inputs[0].shape()))]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_at_half_phase() {
        let w: Vec<f64> = [1.5, 0.5, 0.5, 1.5]
            .iter()
            .map(|&d| cubic_kernel(d, BICUBIC_A))
            .collect();
        assert_eq!(w, vec![-0.0625, 0.5625, 0.5625, -0.0625]);
    }

    #[test]
    fn downscale_by_two_uses_half_phase_weights() {
        let taps = AxisTaps::new(8, 4, ResizeMode::Bicubic);
        assert_eq!(
            taps.taps[1],
            vec![(1, -0.0625), (2, 0.5625), (3, 0.5625), (4, -0.0625)]
        );
    }

    #[test]
    fn nearest_doubles_pixels() {
        let x = Tensor::from_fn(Shape::new(1, 1, 2, 2), |_, _, h, w| (h * 2 + w) as f64);
        let y = resize(&x, 4, 4, ResizeMode::Nearest).unwrap();
        assert_eq!(
            y.data(),
            &[0., 0., 1., 1., 0., 0., 1., 1., 2., 2., 3., 3., 2., 2., 3., 3.]
        );
    }

    #[test]
    fn constant_preserved_in_all_modes() {
        let x = Tensor::full(Shape::new(1, 3, 224, 224), 0.37);
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear, ResizeMode::Bicubic] {
            for (h, w) in [(112, 112), (56, 56), (28, 28), (300, 17)] {
                let y = resize(&x, h, w, mode).unwrap();
                assert_eq!(y.shape(), Shape::new(1, 3, h, w));
                assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn transpose_satisfies_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear, ResizeMode::Bicubic] {
            let x = Tensor::random_uniform(Shape::new(1, 2, 5, 7), -1.0, 1.0, &mut rng);
            let g = Tensor::random_uniform(Shape::new(1, 2, 9, 4), -1.0, 1.0, &mut rng);
            let r = Resampler::new(x.shape(), 9, 4, mode);
            let lhs: f64 = r.apply(&x).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = r
                .apply_transpose(&g, x.shape())
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| a * b)
                .sum();
            assert!((lhs - rhs).abs() < 1e-12, "{mode:?}");
        }
    }

    #[test]
    fn equal_size_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::random_uniform(Shape::new(1, 2, 5, 7), -1.0, 1.0, &mut rng);
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear, ResizeMode::Bicubic] {
            assert_eq!(resize(&x, 5, 7, mode).unwrap(), x);
        }
    }

    #[test]
    fn zero_output_size_is_rejected() {
        let x = Tensor::zeros(Shape::new(1, 1, 4, 4));
        assert!(resize(&x, 0, 4, ResizeMode::Bilinear).is_err());
    }
}
