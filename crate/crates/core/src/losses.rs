//! Training losses: MSE, SSIM, Sobel gradient maps, mean gradient error and
//! their weighted mix. Each loss has a plain evaluator and a tape op with an
//! analytic gradient with respect to the prediction (the target is constant).

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::tensor_ops::{Tape, Var};

/// Sobel kernel for `Gx`, applied by cross-correlation.
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
/// Sobel kernel for `Gy`, applied by cross-correlation.
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// Added under the square root when differentiating the gradient magnitude.
pub const MAGNITUDE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SsimWindow {
    Gaussian { size: usize, sigma: f64 },
    Uniform { size: usize },
}

impl SsimWindow {
    pub const GAUSSIAN_11: SsimWindow = SsimWindow::Gaussian {
        size: 11,
        sigma: 1.5,
    };
    pub const UNIFORM_8: SsimWindow = SsimWindow::Uniform { size: 8 };

    pub fn size(&self) -> usize {
        match *self {
            SsimWindow::Gaussian { size, .. } | SsimWindow::Uniform { size } => size,
        }
    }

    /// Normalised 1-D profile; the 2-D window is its outer product.
    pub fn profile(&self) -> Vec<f64> {
        match *self {
            SsimWindow::Gaussian { size, sigma } => {
                let centre = (size as f64 - 1.0) / 2.0;
                let raw: Vec<f64> = (0..size)
                    .map(|i| (-(i as f64 - centre).powi(2) / (2.0 * sigma * sigma)).exp())
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / total).collect()
            }
            SsimWindow::Uniform { size } => vec![1.0 / size as f64; size],
        }
    }
}

impl FromStr for SsimWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian11" => Ok(SsimWindow::GAUSSIAN_11),
            "uniform8" => Ok(SsimWindow::UNIFORM_8),
            other => Err(Error::invalid(
                "ssim window",
                format!("unknown window {other:?} (gaussian11, uniform8)"),
            )),
        }
    }
}

/// Window and stabilising constants of SSIM.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: SsimWindow,
    pub c1: f64,
    pub c2: f64,
}

impl SsimParams {
    /// Standard constants `c1 = (0.01 L)^2`, `c2 = (0.03 L)^2` for dynamic range `L`.
    pub fn for_range(dynamic_range: f64) -> Self {
        SsimParams {
            window: SsimWindow::GAUSSIAN_11,
            c1: (0.01 * dynamic_range).powi(2),
            c2: (0.03 * dynamic_range).powi(2),
        }
    }
}

impl Default for SsimParams {
    fn default() -> Self {
        Self::for_range(1.0)
    }
}

/// How the SSIM term enters the mixed loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsimTerm {
    /// `λS · (1 − SSIM)`: zero for a perfect reconstruction.
    OneMinus,
    /// `λS · SSIM`, literally added.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_g: f64,
    pub lambda_s: f64,
    pub ssim: SsimParams,
    pub ssim_term: SsimTerm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_g: 0.1,
            lambda_s: 0.1,
            ssim: SsimParams::default(),
            ssim_term: SsimTerm::OneMinus,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_g.is_finite() && self.lambda_g >= 0.0) {
            return Err(Error::invalid("LossConfig", format!("lambda_g = {}", self.lambda_g)));
        }
        if !(self.lambda_s.is_finite() && self.lambda_s >= 0.0) {
            return Err(Error::invalid("LossConfig", format!("lambda_s = {}", self.lambda_s)));
        }
        Ok(())
    }
}

/// Loss minimised during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainingLoss {
    Mse,
    Mix(LossConfig),
}

impl TrainingLoss {
    pub fn on_tape(&self, tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
        match self {
            TrainingLoss::Mse => tape.mse(pred, target),
            TrainingLoss::Mix(cfg) => tape.mixe(pred, target, cfg),
        }
    }

    pub fn evaluate(&self, pred: &Tensor, target: &Tensor) -> Result<f64> {
        match self {
            TrainingLoss::Mse => mse(pred, target),
            TrainingLoss::Mix(cfg) => mixe(pred, target, cfg),
        }
    }
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_same_shape(target, "mse")?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.numel() as f64)
}

/// Directional Sobel responses and gradient magnitude over the valid region.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMaps {
    pub gx: Tensor,
    pub gy: Tensor,
    pub g: Tensor,
}

fn correlate3_valid(x: &Tensor, k: &[[f64; 3]; 3]) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.h - 2, s.w - 2), |n, c, i, j| {
        let plane = x.plane(n, c);
        let mut acc = 0.0;
        for (u, row) in k.iter().enumerate() {
            for (v, &kv) in row.iter().enumerate() {
                acc += kv * plane[(i + u) * s.w + j + v];
            }
        }
        acc
    })
}

fn correlate3_adjoint(g: &Tensor, k: &[[f64; 3]; 3], input: Shape, dx: &mut Tensor) {
    let gs = g.shape();
    for n in 0..gs.n {
        for c in 0..gs.c {
            let gp = g.plane(n, c);
            let dp = dx.plane_mut(n, c);
            for i in 0..gs.h {
                for j in 0..gs.w {
                    let gv = gp[i * gs.w + j];
                    for (u, row) in k.iter().enumerate() {
                        for (v, &kv) in row.iter().enumerate() {
                            dp[(i + u) * input.w + j + v] += kv * gv;
                        }
                    }
                }
            }
        }
    }
}

pub fn sobel_gradients(y: &Tensor) -> Result<GradientMaps> {
    let s = y.shape();
    if s.h < 3 || s.w < 3 {
        return Err(Error::invalid(
            "sobel_gradients",
            format!("image {}x{} smaller than 3x3", s.h, s.w),
        ));
    }
    let gx = correlate3_valid(y, &SOBEL_X);
    let gy = correlate3_valid(y, &SOBEL_Y);
    let g = gx.zip_map(&gy, |a, b| (a * a + b * b).sqrt())?;
    Ok(GradientMaps { gx, gy, g })
}

/// Mean squared difference of Sobel magnitudes, over channels and the valid region.
pub fn mge(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_same_shape(target, "mge")?;
    let gp = sobel_gradients(pred)?;
    let gt = sobel_gradients(target)?;
    mse(&gp.g, &gt.g)
}

/// Per-plane windowed statistics for SSIM.
struct SsimStats {
    out: Shape,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    e_xx: Vec<f64>,
    e_yy: Vec<f64>,
    e_xy: Vec<f64>,
}

/// Separable valid-region filtering of an `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - k.len(), w + 1 - k.len());
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (t, &kv) in k.iter().enumerate() {
            let src_row = &tmp[(y + t) * ow..(y + t + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src_row) {
                *o += kv * v;
            }
        }
    }
    out
}

fn filter_valid_adjoint(g: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - k.len(), w + 1 - k.len());
    let mut tmp = vec![0.0; h * ow];
    for y in 0..oh {
        let line = &g[y * ow..(y + 1) * ow];
        for (t, &kv) in k.iter().enumerate() {
            for (d, v) in tmp[(y + t) * ow..(y + t + 1) * ow].iter_mut().zip(line) {
                *d += kv * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let row = &mut out[y * w..(y + 1) * w];
        for x in 0..ow {
            let gv = tmp[y * ow + x];
            for (t, &kv) in k.iter().enumerate() {
                row[x + t] += kv * gv;
            }
        }
    }
    out
}

fn check_ssim_inputs(pred: &Tensor, target: &Tensor, params: &SsimParams) -> Result<()> {
    pred.expect_same_shape(target, "ssim")?;
    let s = pred.shape();
    let k = params.window.size();
    if s.h < k || s.w < k {
        return Err(Error::invalid(
            "ssim",
            format!("image {}x{} smaller than {k}x{k} window", s.h, s.w),
        ));
    }
    Ok(())
}

fn ssim_stats(x: &Tensor, y: &Tensor, n: usize, c: usize, k: &[f64]) -> SsimStats {
    let s = x.shape();
    let (xp, yp) = (x.plane(n, c), y.plane(n, c));
    let xx: Vec<f64> = xp.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = yp.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xp.iter().zip(yp).map(|(a, b)| a * b).collect();
    SsimStats {
        out: Shape::new(1, 1, s.h + 1 - k.len(), s.w + 1 - k.len()),
        mu_x: filter_valid(xp, s.h, s.w, k),
        mu_y: filter_valid(yp, s.h, s.w, k),
        e_xx: filter_valid(&xx, s.h, s.w, k),
        e_yy: filter_valid(&yy, s.h, s.w, k),
        e_xy: filter_valid(&xy, s.h, s.w, k),
    }
}

/// Per-window SSIM terms `(A, B, C, D)` with `SSIM = A B / (C D)`.
#[inline]
fn ssim_terms(st: &SsimStats, i: usize, c1: f64, c2: f64) -> (f64, f64, f64, f64) {
    let (mx, my) = (st.mu_x[i], st.mu_y[i]);
    let var_x = st.e_xx[i] - mx * mx;
    let var_y = st.e_yy[i] - my * my;
    let cov = st.e_xy[i] - mx * my;
    (
        2.0 * mx * my + c1,
        2.0 * cov + c2,
        mx * mx + my * my + c1,
        var_x + var_y + c2,
    )
}

/// Mean SSIM over all window positions and channels.
pub fn ssim(pred: &Tensor, target: &Tensor, params: &SsimParams) -> Result<f64> {
    check_ssim_inputs(pred, target, params)?;
    let s = pred.shape();
    let k = params.window.profile();
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            let st = ssim_stats(pred, target, n, c, &k);
            for i in 0..st.out.numel() {
                let (a, b, cc, d) = ssim_terms(&st, i, params.c1, params.c2);
                total += a * b / (cc * d);
            }
            count += st.out.numel();
        }
    }
    Ok(total / count as f64)
}

fn ssim_grad(pred: &Tensor, target: &Tensor, params: &SsimParams, upstream: f64) -> Tensor {
    let s = pred.shape();
    let k = params.window.profile();
    let (oh, ow) = (s.h + 1 - k.len(), s.w + 1 - k.len());
    let scale = upstream / (s.n * s.c * oh * ow) as f64;
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let st = ssim_stats(pred, target, n, c, &k);
            let m = st.out.numel();
            let (mut d_mu, mut d_exx, mut d_exy) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
            for i in 0..m {
                let (a, b, cc, d) = ssim_terms(&st, i, params.c1, params.c2);
                let value = a * b / (cc * d);
                let (mx, my) = (st.mu_x[i], st.mu_y[i]);
                d_mu[i] = scale
                    * (2.0 * my * (b - a) / (cc * d) - 2.0 * mx * value * (1.0 / cc - 1.0 / d));
                d_exx[i] = scale * (-value / d);
                d_exy[i] = scale * (2.0 * a / (cc * d));
            }
            let g_mu = filter_valid_adjoint(&d_mu, s.h, s.w, &k);
            let g_xx = filter_valid_adjoint(&d_exx, s.h, s.w, &k);
            let g_xy = filter_valid_adjoint(&d_exy, s.h, s.w, &k);
            let (xp, yp) = (pred.plane(n, c).to_vec(), target.plane(n, c));
            for (j, out) in dx.plane_mut(n, c).iter_mut().enumerate() {
                *out = g_mu[j] + 2.0 * xp[j] * g_xx[j] + yp[j] * g_xy[j];
            }
        }
    }
    dx
}

/// Mixed loss `MSE + λG·MGE + λS·(1 − SSIM)` (or `+ λS·SSIM` with
/// [`SsimTerm::Literal`]). Terms with zero weight are skipped entirely.
pub fn mixe(pred: &Tensor, target: &Tensor, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let mut total = mse(pred, target)?;
    if cfg.lambda_g != 0.0 {
        total += cfg.lambda_g * mge(pred, target)?;
    }
    if cfg.lambda_s != 0.0 {
        let s = ssim(pred, target, &cfg.ssim)?;
        total += match cfg.ssim_term {
            SsimTerm::OneMinus => cfg.lambda_s * (1.0 - s),
            SsimTerm::Literal => cfg.lambda_s * s,
        };
    }
    Ok(total)
}

impl Tape {
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let value = mse(self.value(pred), target)?;
        let target = target.clone();
        Ok(self.push(
            "mse",
            Tensor::scalar(value),
            &[pred],
            Box::new(move |g, inputs, _, _| {
                let scale = 2.0 * g.item() / target.numel() as f64;
                vec![Some(
                    inputs[0]
                        .zip_map(&target, |p, t| scale * (p - t))
                        .expect("shape"),
                )]
            }),
        ))
    }

    pub fn mge(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let value = mge(self.value(pred), target)?;
        let target_g = sobel_gradients(target)?.g;
        Ok(self.push(
            "mge",
            Tensor::scalar(value),
            &[pred],
            Box::new(move |g, inputs, _, _| {
                let x = inputs[0];
                let maps = sobel_gradients(x).expect("validated in forward");
                let scale = 2.0 * g.item() / maps.g.numel() as f64;
                let mut dgx = maps.gx.clone();
                let mut dgy = maps.gy.clone();
                for i in 0..maps.g.numel() {
                    let (gx, gy) = (maps.gx.data()[i], maps.gy.data()[i]);
                    let d = scale * (maps.g.data()[i] - target_g.data()[i])
                        / (gx * gx + gy * gy + MAGNITUDE_EPS).sqrt();
                    dgx.data_mut()[i] = d * gx;
                    dgy.data_mut()[i] = d * gy;
                }
                let mut dx = Tensor::zeros(x.shape());
                correlate3_adjoint(&dgx, &SOBEL_X, x.shape(), &mut dx);
                correlate3_adjoint(&dgy, &SOBEL_Y, x.shape(), &mut dx);
                vec![Some(dx)]
            }),
        ))
    }

    pub fn ssim(&mut self, pred: Var, target: &Tensor, params: &SsimParams) -> Result<Var> {
        let value = ssim(self.value(pred), target, params)?;
        let target = target.clone();
        let params = *params;
        Ok(self.push(
            "ssim",
            Tensor::scalar(value),
            &[pred],
            Box::new(move |g, inputs, _, _| {
                vec![Some(ssim_grad(inputs[0], &target, &params, g.item()))]
            }),
        ))
    }

    pub fn mixe(&mut self, pred: Var, target: &Tensor, cfg: &LossConfig) -> Result<Var> {
        cfg.validate()?;
        let mut terms = vec![(self.mse(pred, target)?, 1.0)];
        let mut offset = 0.0;
        if cfg.lambda_g != 0.0 {
            terms.push((self.mge(pred, target)?, cfg.lambda_g));
        }
        if cfg.lambda_s != 0.0 {
            let s = self.ssim(pred, target, &cfg.ssim)?;
            match cfg.ssim_term {
                SsimTerm::OneMinus => {
                    terms.push((s, -cfg.lambda_s));
                    offset = cfg.lambda_s;
                }
                SsimTerm::Literal => terms.push((s, cfg.lambda_s)),
            }
        }
        if terms.len() == 1 {
            return Ok(terms[0].0);
        }
        self.weighted_sum(&terms, offset)
    }
}
