//! UnetSR and Dense U-net super-resolution networks.
//!
//! Layout, for `depth` down-sampling steps and `c_d = base_channels * 2^d`:
//!
//! * upscale path: bicubic pre-upsampling of the LR input to HR size, then
//!   `stem` (3x3 conv + ReLU, 3 -> c_0). Its output is contracting level 0.
//! * contracting path: for `d = 1..=depth`, pool level `d-1` by 2 and apply
//!   `down{d}` (3x3 conv + ReLU -> c_d). Shuffle pooling hands the next conv
//!   four times as many channels.
//! * expanding path: for `d = depth-1 ..= 0`, nearest 2x upsample, `up{d}.reduce`
//!   (2x2 conv halving channels, trailing-edge padding), concatenate skip
//!   features, then `up{d}.fuse` (3x3 conv + ReLU -> c_d).
//! * skips: one-way passes only contracting level `d`; dense passes every
//!   contracting level `0..=depth`, bilinearly resized to level `d`.
//! * `head`: 3x3 conv to RGB, plus the bicubic image when `residual_output`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pooling::{Arrangement, PoolKind, PoolSpec};
use crate::tensor::{Shape, Tensor};
use crate::tensor_ops::{ConvGeometry, ResizeMode, Tape, Var};

pub const SCALES: [usize; 3] = [2, 4, 8];
const MAX_DEPTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SkipStyle {
    OneWay,
    Dense,
}

impl SkipStyle {
    pub fn name(self) -> &'static str {
        match self {
            SkipStyle::OneWay => "one-way",
            SkipStyle::Dense => "dense",
        }
    }
}

impl fmt::Display for SkipStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SkipStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "one-way" => Ok(SkipStyle::OneWay),
            "dense" => Ok(SkipStyle::Dense),
            _ => Err(Error::InvalidConfig(format!("unknown skip style {s:?} (one-way, dense)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NetworkConfig {
    /// Number of 2x down-sampling steps.
    pub depth: usize,
    /// Channels at full resolution; doubled at every contracting level.
    pub base_channels: usize,
    pub scale: usize,
    /// Pooling between contracting levels, always with factor 2.
    pub pooling: PoolKind,
    pub skips: SkipStyle,
    /// Predict a correction on top of the bicubic upsample.
    pub residual_output: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            depth: 5,
            base_channels: 64,
            scale: 2,
            pooling: PoolKind::Max,
            skips: SkipStyle::Dense,
            residual_output: true,
        }
    }
}

impl NetworkConfig {
    /// One-way skips with max pooling.
    pub fn unet_sr(depth: usize, base_channels: usize, scale: usize) -> Self {
        NetworkConfig {
            depth,
            base_channels,
            scale,
            pooling: PoolKind::Max,
            skips: SkipStyle::OneWay,
            residual_output: true,
        }
    }

    /// Dense skips with max pooling.
    pub fn dense_sr(depth: usize, base_channels: usize, scale: usize) -> Self {
        NetworkConfig {
            skips: SkipStyle::Dense,
            ..Self::unet_sr(depth, base_channels, scale)
        }
    }

    /// Dense skips with insert-arranged shuffle pooling.
    pub fn dense_sr_plus(depth: usize, base_channels: usize, scale: usize) -> Self {
        NetworkConfig {
            pooling: PoolKind::Shuffle(Arrangement::Insert),
            ..Self::dense_sr(depth, base_channels, scale)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !SCALES.contains(&self.scale) {
            return Err(Error::InvalidConfig(format!("scale {} not in {SCALES:?}", self.scale)));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidConfig("base_channels must be >= 1".into()));
        }
        if self.depth > MAX_DEPTH {
            return Err(Error::InvalidConfig(format!(
                "depth {} exceeds {MAX_DEPTH}",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn pool_spec(&self) -> PoolSpec {
        PoolSpec {
            kind: self.pooling,
            factor: 2,
        }
    }

    /// Channels produced at contracting level `d`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// HR spatial sizes must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    /// Skip-feature channels concatenated into expanding block `level`.
    pub fn skip_fan_in(&self, level: usize) -> usize {
        match self.skips {
            SkipStyle::OneWay => self.channels(level),
            SkipStyle::Dense => (0..=self.depth).map(|k| self.channels(k)).sum(),
        }
    }

    /// Every convolution in forward order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let conv = |name: String, kernel, in_channels, out_channels, level| LayerSpec {
            name,
            kernel,
            in_channels,
            out_channels,
            level,
        };
        let mut layers = vec![conv("stem".into(), 3, 3, self.channels(0), 0)];
        let pool = self.pool_spec();
        for d in 1..=self.depth {
            layers.push(conv(
                format!("down{d}"),
                3,
                pool.output_channels(self.channels(d - 1)),
                self.channels(d),
                d,
            ));
        }
        for d in (0..self.depth).rev() {
            layers.push(conv(
                format!("up{d}.reduce"),
                2,
                self.channels(d + 1),
                self.channels(d),
                d,
            ));
            layers.push(conv(
                format!("up{d}.fuse"),
                3,
                self.channels(d) + self.skip_fan_in(d),
                self.channels(d),
                d,
            ));
        }
        layers.push(conv("head".into(), 3, self.channels(0), 3, 0));
        layers
    }

    /// Total scalar parameters, computed without allocating them.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerSpec::param_count).sum()
    }

    /// Human-readable channel ledger, one line per layer.
    pub fn ledger_text(&self) -> String {
        let mut out = format!(
            "# depth={} base={} scale={} pooling={} skips={} residual={}\n",
            self.depth, self.base_channels, self.scale, self.pooling, self.skips, self.residual_output
        );
        out.push_str("layer            kernel  level      in     out       params\n");
        for l in self.layers() {
            out.push_str(&format!(
                "{:<16} {:>6} {:>6} {:>7} {:>7} {:>12}\n",
                l.name,
                format!("{0}x{0}", l.kernel),
                l.level,
                l.in_channels,
                l.out_channels,
                l.param_count()
            ));
        }
        out.push_str(&format!("total params: {}\n", self.param_count()));
        out
    }
}

/// One convolution of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Resolution level: spatial size is HR size / 2^level.
    pub level: usize,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel, self.kernel)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(self.out_channels, 1, 1, 1)
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + self.out_channels
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
}

/// Network configuration and its named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: NetworkConfig,
    params: BTreeMap<String, Tensor>,
}

/// Builds a model with dense skips.
pub fn build_dense_unet(cfg: NetworkConfig, seed: u64) -> Result<Model> {
    Model::new(
        NetworkConfig {
            skips: SkipStyle::Dense,
            ..cfg
        },
        seed,
    )
}

/// Builds a model with one-way (same-depth) skips.
pub fn build_unet_sr(cfg: NetworkConfig, seed: u64) -> Result<Model> {
    Model::new(
        NetworkConfig {
            skips: SkipStyle::OneWay,
            ..cfg
        },
        seed,
    )
}

impl Model {
    /// He-uniform weights (fan-in), zero biases. Values are rounded to `f32`
    /// so checkpoints store them losslessly. Residual models start with a
    /// zero head, so their initial output is exactly the bicubic upsample.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for layer in config.layers() {
            let ws = layer.weight_shape();
            let fan_in = (ws.c * ws.h * ws.w) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let data = (0..ws.numel())
                .map(|_| rng.gen_range(-bound..bound) as f32 as f64)
                .collect();
            params.insert(layer.weight_name(), Tensor::new(ws, data)?);
            params.insert(layer.bias_name(), Tensor::zeros(layer.bias_shape()));
        }
        let mut model = Model { config, params };
        if config.residual_output {
            model.zero_head();
        }
        Ok(model)
    }

    /// Assembles a model from stored tensors, checking names and shapes.
    pub fn from_parts(config: NetworkConfig, params: BTreeMap<String, Tensor>) -> Result<Model> {
        config.validate()?;
        let mut expected = BTreeMap::new();
        for layer in config.layers() {
            expected.insert(layer.weight_name(), layer.weight_shape());
            expected.insert(layer.bias_name(), layer.bias_shape());
        }
        if expected.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            match params.get(name) {
                Some(t) if t.shape() == *shape => {}
                Some(t) => {
                    return Err(Error::InvalidConfig(format!(
                        "parameter {name} has shape {}, expected {shape}",
                        t.shape()
                    )))
                }
                None => return Err(Error::InvalidConfig(format!("missing parameter {name}"))),
            }
        }
        if let Some((name, _)) = params.iter().find(|(_, t)| !t.all_finite()) {
            return Err(Error::NonFinite(format!("parameter {name}")));
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Zeroes the output head so a residual model reproduces bicubic upsampling.
    pub fn zero_head(&mut self) {
        for name in ["head.weight", "head.bias"] {
            if let Some(t) = self.params.get_mut(name) {
                t.data_mut().fill(0.0);
            }
        }
    }

    /// Records every parameter as a tape leaf.
    pub fn param_vars(&self, tape: &mut Tape) -> BTreeMap<String, Var> {
        self.params
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone())))
            .collect()
    }

    /// Differentiable forward pass; returns the SR output and parameter handles.
    pub fn forward_on_tape(&self, tape: &mut Tape, lr: &Tensor) -> Result<(Var, BTreeMap<String, Var>)> {
        let params = self.param_vars(tape);
        let input = tape.constant(lr.clone());
        let out = forward_with(&self.config, tape, &params, input)?;
        Ok((out, params))
    }

    /// Inference on an LR batch in `[0, 1]`. The output is not clamped.
    pub fn forward(&self, lr: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params: BTreeMap<String, Var> = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), tape.constant(t.clone())))
            .collect();
        let input = tape.constant(lr.clone());
        let out = forward_with(&self.config, &mut tape, &params, input)?;
        Ok(tape.value(out).clone())
    }
}

/// Bicubic upsample of an LR batch by the configured scale.
pub fn bicubic_upsample(lr: &Tensor, scale: usize) -> Result<Tensor> {
    let s = lr.shape();
    crate::tensor_ops::resize(lr, s.h * scale, s.w * scale, ResizeMode::Bicubic)
}

fn param(params: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    params
        .get(name)
        .copied()
        .ok_or_else(|| Error::InvalidConfig(format!("missing parameter {name}")))
}

fn conv(
    tape: &mut Tape,
    params: &BTreeMap<String, Var>,
    name: &str,
    x: Var,
    geom: ConvGeometry,
) -> Result<Var> {
    let w = param(params, &format!("{name}.weight"))?;
    let b = param(params, &format!("{name}.bias"))?;
    tape.conv2d_geom(x, w, b, geom)
}

/// Forward pass over arbitrary parameter handles.
pub fn forward_with(
    cfg: &NetworkConfig,
    tape: &mut Tape,
    params: &BTreeMap<String, Var>,
    lr: Var,
) -> Result<Var> {
    let s = tape.shape(lr);
    if s.c != 3 {
        return Err(Error::shape("forward", format!("expected 3 input channels, got {}", s.c)));
    }
    let (hr_h, hr_w) = (s.h * cfg.scale, s.w * cfg.scale);
    let multiple = cfg.spatial_multiple();
    if hr_h % multiple != 0 || hr_w % multiple != 0 {
        return Err(Error::invalid(
            "forward",
            format!("upscaled size {hr_h}x{hr_w} not divisible by 2^depth = {multiple}"),
        ));
    }
    let same3 = ConvGeometry::symmetric(1, 1);
    let same2 = ConvGeometry::same(2);

    let upsampled = tape.resize(lr, hr_h, hr_w, ResizeMode::Bicubic)?;
    let stem = conv(tape, params, "stem", upsampled, same3)?;
    let mut levels = vec![tape.relu(stem)];
    let pool = cfg.pool_spec();
    for d in 1..=cfg.depth {
        let pooled = tape.pool(levels[d - 1], pool)?;
        let c = conv(tape, params, &format!("down{d}"), pooled, same3)?;
        levels.push(tape.relu(c));
    }

    let mut y = levels[cfg.depth];
    for d in (0..cfg.depth).rev() {
        let target = tape.shape(levels[d]);
        let up = tape.resize(y, target.h, target.w, ResizeMode::Nearest)?;
        let reduced = conv(tape, params, &format!("up{d}.reduce"), up, same2)?;
        let mut parts = match cfg.skips {
            SkipStyle::OneWay => vec![levels[d]],
            SkipStyle::Dense => {
                let mut v = Vec::with_capacity(cfg.depth + 2);
                for &level in &levels {
                    v.push(tape.resize(level, target.h, target.w, ResizeMode::Bilinear)?);
                }
                v
            }
        };
        parts.push(reduced);
        let cat = tape.concat_channels(&parts)?;
        let fused = conv(tape, params, &format!("up{d}.fuse"), cat, same3)?;
        y = tape.relu(fused);
    }

    let head = conv(tape, params, "head", y, same3)?;
    if cfg.residual_output {
        tape.add(head, upsampled)
    } else {
        Ok(head)
    }
}
