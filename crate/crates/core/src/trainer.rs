//! Training loop, learning-rate schedule and evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, OptimizerState, RngState};
use crate::data::{Dataset, SamplePair};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, TrainingLoss};
use crate::metrics::{self, Quantized};
use crate::network::{bicubic_upsample, Model};
use crate::tensor::Tensor;
use crate::tensor_ops::{adam_step, AdamConfig, Tape};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Samples per optimizer step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub lr0: f64,
    pub halve_every: usize,
    pub adam: AdamConfig,
    pub loss: TrainingLoss,
    pub seed: u64,
    /// Checkpoint cadence in epochs; 0 means only at the end.
    pub checkpoint_every: usize,
    /// Rescale the batch gradient to at most this global L2 norm.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 1,
            lr0: 1e-3,
            halve_every: 50,
            adam: AdamConfig::default(),
            loss: TrainingLoss::Mix(LossConfig::default()),
            seed: 0,
            checkpoint_every: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.halve_every == 0 {
            return bad("halve_every must be >= 1".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps.is_nan() || a.eps <= 0.0 {
            return bad(format!("invalid Adam parameters {a:?}"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if let TrainingLoss::Mix(l) = &self.loss {
            l.validate()?;
        }
        Ok(())
    }
}

/// `lr0 · 0.5^floor(epoch / halve_every)` for a 0-based epoch index.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = epoch / cfg.halve_every.max(1);
    cfg.lr0 * 0.5f64.powi(i32::try_from(halvings).unwrap_or(i32::MAX))
}

/// One line of the training log. `epoch` counts from 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch, measured before each step.
    pub loss: f64,
    pub seconds: f64,
    pub steps: u64,
}

pub fn log_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,loss,seconds\n");
    for r in records {
        let _ = writeln!(out, "{},{:e},{:.9e},{:.3}", r.epoch, r.lr, r.loss, r.seconds);
    }
    out
}

fn round_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

/// Model plus optimizer, epoch counter and data RNG.
pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
    optimizer: OptimizerState,
    epoch: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = OptimizerState::new(&model);
        Ok(Trainer {
            model,
            cfg,
            optimizer,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    /// Continues from a checkpoint. Missing optimizer or RNG blocks start fresh.
    pub fn resume(ckpt: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = match ckpt.optimizer {
            Some(o) => o,
            None => OptimizerState::new(&ckpt.model),
        };
        let rng = match ckpt.rng {
            Some(r) => r.restore(),
            None => ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        Ok(Trainer {
            model: ckpt.model,
            cfg,
            optimizer,
            epoch: ckpt.epoch,
            rng,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Completed epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn steps(&self) -> u64 {
        self.optimizer.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.optimizer.clone()),
            epoch: self.epoch,
            rng: Some(RngState::capture(&self.rng)),
        }
    }

    /// Loss and parameter gradients for one sample.
    fn sample_gradients(&self, pair: &SamplePair) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let mut tape = Tape::new();
        let (pred, params) = self.model.forward_on_tape(&mut tape, &pair.lr)?;
        let loss = self.cfg.loss.on_tape(&mut tape, pred, &pair.hr)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {value} on sample {:?} at epoch {}",
                pair.id,
                self.epoch + 1
            )));
        }
        let grads = tape.backward(loss)?;
        let grads = params
            .into_iter()
            .map(|(name, var)| {
                let g = grads.get_or_zeros(var, tape.shape(var));
                (name, g)
            })
            .collect();
        Ok((value, grads))
    }

    /// One optimizer step on `batch`; returns the per-sample losses.
    pub fn step(&mut self, batch: &[SamplePair], lr: f64) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::invalid("Trainer::step", "empty batch"));
        }
        let mut losses = Vec::with_capacity(batch.len());
        let mut total: Option<BTreeMap<String, Tensor>> = None;
        for pair in batch {
            let (loss, grads) = self.sample_gradients(pair)?;
            losses.push(loss);
            match &mut total {
                None => total = Some(grads),
                Some(acc) => {
                    for (name, g) in grads {
                        acc.get_mut(&name).expect("same parameter set").add_assign(&g);
                    }
                }
            }
        }
        let mut grads = total.expect("non-empty batch");
        let mut scale = 1.0 / batch.len() as f64;
        if let Some(clip) = self.cfg.grad_clip {
            let norm = grads
                .values()
                .flat_map(|g| g.data())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                * scale;
            if norm > clip {
                scale *= clip / norm;
            }
        }
        if scale != 1.0 {
            for g in grads.values_mut() {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
        }
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
            let ids: Vec<&str> = batch.iter().map(|p| p.id.as_str()).collect();
            return Err(Error::NonFinite(format!(
                "gradient of {name} on samples {ids:?} at epoch {}",
                self.epoch + 1
            )));
        }

        self.optimizer.step += 1;
        let t = self.optimizer.step;
        for (name, param) in self.model.params_mut() {
            let state = self
                .optimizer
                .moments
                .get_mut(name)
                .expect("optimizer tracks every parameter");
            adam_step(param, &grads[name], state, t, lr, &self.cfg.adam)?;
            round_f32(param);
            round_f32(&mut state.m);
            round_f32(&mut state.v);
        }
        Ok(losses)
    }

    /// Runs the next epoch over `data`.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<EpochRecord> {
        if data.spec().scale != self.model.config().scale {
            return Err(Error::InvalidConfig(format!(
                "dataset scale {} does not match model scale {}",
                data.spec().scale,
                self.model.config().scale
            )));
        }
        let start = Instant::now();
        let index = usize::try_from(self.epoch).unwrap_or(usize::MAX);
        let lr = lr_schedule(index, &self.cfg);
        let samples = data.epoch(&mut self.rng)?;
        let mut losses = Vec::with_capacity(samples.len());
        let first_step = self.optimizer.step;
        for batch in samples.chunks(self.cfg.batch_size) {
            losses.extend(self.step(batch, lr)?);
        }
        self.epoch += 1;
        Ok(EpochRecord {
            epoch: index + 1,
            lr,
            loss: losses.iter().sum::<f64>() / losses.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
            steps: self.optimizer.step - first_step,
        })
    }

    /// Trains until `cfg.epochs` epochs are complete, calling `on_epoch`
    /// after each one (e.g. for logging or checkpointing).
    pub fn fit(
        &mut self,
        data: &Dataset,
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<Vec<EpochRecord>> {
        let mut records = Vec::new();
        while self.epoch < self.cfg.epochs as u64 {
            let rec = self.run_epoch(data)?;
            on_epoch(self, &rec)?;
            records.push(rec);
        }
        Ok(records)
    }
}

/// Trains `model` for `cfg.epochs` epochs from a fresh optimizer.
pub fn train(model: Model, data: &Dataset, cfg: &TrainConfig) -> Result<(Model, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(model, *cfg)?;
    let records = trainer.fit(data, |_, _| Ok(()))?;
    Ok((trainer.into_model(), records))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub bicubic_psnr: f64,
    pub bicubic_ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: Vec<ImageMetrics>,
    /// Column means, with id `"mean"`.
    pub mean: ImageMetrics,
}

impl EvalReport {
    /// Per-image rows followed by the mean row.
    pub fn rows(&self) -> Vec<&ImageMetrics> {
        self.images.iter().chain(std::iter::once(&self.mean)).collect()
    }

    pub fn per_image_csv(&self) -> String {
        let mut out = String::from("image,psnr,ssim,bicubic_psnr,bicubic_ssim\n");
        for r in self.rows() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.id,
                fmt_metric(r.psnr),
                fmt_metric(r.ssim),
                fmt_metric(r.bicubic_psnr),
                fmt_metric(r.bicubic_ssim)
            );
        }
        out
    }
}

/// Fixed-precision metric text; infinities print as `inf`.
pub fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

fn score(pred: &Tensor, hr: &Quantized) -> Result<(f64, f64)> {
    let q = Quantized::from_unit(pred);
    Ok((metrics::psnr(&q, hr)?, metrics::ssim(&q, hr)?))
}

/// PSNR/SSIM of the model and of plain bicubic upsampling on every pair,
/// computed on 8-bit clamped images.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<EvalReport> {
    let scale = model.config().scale;
    if data.spec().scale != scale {
        return Err(Error::InvalidConfig(format!(
            "dataset scale {} does not match model scale {scale}",
            data.spec().scale
        )));
    }
    let mut images = Vec::with_capacity(data.len());
    for pair in data.pairs() {
        let hr = Quantized::from_unit(&pair.hr);
        let (psnr, ssim) = score(&model.forward(&pair.lr)?, &hr)?;
        let (bicubic_psnr, bicubic_ssim) = score(&bicubic_upsample(&pair.lr, scale)?, &hr)?;
        images.push(ImageMetrics {
            id: pair.id.clone(),
            psnr,
            ssim,
            bicubic_psnr,
            bicubic_ssim,
        });
    }
    let n = images.len() as f64;
    let avg = |f: fn(&ImageMetrics) -> f64| images.iter().map(f).sum::<f64>() / n;
    let mean = ImageMetrics {
        id: "mean".into(),
        psnr: avg(|m| m.psnr),
        ssim: avg(|m| m.ssim),
        bicubic_psnr: avg(|m| m.bicubic_psnr),
        bicubic_ssim: avg(|m| m.bicubic_ssim),
    };
    Ok(EvalReport { images, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetSpec;
    use crate::network::NetworkConfig;
    use crate::tensor::Shape;

    fn synthetic(n: usize, hr: usize, scale: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = (0..n)
            .map(|i| {
                let img = Tensor::random_uniform(Shape::new(1, 3, hr, hr), 0.0, 1.0, &mut rng);
                crate::data::make_pair(&img, scale, hr, format!("img{i}")).unwrap()
            })
            .collect();
        let spec = DatasetSpec {
            hr_size: hr,
            ..DatasetSpec::new("synthetic", scale)
        };
        Dataset::from_pairs(spec, pairs).unwrap()
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            loss: TrainingLoss::Mse,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_halves_on_boundaries() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 1e-3);
        assert_eq!(lr_schedule(49, &cfg), 1e-3);
        assert_eq!(lr_schedule(50, &cfg), 5e-4);
        assert_eq!(lr_schedule(100, &cfg), 2.5e-4);
        let lrs: Vec<f64> = (0..400).map(|e| lr_schedule(e, &cfg)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { lr0: 0.0, ..TrainConfig::default() },
            TrainConfig { halve_every: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { grad_clip: Some(-1.0), ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn one_sample_one_epoch_is_one_step() {
        let data = synthetic(1, 16, 2, 0);
        let model = Model::new(NetworkConfig::dense_sr(1, 2, 2), 0).unwrap();
        let mut trainer = Trainer::new(model, small_cfg(1)).unwrap();
        let rec = trainer.run_epoch(&data).unwrap();
        assert_eq!((rec.epoch, rec.steps, trainer.steps()), (1, 1, 1));
    }

    #[test]
    fn small_step_does_not_increase_loss() {
        let data = synthetic(1, 16, 2, 1);
        let pair = &data.pairs()[0];
        let model = Model::new(NetworkConfig::unet_sr(1, 4, 2), 3).unwrap();
        let before = TrainingLoss::Mse.evaluate(&model.forward(&pair.lr).unwrap(), &pair.hr).unwrap();
        let mut trainer = Trainer::new(model, TrainConfig { lr0: 1e-5, ..small_cfg(1) }).unwrap();
        trainer.run_epoch(&data).unwrap();
        let after = TrainingLoss::Mse
            .evaluate(&trainer.model().forward(&pair.lr).unwrap(), &pair.hr)
            .unwrap();
        assert!(after <= before, "{after} > {before}");
    }

    #[test]
    fn training_is_deterministic_and_params_stay_f32() {
        let data = synthetic(3, 16, 2, 2);
        let cfg = TrainConfig {
            batch_size: 2,
            loss: TrainingLoss::Mix(LossConfig::default()),
            ..small_cfg(2)
        };
        let run = || {
            let model = Model::new(NetworkConfig::dense_sr_plus(1, 2, 2), 9).unwrap();
            train(model, &data, &cfg).unwrap()
        };
        let (a, log_a) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert_eq!(log_a.len(), 2);
        assert_eq!(log_a[0].steps, 2);
        for t in a.params().values() {
            assert!(t.data().iter().all(|&v| v as f32 as f64 == v));
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let spec = DatasetSpec {
            hr_size: 16,
            shuffle: true,
            patch_size: Some(8),
            ..DatasetSpec::new("synthetic", 2)
        };
        let base = synthetic(3, 16, 2, 4);
        let data = Dataset::from_pairs(spec, base.pairs().to_vec()).unwrap();
        let model = Model::new(NetworkConfig::dense_sr(1, 2, 2), 5).unwrap();
        let cfg = small_cfg(4);

        let mut full = Trainer::new(model.clone(), cfg).unwrap();
        full.fit(&data, |_, _| Ok(())).unwrap();

        let mut first = Trainer::new(model, TrainConfig { epochs: 2, ..cfg }).unwrap();
        first.fit(&data, |_, _| Ok(())).unwrap();
        let bytes = first.checkpoint().to_bytes().unwrap();
        let mut second = Trainer::resume(Checkpoint::from_bytes(&bytes).unwrap(), cfg).unwrap();
        let recs = second.fit(&data, |_, _| Ok(())).unwrap();
        assert_eq!(recs.iter().map(|r| r.epoch).collect::<Vec<_>>(), [3, 4]);
        assert_eq!(second.model(), full.model());
    }

    #[test]
    fn non_finite_loss_names_the_sample() {
        let mut data = synthetic(1, 16, 2, 6).pairs().to_vec();
        data[0].hr.data_mut()[0] = f64::NAN;
        let spec = DatasetSpec {
            hr_size: 16,
            ..DatasetSpec::new("synthetic", 2)
        };
        let data = Dataset::from_pairs(spec, data).unwrap();
        let model = Model::new(NetworkConfig::dense_sr(1, 2, 2), 0).unwrap();
        let err = train(model, &data, &small_cfg(1)).unwrap_err();
        assert!(matches!(&err, Error::NonFinite(msg) if msg.contains("img0")), "{err}");
    }

    #[test]
    fn evaluation_rows_and_bicubic_identity() {
        let data = synthetic(2, 32, 2, 7);
        let mut model = Model::new(NetworkConfig::dense_sr(1, 2, 2), 0).unwrap();
        model.zero_head();
        let report = evaluate(&model, &data).unwrap();
        assert_eq!(report.rows().len(), data.len() + 1);
        for r in report.rows() {
            assert_eq!(r.psnr, r.bicubic_psnr);
            assert_eq!(r.ssim, r.bicubic_ssim);
        }
        assert_eq!(report.per_image_csv().lines().count(), 1 + data.len() + 1);
    }

    #[test]
    fn ground_truth_scores_perfectly() {
        let hr = Quantized::from_unit(&synthetic(1, 32, 2, 8).pairs()[0].hr);
        let (p, s) = score(&hr.to_unit(), &hr).unwrap();
        assert_eq!(p, f64::INFINITY);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_has_fixed_header() {
        let rec = EpochRecord {
            epoch: 1,
            lr: 1e-3,
            loss: 0.5,
            seconds: 0.25,
            steps: 1,
        };
        let csv = log_csv(&[rec]);
        assert_eq!(csv.lines().next(), Some("epoch,lr,loss,seconds"));
        assert_eq!(csv.lines().count(), 2);
    }
}
