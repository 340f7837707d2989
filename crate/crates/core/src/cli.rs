//! Command implementations behind the `densesr` binary.
//!
//! Each command writes its artifacts into an output directory together with
//! the resolved `config.toml`, and returns the paths it wrote.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{load_image, save_png, Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, TrainingLoss};
use crate::network::{Model, NetworkConfig, SkipStyle};
use crate::pooling::{retention_csv, retention_fraction, Arrangement, PoolKind, Retention};
use crate::trainer::{evaluate, fmt_metric, log_csv, EvalReport, Trainer};

pub const CHECKPOINT_FILE: &str = "model.dsrc";
pub const LOG_FILE: &str = "train_log.csv";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Left-aligned first column, right-aligned others, columns padded to fit.
pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",") + "\n";
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub snapshot: PathBuf,
    pub final_loss: f64,
}

/// Trains from scratch, writing the checkpoint, per-epoch log and config snapshot.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutputs> {
    cfg.validate()?;
    let net = cfg.network()?;
    let train_cfg = cfg.train_config()?;
    let data = Dataset::load(cfg.train_dataset()?)?;
    ensure_dir(out_dir)?;
    let snapshot = cfg.write_snapshot(out_dir)?;
    let log = out_dir.join(LOG_FILE);
    let checkpoint = out_dir.join(CHECKPOINT_FILE);

    let model = Model::new(net, train_cfg.seed)?;
    let mut trainer = Trainer::new(model, train_cfg)?;
    let mut records = Vec::new();
    trainer.fit(&data, |t, rec| {
        log::info!(
            "epoch {} lr {:e} loss {:.6e} ({:.2}s)",
            rec.epoch,
            rec.lr,
            rec.loss,
            rec.seconds
        );
        records.push(*rec);
        write_file(&log, &log_csv(&records))?;
        let every = train_cfg.checkpoint_every;
        if every > 0 && rec.epoch % every == 0 {
            t.checkpoint()
                .save(out_dir.join(format!("model-epoch{:04}.dsrc", rec.epoch)))?;
        }
        Ok(())
    })?;
    trainer.checkpoint().save(&checkpoint)?;
    Ok(TrainOutputs {
        checkpoint,
        log,
        snapshot,
        final_loss: records.last().map_or(f64::NAN, |r| r.loss),
    })
}

#[derive(Clone, Debug)]
pub struct EvalOutputs {
    pub report: EvalReport,
    pub summary_csv: PathBuf,
    pub summary_txt: PathBuf,
    pub per_image_csv: PathBuf,
    pub snapshot: PathBuf,
}

const SUMMARY_HEADER: [&str; 3] = ["method", "psnr", "ssim"];

/// Bicubic and model rows of an evaluation report.
pub fn summary_rows(report: &EvalReport) -> Vec<Vec<String>> {
    let m = &report.mean;
    vec![
        vec!["Bicubic".into(), fmt_metric(m.bicubic_psnr), fmt_metric(m.bicubic_ssim)],
        vec!["Model".into(), fmt_metric(m.psnr), fmt_metric(m.ssim)],
    ]
}

/// Evaluates a checkpoint on `data`, which must use the checkpoint's scale.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: DatasetSpec, out_dir: &Path) -> Result<EvalOutputs> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model_scale = ckpt.model.config().scale;
    if data.scale != model_scale {
        return Err(Error::InvalidConfig(format!(
            "requested scale {} but checkpoint {} was trained at scale {model_scale}",
            data.scale,
            checkpoint.display()
        )));
    }
    let dataset = Dataset::load(data)?;
    let report = evaluate(&ckpt.model, &dataset)?;

    ensure_dir(out_dir)?;
    let mut resolved = cfg.clone();
    resolved.network = ckpt.model.config().into();
    let snapshot = resolved.write_snapshot(out_dir)?;
    let rows = summary_rows(&report);
    let summary_csv = out_dir.join("metrics.csv");
    let summary_txt = out_dir.join("metrics.txt");
    let per_image_csv = out_dir.join("per_image.csv");
    write_file(&summary_csv, &csv_table(&SUMMARY_HEADER, &rows))?;
    write_file(&summary_txt, &aligned_table(&SUMMARY_HEADER, &rows))?;
    write_file(&per_image_csv, &report.per_image_csv())?;
    Ok(EvalOutputs {
        report,
        summary_csv,
        summary_txt,
        per_image_csv,
        snapshot,
    })
}

/// Super-resolves one image file into an 8-bit PNG.
pub fn cmd_infer(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let lr = load_image(input)?;
    let sr = ckpt.model.forward(&lr)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_png(&sr, output)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Pooling,
    Lambda,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooling" => Ok(AblationAxis::Pooling),
            "lambda" => Ok(AblationAxis::Lambda),
            other => Err(Error::Config(format!("unknown ablation axis {other:?} (pooling, lambda)"))),
        }
    }
}

pub const LAMBDA_GRID: [f64; 4] = [0.0, 0.05, 0.1, 0.2];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub lambda_g: f64,
    pub lambda_s: f64,
    pub final_loss: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub model: Model,
}

#[derive(Clone, Debug)]
pub struct AblationOutputs {
    pub rows: Vec<AblationRow>,
    pub csv: PathBuf,
    pub txt: PathBuf,
    pub snapshot: PathBuf,
}

/// Table label of a pooling cell, e.g. `UnetSR(Direct)`.
pub fn method_label(skips: SkipStyle, pooling: PoolKind) -> String {
    let base = match skips {
        SkipStyle::OneWay => "UnetSR",
        SkipStyle::Dense => "DenseSR",
    };
    match pooling {
        PoolKind::Max => base.to_string(),
        PoolKind::Avg => format!("{base}(Avg)"),
        PoolKind::Shuffle(Arrangement::Direct) => format!("{base}(Direct)"),
        PoolKind::Shuffle(Arrangement::Insert) => format!("{base}(Insert)"),
    }
}

fn train_and_score(
    net: NetworkConfig,
    cfg: &RunConfig,
    loss: TrainingLoss,
    train: &Dataset,
    test: &Dataset,
) -> Result<(Model, f64, f64, f64)> {
    let mut tc = cfg.train_config()?;
    tc.loss = loss;
    let mut trainer = Trainer::new(Model::new(net, tc.seed)?, tc)?;
    let records = trainer.fit(train, |_, _| Ok(()))?;
    let model = trainer.into_model();
    let report = evaluate(&model, test)?;
    let final_loss = records.last().map_or(f64::NAN, |r| r.loss);
    Ok((model, final_loss, report.mean.psnr, report.mean.ssim))
}

/// Trains every cell of an ablation grid with identical settings and seeds,
/// then evaluates each on the test split.
pub fn cmd_ablate(cfg: &RunConfig, axis: AblationAxis, out_dir: &Path) -> Result<AblationOutputs> {
    cfg.validate()?;
    let base = cfg.network()?;
    let train = Dataset::load(cfg.train_dataset()?)?;
    let test = Dataset::load(cfg.test_dataset()?)?;
    let mut rows = Vec::new();
    match axis {
        AblationAxis::Pooling => {
            let loss = cfg.loss.resolve()?;
            for skips in [SkipStyle::OneWay, SkipStyle::Dense] {
                for pooling in [
                    PoolKind::Max,
                    PoolKind::Shuffle(Arrangement::Direct),
                    PoolKind::Shuffle(Arrangement::Insert),
                ] {
                    let net = NetworkConfig { skips, pooling, ..base };
                    let (model, final_loss, psnr, ssim) = train_and_score(net, cfg, loss, &train, &test)?;
                    let (lambda_g, lambda_s) = match loss {
                        TrainingLoss::Mse => (0.0, 0.0),
                        TrainingLoss::Mix(l) => (l.lambda_g, l.lambda_s),
                    };
                    log::info!("{}: psnr {psnr:.4} ssim {ssim:.4}", method_label(skips, pooling));
                    rows.push(AblationRow {
                        label: method_label(skips, pooling),
                        lambda_g,
                        lambda_s,
                        final_loss,
                        psnr,
                        ssim,
                        model,
                    });
                }
            }
        }
        AblationAxis::Lambda => {
            let template = match cfg.loss.resolve()? {
                TrainingLoss::Mix(l) => l,
                TrainingLoss::Mse => LossConfig::default(),
            };
            for lambda_g in LAMBDA_GRID {
                for lambda_s in LAMBDA_GRID {
                    let loss = TrainingLoss::Mix(LossConfig {
                        lambda_g,
                        lambda_s,
                        ..template
                    });
                    let (model, final_loss, psnr, ssim) = train_and_score(base, cfg, loss, &train, &test)?;
                    log::info!("lambda_g {lambda_g} lambda_s {lambda_s}: psnr {psnr:.4}");
                    rows.push(AblationRow {
                        label: format!("G{lambda_g}/S{lambda_s}"),
                        lambda_g,
                        lambda_s,
                        final_loss,
                        psnr,
                        ssim,
                        model,
                    });
                }
            }
        }
    }

    ensure_dir(out_dir)?;
    let snapshot = cfg.write_snapshot(out_dir)?;
    let (name, header, cells): (&str, Vec<&str>, Vec<Vec<String>>) = match axis {
        AblationAxis::Pooling => (
            "ablation_pooling",
            vec!["method", "psnr", "ssim", "final_loss"],
            rows.iter()
                .map(|r| {
                    vec![
                        r.label.clone(),
                        fmt_metric(r.psnr),
                        fmt_metric(r.ssim),
                        format!("{:.6e}", r.final_loss),
                    ]
                })
                .collect(),
        ),
        AblationAxis::Lambda => (
            "ablation_lambda",
            vec!["lambda_g", "lambda_s", "psnr", "ssim", "final_loss"],
            rows.iter()
                .map(|r| {
                    vec![
                        r.lambda_g.to_string(),
                        r.lambda_s.to_string(),
                        fmt_metric(r.psnr),
                        fmt_metric(r.ssim),
                        format!("{:.6e}", r.final_loss),
                    ]
                })
                .collect(),
        ),
    };
    let csv = out_dir.join(format!("{name}.csv"));
    let txt = out_dir.join(format!("{name}.txt"));
    write_file(&csv, &csv_table(&header, &cells))?;
    write_file(&txt, &aligned_table(&header, &cells))?;
    Ok(AblationOutputs {
        rows,
        csv,
        txt,
        snapshot,
    })
}

/// Retention of every pooling kind at factors 2 and 4.
pub fn pool_analysis() -> Result<Vec<Retention>> {
    let mut rows = Vec::new();
    for factor in [2, 4] {
        for kind in PoolKind::ALL {
            rows.push(retention_fraction(kind, factor)?);
        }
    }
    Ok(rows)
}

/// Writes `retention.csv` (and `retention.txt`) when `out_dir` is given;
/// returns the CSV text.
pub fn cmd_pool_analyze(out_dir: Option<&Path>) -> Result<String> {
    let rows = pool_analysis()?;
    let csv = retention_csv(&rows);
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
        write_file(&dir.join("retention.csv"), &csv)?;
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.kind.name().to_string(),
                    r.factor.to_string(),
                    r.retained.to_string(),
                    r.loss().to_string(),
                ]
            })
            .collect();
        write_file(
            &dir.join("retention.txt"),
            &aligned_table(&["kind", "factor", "retained", "lost"], &cells),
        )?;
    }
    Ok(csv)
}
