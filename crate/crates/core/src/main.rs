use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use densesr::cli::{self, AblationAxis};
use densesr::config::{Overrides, RunConfig};
use densesr::data::{DatasetSpec, Split};

#[derive(Parser)]
#[command(name = "densesr", version, about = "Dense U-net super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale: Option<usize>,
    /// max, avg, shuffle-direct or shuffle-insert.
    #[arg(long)]
    pooling: Option<String>,
    /// mse or mixe.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long = "lambda-g")]
    lambda_g: Option<f64>,
    #[arg(long = "lambda-s")]
    lambda_s: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long = "base-channels")]
    base_channels: Option<usize>,
    /// Dataset root; falls back to DSR_DATA_ROOT, then the config file.
    #[arg(long = "data-root")]
    data_root: Option<PathBuf>,
    #[arg(long = "out-dir", default_value = "runs/latest")]
    out_dir: PathBuf,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            scale: self.scale,
            pooling: self.pooling.clone(),
            loss: self.loss.clone(),
            lambda_g: self.lambda_g,
            lambda_s: self.lambda_s,
            depth: self.depth,
            base_channels: self.base_channels,
            data_root: self.data_root.clone(),
        });
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, log and config snapshot.
    Train(Common),
    /// Score a checkpoint against bicubic upsampling.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate the train split instead of the test split.
        #[arg(long)]
        train_split: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Super-resolve one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train and score a grid of variants.
    Ablate {
        /// pooling or lambda.
        #[arg(long)]
        axis: String,
        #[command(flatten)]
        common: Common,
    },
    /// Information retention of every pooling kind.
    PoolAnalyze {
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let out = cli::cmd_train(&cfg, &common.out_dir).context("training failed")?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!("log:        {}", out.log.display());
            println!("config:     {}", out.snapshot.display());
            println!("final loss: {:.6e}", out.final_loss);
        }
        Command::Eval {
            checkpoint,
            train_split,
            common,
        } => {
            let mut cfg = common.resolve()?;
            let ckpt_scale = densesr::checkpoint::Checkpoint::load(&checkpoint)?
                .model
                .config()
                .scale;
            let scale = common.scale.unwrap_or(ckpt_scale);
            cfg.network.scale = scale;
            let root = match (&cfg.data.test_root, train_split) {
                (Some(test), false) => test.clone(),
                _ => cfg.data.root.clone(),
            };
            let spec = DatasetSpec {
                root,
                split: if train_split { Split::Train } else { Split::Test },
                scale,
                hr_size: cfg.data.hr_size,
                patch_size: None,
                shuffle: false,
            };
            let out = cli::cmd_eval(&cfg, &checkpoint, spec, &common.out_dir)?;
            print!("{}", std::fs::read_to_string(&out.summary_txt)?);
        }
        Command::Infer {
            checkpoint,
            input,
            output,
        } => {
            cli::cmd_infer(&checkpoint, &input, &output)?;
            println!("{}", output.display());
        }
        Command::Ablate { axis, common } => {
            let axis: AblationAxis = axis.parse()?;
            let cfg = common.resolve()?;
            let out = cli::cmd_ablate(&cfg, axis, &common.out_dir)?;
            print!("{}", std::fs::read_to_string(&out.txt)?);
        }
        Command::PoolAnalyze { out_dir } => {
            print!("{}", cli::cmd_pool_analyze(out_dir.as_deref())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
