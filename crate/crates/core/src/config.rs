//! Run configuration: a sectioned TOML file plus command-line overrides.
//!
//! ```toml
//! schema_version = 1
//!
//! [network]
//! depth = 3
//! base_channels = 16
//! scale = 2
//! pooling = "shuffle-insert"
//!
//! [loss]
//! kind = "mixe"
//! lambda_g = 0.1
//!
//! [train]
//! epochs = 200
//!
//! [data]
//! root = "data/bsd300"
//! patch_size = 64
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSpec, Split};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, SsimParams, SsimTerm, SsimWindow, TrainingLoss};
use crate::network::NetworkConfig;
use crate::tensor_ops::AdamConfig;
use crate::trainer::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding `[data] root`.
pub const DATA_ROOT_ENV: &str = "DSR_DATA_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub depth: usize,
    pub base_channels: usize,
    pub scale: usize,
    pub pooling: String,
    pub skips: String,
    pub residual_output: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection::from(&NetworkConfig::default())
    }
}

impl From<&NetworkConfig> for NetworkSection {
    fn from(cfg: &NetworkConfig) -> Self {
        NetworkSection {
            depth: cfg.depth,
            base_channels: cfg.base_channels,
            scale: cfg.scale,
            pooling: cfg.pooling.name().to_string(),
            skips: cfg.skips.name().to_string(),
            residual_output: cfg.residual_output,
        }
    }
}

impl NetworkSection {
    pub fn resolve(&self) -> Result<NetworkConfig> {
        let cfg = NetworkConfig {
            depth: self.depth,
            base_channels: self.base_channels,
            scale: self.scale,
            pooling: self.pooling.parse().map_err(config_err)?,
            skips: self.skips.parse().map_err(config_err)?,
            residual_output: self.residual_output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Standalone TOML text of this section, as stored in checkpoints.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat struct serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    /// `"mse"` or `"mixe"`.
    pub kind: String,
    pub lambda_g: f64,
    pub lambda_s: f64,
    /// `"gaussian11"` or `"uniform8"`.
    pub ssim_window: String,
    /// `"one-minus"` or `"literal"`.
    pub ssim_term: String,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossConfig::default();
        LossSection {
            kind: "mixe".into(),
            lambda_g: d.lambda_g,
            lambda_s: d.lambda_s,
            ssim_window: "gaussian11".into(),
            ssim_term: "one-minus".into(),
        }
    }
}

impl LossSection {
    pub fn resolve(&self) -> Result<TrainingLoss> {
        let window: SsimWindow = self.ssim_window.parse().map_err(config_err)?;
        let ssim_term = match self.ssim_term.as_str() {
            "one-minus" => SsimTerm::OneMinus,
            "literal" => SsimTerm::Literal,
            other => {
                return Err(Error::Config(format!(
                    "unknown ssim_term {other:?} (one-minus, literal)"
                )))
            }
        };
        let cfg = LossConfig {
            lambda_g: self.lambda_g,
            lambda_s: self.lambda_s,
            ssim: SsimParams {
                window,
                ..SsimParams::default()
            },
            ssim_term,
        };
        cfg.validate().map_err(config_err)?;
        match self.kind.as_str() {
            "mse" => Ok(TrainingLoss::Mse),
            "mixe" => Ok(TrainingLoss::Mix(cfg)),
            other => Err(Error::Config(format!("unknown loss {other:?} (mse, mixe)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub halve_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Global gradient-norm clip threshold; off when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            halve_every: t.halve_every,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            grad_clip: t.grad_clip,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub root: PathBuf,
    /// Evaluation images; defaults to the `test` split of `root`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_root: Option<PathBuf>,
    pub hr_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_size: Option<usize>,
    pub shuffle: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            root: PathBuf::from("data"),
            test_root: None,
            hr_size: 224,
            patch_size: None,
            shuffle: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub network: NetworkSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub data: DataSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            network: NetworkSection::default(),
            loss: LossSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
        }
    }
}

/// Command-line values that replace file values when present.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scale: Option<usize>,
    pub pooling: Option<String>,
    pub loss: Option<String>,
    pub lambda_g: Option<f64>,
    pub lambda_s: Option<f64>,
    pub depth: Option<usize>,
    pub base_channels: Option<usize>,
    pub data_root: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the resolved configuration as `config.toml` inside `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Applies command-line overrides, then the dataset root from the
    /// environment when no explicit root override was given.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.train.seed = v;
        }
        if let Some(v) = o.scale {
            self.network.scale = v;
        }
        if let Some(v) = &o.pooling {
            self.network.pooling = v.clone();
        }
        if let Some(v) = &o.loss {
            self.loss.kind = v.clone();
        }
        if let Some(v) = o.lambda_g {
            self.loss.lambda_g = v;
        }
        if let Some(v) = o.lambda_s {
            self.loss.lambda_s = v;
        }
        if let Some(v) = o.depth {
            self.network.depth = v;
        }
        if let Some(v) = o.base_channels {
            self.network.base_channels = v;
        }
        match &o.data_root {
            Some(root) => self.data.root = root.clone(),
            None => {
                if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
                    self.data.root = PathBuf::from(root);
                }
            }
        }
    }

    pub fn network(&self) -> Result<NetworkConfig> {
        self.network.resolve()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            halve_every: t.halve_every,
            adam: AdamConfig {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            loss: self.loss.resolve()?,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            grad_clip: t.grad_clip,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn dataset(&self, root: PathBuf, split: Split, train: bool) -> Result<DatasetSpec> {
        let net = self.network()?;
        let spec = DatasetSpec {
            root,
            split,
            scale: net.scale,
            hr_size: self.data.hr_size,
            patch_size: if train { self.data.patch_size } else { None },
            shuffle: train && self.data.shuffle,
        };
        spec.validate()?;
        let side = spec.patch_size.unwrap_or(spec.hr_size);
        if !side.is_multiple_of(net.spatial_multiple()) {
            return Err(Error::Config(format!(
                "image side {side} not divisible by 2^depth = {}",
                net.spatial_multiple()
            )));
        }
        Ok(spec)
    }

    pub fn train_dataset(&self) -> Result<DatasetSpec> {
        self.dataset(self.data.root.clone(), Split::Train, true)
    }

    pub fn test_dataset(&self) -> Result<DatasetSpec> {
        match &self.data.test_root {
            Some(root) => self.dataset(root.clone(), Split::Test, false),
            None => self.dataset(self.data.root.clone(), Split::Test, false),
        }
    }

    /// Resolves every section, reporting the first invalid value.
    pub fn validate(&self) -> Result<()> {
        self.network()?;
        self.train_config()?;
        self.train_dataset()?;
        Ok(())
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
