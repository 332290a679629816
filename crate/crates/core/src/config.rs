//! Experiment configuration files (TOML).
//!
//! ```toml
//! model = "mlp3"
//!
//! [data]
//! kind = "mnist"
//! dir = "data/mnist"
//!
//! [train]
//! epochs = 12
//! weight_target_density = [0.1, 0.1, 0.2]
//!
//! [prune]
//! winner_rates = [0.12, 0.24, 1.0]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, ChannelStats, Dataset};
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::pipeline::TrainConfig;
use crate::sparsity::WinnerRateConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub dir: PathBuf,
    #[serde(default = "default_val_size")]
    pub val_size: usize,
    /// Use only the first `n` training images (0 = all).
    #[serde(default)]
    pub train_subset: usize,
}

fn default_val_size() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    /// Winner rate per weight layer; empty means "choose from the sensitivity sweep".
    pub winner_rates: Vec<f64>,
    pub tolerable_drop: f64,
    pub rate_grid: Vec<f64>,
    pub downsample_grid: Vec<f64>,
    pub offset_seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            winner_rates: Vec::new(),
            tolerable_drop: 0.005,
            rate_grid: vec![0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.7, 1.0],
            downsample_grid: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            offset_seed: 0,
        }
    }
}

impl PruneConfig {
    pub fn rates(&self) -> Result<Option<WinnerRateConfig>> {
        if self.winner_rates.is_empty() {
            return Ok(None);
        }
        let mut cfg = WinnerRateConfig::from_rates(&self.winner_rates).map_err(|e| Error::Config {
            key: "prune.winner_rates".into(),
            msg: e.to_string(),
        })?;
        cfg.offset_seed = self.offset_seed;
        Ok(Some(cfg))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub inputs: usize,
    pub outputs: usize,
    pub rate: f64,
    pub trials: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            inputs: 4096,
            outputs: 4096,
            rate: 0.1,
            trials: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub prune: PruneConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
            key: "<root>".into(),
            msg: e.to_string(),
        })?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::Config {
                key,
                msg: e.into_inner().message().trim().to_string(),
            }
        })?;
        cfg.train.validate().map_err(|e| match e {
            Error::Config { key, msg } => Error::Config {
                key: format!("train.{key}"),
                msg,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Relative data paths resolve against `base` (normally the config's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        if self.data.dir.is_relative() {
            self.data.dir = base.join(&self.data.dir);
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    /// `(train, val, test)` as used by the pipeline.
    pub fn load_data(&self) -> Result<(Dataset, Dataset, Dataset)> {
        let (mut train, mut test) = match self.data.kind {
            DatasetKind::Mnist => data::load_mnist_dir(&self.data.dir)?,
            DatasetKind::Cifar10 => data::load_cifar10_dir(&self.data.dir)?,
        };
        if self.data.kind == DatasetKind::Cifar10 {
            let stats = ChannelStats::compute(&train)?;
            stats.standardize(&mut train);
            stats.standardize(&mut test);
            let size = self.model.input_shape()[1];
            if size != 32 {
                train = train.center_crop(size)?;
                test = test.center_crop(size)?;
            }
        }
        let (mut tr, val) = train.split_validation(self.data.val_size, self.train.seed)?;
        if self.data.train_subset > 0 {
            tr = tr.head(self.data.train_subset);
        }
        Ok((tr, val, test))
    }
}

/// Stable hash of a configuration text, stored in checkpoints.
pub fn config_hash(text: &str) -> u64 {
    crc32fast::hash(text.as_bytes()) as u64
}
