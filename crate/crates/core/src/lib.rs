//! Joint weight and activation pruning.
//!
//! Networks carry static magnitude masks on their weights and dynamic
//! per-sample top-k masks on hidden activations. [`pipeline`] drives the
//! sensitivity sweep, joint finetuning and evaluation; [`metrics`] counts
//! the multiply-accumulates that survive both kinds of sparsity.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod kernels;
pub mod layer;
pub mod metrics;
pub mod models;
pub mod net;
pub mod optim;
pub mod pipeline;
pub mod sparsity;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{DatasetKind, ExperimentConfig};
pub use data::{Dataset, Role};
pub use error::{Error, Result};
pub use layer::{ConvGeometry, LayerSpec, PoolGeometry};
pub use metrics::{CsvReport, LayerMacs, MacReport, SpeedupRecord};
pub use models::ModelKind;
pub use net::{ForwardPass, LayerParams, LossBreakdown, Masking, Mode, Network};
pub use optim::{Optimizer, OptimizerConfig};
pub use pipeline::{EvalMode, EvalResult, History, SensitivityCurve, TrainConfig};
pub use sparsity::{ActivationMask, SelectionMode, WeightMask, WinnerRateConfig};
pub use tensor::{Scalar, Tensor};
