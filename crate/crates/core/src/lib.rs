//! Frozen-encoder vision-language fusion for joint social-perception tasks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod tasks;
pub mod train;

pub use config::RunConfig;
pub use data::{Split, TaskDatasets};
pub use error::{Error, Result};
pub use experiment::{RunOutcome, Workspace};
pub use metrics::{MetricsTable, TransferReport};
pub use model::{ModelConfig, SocialFusion};
pub use tasks::{SocialTask, TaskId, TaskRegistry};
pub use train::{Regime, TrainConfig};
