//! Losses, optimizer, learning-rate schedule, training regimes and the
//! training loop.

mod optim;
mod regime;
mod run;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use optim::{clip_global_norm, AdamW, LrSchedule};
pub use regime::Regime;
pub use run::{train, EpochRecord, StepRecord, TaskLoss, TrainData, TrainSummary};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// Heatmap loss weight. Defaults to one over the number of text tasks.
    pub lambda_heatmap: Option<f64>,
    /// Keep a checkpoint for every epoch in addition to best and last.
    pub epoch_checkpoints: bool,
    /// Compute validation loss after each epoch (needed for best-val).
    pub validate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            warmup_steps: 500,
            batch_size: 32,
            epochs: 3,
            seed: 0,
            weight_decay: 0.01,
            grad_clip: 1.0,
            lambda_heatmap: None,
            epoch_checkpoints: true,
            validate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("train.batch_size and train.epochs must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return Err(Error::config(
                "train.weight_decay and train.grad_clip must be non-negative",
            ));
        }
        if let Some(l) = self.lambda_heatmap {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::config("train.lambda_heatmap must be positive"));
            }
        }
        Ok(())
    }

    /// The configured heatmap weight, or `1 / max(1, text_tasks)`.
    pub fn lambda_for(&self, text_tasks: usize) -> f64 {
        self.lambda_heatmap.unwrap_or(1.0 / text_tasks.max(1) as f64)
    }
}

/// Mean cross-entropy of `logits` rows (`T x V`) against one target token
/// per row.
pub fn loss_text(logits: ArrayView2<'_, f64>, targets: &[usize]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::InvalidTarget("no target tokens".into()));
    }
    if logits.nrows() != targets.len() {
        return Err(Error::input(format!(
            "{} logit rows for {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    let mut sum = 0.0;
    for (row, &t) in logits.rows().into_iter().zip(targets) {
        if t >= row.len() {
            return Err(Error::InvalidTarget(format!(
                "token {t} outside vocabulary of {}",
                row.len()
            )));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        sum += lse - row[t];
    }
    Ok(sum / targets.len() as f64)
}

/// Mean per-pixel binary cross-entropy of `sigmoid(scores)` against soft
/// targets.
pub fn loss_heatmap(scores: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    if scores.dim() != target.dim() {
        return Err(Error::input(format!(
            "heatmap scores {:?} and target {:?} differ in shape",
            scores.dim(),
            target.dim()
        )));
    }
    if scores.is_empty() {
        return Err(Error::input("empty heatmap"));
    }
    let sum: f64 = scores
        .iter()
        .zip(target)
        .map(|(&s, &t)| s.max(0.0) - s * t + (-s.abs()).exp().ln_1p())
        .sum();
    Ok(sum / scores.len() as f64)
}
