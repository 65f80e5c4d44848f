use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{clip_global_norm, AdamW, LrSchedule, Regime, TrainConfig};
use crate::data::{fetch_batch, plan_epoch, Batch, BatchContext, BatchKind, ImageStore, Split, TaskDatasets};
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::{FrozenChecksums, InferenceSession, SocialFusion};
use crate::tasks::{OutputMode, TaskId};

/// Training inputs shared by every run over the same data.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub datasets: &'a TaskDatasets,
    pub store: &'a ImageStore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub batch: usize,
    pub kind: BatchKind,
    pub lr: f64,
    pub total: f64,
    pub l_llm: f64,
    pub l_heatmap: f64,
    pub grad_norm: f64,
}

/// Validation loss of one task: token cross-entropy for text tasks, pixel
/// BCE for the heatmap task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskLoss {
    pub task: TaskId,
    pub split: crate::data::Split,
    pub loss: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub val: Vec<TaskLoss>,
    /// Mean text loss plus lambda times the heatmap loss.
    pub val_total: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub regime: Regime,
    pub tasks: Vec<TaskId>,
    pub lambda: f64,
    pub steps_per_epoch: usize,
    pub total_steps: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
    pub frozen_before: FrozenChecksums,
    pub frozen_after: FrozenChecksums,
    #[serde(skip)]
    pub steps: Vec<StepRecord>,
}

struct RunFiles {
    loss: BufWriter<File>,
    val: BufWriter<File>,
    checkpoints: std::path::PathBuf,
}

impl RunFiles {
    fn create(dir: &Path) -> Result<Self> {
        let checkpoints = dir.join("checkpoints");
        fs::create_dir_all(&checkpoints).map_err(|e| Error::io(&checkpoints, e))?;
        let open = |name: &str, header: &str| -> Result<BufWriter<File>> {
            let p = dir.join(name);
            let mut w = BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?);
            writeln!(w, "{header}").map_err(|e| Error::io(&p, e))?;
            Ok(w)
        };
        Ok(Self {
            loss: open("loss.csv", "step,epoch,batch,kind,lr,total,l_llm,l_heatmap,grad_norm")?,
            val: open("val.csv", "epoch,task,split,loss,samples")?,
            checkpoints,
        })
    }

    fn flush(&mut self) -> Result<()> {
        self.loss.flush().map_err(|e| Error::io("loss.csv", e))?;
        self.val.flush().map_err(|e| Error::io("val.csv", e))
    }
}

fn describe(batch: &Batch, plan: &crate::data::JointEpochPlan, index: usize) -> String {
    let items: Vec<String> = plan.batches[index]
        .items
        .iter()
        .map(|s| format!("{}#{}", s.task, s.index))
        .collect();
    format!(
        "{:?} batch of {} [{}]",
        batch.kind,
        batch.samples.len(),
        items.join(", ")
    )
}

/// Trains the model's trainable groups under `regime`. After the last
/// epoch the best-validation parameters are restored when validation ran.
///
/// With `out` set, writes `loss.csv`, `val.csv`, `run.json` and
/// `checkpoints/{epoch-NNNN,best,last}.json` there.
pub fn train(
    model: &mut SocialFusion,
    data: TrainData<'_>,
    regime: &Regime,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainSummary> {
    config.validate()?;
    let tasks = regime.task_ids();
    let lambda = config.lambda_for(regime.text_task_count());
    let sizes = data.datasets.train_sizes(&tasks)?;
    let steps_per_epoch = plan_epoch(&sizes, config.batch_size, config.seed, 0)?.len();
    let total_steps = steps_per_epoch * config.epochs;
    let schedule = LrSchedule::new(config.lr, config.warmup_steps, total_steps);
    let mut opt = AdamW::new(model.params().values(), config.weight_decay);
    let mut files = out.map(RunFiles::create).transpose()?;
    let frozen_before = model.frozen_checksums();
    let registry = model.registry_arc();
    let (heatmap_shape, sigma) = (model.heatmap_shape(), model.config().heatmap_sigma);

    let mut steps = Vec::with_capacity(total_steps);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, crate::model::params::ParamSet)> = None;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let plan = plan_epoch(&sizes, config.batch_size, config.seed, epoch as u64)?;
        let ctx = BatchContext {
            datasets: data.datasets,
            registry: &registry,
            store: data.store,
            heatmap_shape,
            sigma,
        };
        let mut epoch_loss = 0.0;
        for index in 0..plan.len() {
            let batch = fetch_batch(&plan, index, &ctx)?;
            let (loss, mut grads) = model.loss_and_grads(&batch.text_examples(), &batch.heatmap_examples(), lambda)?;
            if !loss.total.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::Numeric(format!(
                    "non-finite loss {} at epoch {epoch}, batch {index}: {}",
                    loss.total,
                    describe(&batch, &plan, index)
                )));
            }
            step += 1;
            let grad_norm = clip_global_norm(&mut grads, config.grad_clip);
            let lr = schedule.lr(step);
            opt.step(model.params_mut().values_mut(), &grads, lr);
            epoch_loss += loss.total;
            let rec = StepRecord {
                step,
                epoch,
                batch: index,
                kind: batch.kind,
                lr,
                total: loss.total,
                l_llm: loss.l_llm,
                l_heatmap: loss.l_heatmap,
                grad_norm,
            };
            if let Some(f) = files.as_mut() {
                writeln!(
                    f.loss,
                    "{},{},{},{},{},{},{},{},{}",
                    rec.step,
                    rec.epoch,
                    rec.batch,
                    if rec.kind == BatchKind::Text { "text" } else { "heatmap" },
                    rec.lr,
                    rec.total,
                    rec.l_llm,
                    rec.l_heatmap,
                    rec.grad_norm
                )
                .map_err(|e| Error::io("loss.csv", e))?;
            }
            steps.push(rec);
        }

        let (val, val_total) = if config.validate {
            validation_loss(model, data, &tasks, config.batch_size, lambda)?
        } else {
            (Vec::new(), None)
        };
        log::info!(
            "{regime} epoch {}/{}: train {:.5}{}",
            epoch + 1,
            config.epochs,
            epoch_loss / plan.len() as f64,
            val_total.map(|v| format!(", val {v:.5}")).unwrap_or_default()
        );
        if let Some(v) = val_total {
            if best.as_ref().is_none_or(|b| v < b.1) {
                best = Some((epoch, v, model.params().clone()));
                if let Some(f) = files.as_ref() {
                    Checkpoint::capture(model, step as u64).save(&f.checkpoints.join("best.json"))?;
                }
            }
        }
        if let Some(f) = files.as_mut() {
            for t in &val {
                writeln!(f.val, "{epoch},{},{},{},{}", t.task, t.split, t.loss, t.samples)
                    .map_err(|e| Error::io("val.csv", e))?;
            }
            f.flush()?;
            if config.epoch_checkpoints {
                Checkpoint::capture(model, step as u64)
                    .save(&f.checkpoints.join(format!("epoch-{:04}.json", epoch + 1)))?;
            }
        }
        epochs.push(EpochRecord {
            epoch,
            mean_train_loss: epoch_loss / plan.len() as f64,
            val,
            val_total,
        });
    }

    if let Some(f) = files.as_ref() {
        Checkpoint::capture(model, step as u64).save(&f.checkpoints.join("last.json"))?;
    }
    let (best_epoch, best_val) = match best {
        Some((e, v, params)) => {
            *model.params_mut() = params;
            (Some(e), Some(v))
        }
        None => (None, None),
    };
    let summary = TrainSummary {
        regime: regime.clone(),
        tasks,
        lambda,
        steps_per_epoch,
        total_steps,
        epochs,
        best_epoch,
        best_val,
        frozen_before,
        frozen_after: model.frozen_checksums(),
        steps,
    };
    if let Some(dir) = out {
        let p = dir.join("run.json");
        fs::write(&p, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(&p, e))?;
    }
    Ok(summary)
}

/// Per-task loss on the validation split (test when a task has none).
pub(crate) fn validation_loss(
    model: &SocialFusion,
    data: TrainData<'_>,
    tasks: &[TaskId],
    batch_size: usize,
    lambda: f64,
) -> Result<(Vec<TaskLoss>, Option<f64>)> {
    let session = model.session()?;
    let ctx = BatchContext {
        datasets: data.datasets,
        registry: model.registry(),
        store: data.store,
        heatmap_shape: model.heatmap_shape(),
        sigma: model.config().heatmap_sigma,
    };
    let mut out = Vec::new();
    for &task in tasks {
        let (records, split) = data.datasets.eval_split(task, Split::Val);
        if records.is_empty() {
            continue;
        }
        let loss = task_loss(&session, &ctx, task, records, batch_size)?;
        out.push(TaskLoss {
            task,
            split,
            loss,
            samples: records.len(),
        });
    }
    let text: Vec<f64> = out
        .iter()
        .filter(|t| t.task.output_mode() == OutputMode::Text)
        .map(|t| t.loss)
        .collect();
    let heat: f64 = out
        .iter()
        .filter(|t| t.task.output_mode() == OutputMode::Heatmap)
        .map(|t| t.loss)
        .sum();
    let total = if out.is_empty() {
        None
    } else {
        let text_mean = if text.is_empty() {
            0.0
        } else {
            text.iter().sum::<f64>() / text.len() as f64
        };
        Some(text_mean + lambda * heat)
    };
    Ok((out, total))
}

fn task_loss(
    session: &InferenceSession<'_>,
    ctx: &BatchContext<'_>,
    task: TaskId,
    records: &[crate::data::ManifestRecord],
    batch_size: usize,
) -> Result<f64> {
    let kind = match task.output_mode() {
        OutputMode::Text => BatchKind::Text,
        OutputMode::Heatmap => BatchKind::Heatmap,
    };
    let mut sum = 0.0;
    for chunk in records.chunks(batch_size.max(1)) {
        let refs: Vec<_> = chunk.iter().collect();
        let batch = ctx.collate(kind, &refs)?;
        let l = session.loss(&batch.text_examples(), &batch.heatmap_examples(), 1.0)?;
        sum += chunk.len() as f64 * if kind == BatchKind::Text { l.l_llm } else { l.l_heatmap };
    }
    Ok(sum / records.len() as f64)
}
