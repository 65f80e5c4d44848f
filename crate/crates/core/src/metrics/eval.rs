use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{accuracy, gaze_auc, gaze_l2, mean_average_precision, ClassificationEval, GazeSample};
use crate::data::{BatchContext, BatchKind, ImageStore, SampleTarget, Split, TaskDatasets};
use crate::error::{Error, Result};
use crate::model::{InferenceSession, SocialFusion};
use crate::tasks::{OutputMode, SocialTask, TaskId};

/// `task -> metric -> value`, keyed by upper-case task names.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricsTable(pub BTreeMap<String, BTreeMap<String, f64>>);

impl MetricsTable {
    pub fn get(&self, task: SocialTask, metric: &str) -> Option<f64> {
        self.0.get(task.as_str())?.get(metric).copied()
    }

    pub fn insert(&mut self, task: SocialTask, metric: &str, value: f64) {
        self.0
            .entry(task.as_str().to_string())
            .or_default()
            .insert(metric.to_string(), value);
    }

    pub fn remove(&mut self, task: SocialTask) {
        self.0.remove(task.as_str());
    }

    /// Adds every entry of `other`, overwriting on collision.
    pub fn merge(&mut self, other: &MetricsTable) {
        for (task, metrics) in &other.0 {
            let dst = self.0.entry(task.clone()).or_default();
            for (m, v) in metrics {
                dst.insert(m.clone(), *v);
            }
        }
    }

    pub fn tasks(&self) -> Vec<SocialTask> {
        SocialTask::ALL
            .into_iter()
            .filter(|t| self.0.contains_key(t.as_str()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub split: Split,
    pub batch_size: usize,
    /// Chebyshev radius of the positive region for gaze AUC.
    pub auc_radius: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: Split::Val,
            batch_size: 32,
            auc_radius: 0,
        }
    }
}

fn metric_names(task: TaskId) -> (&'static str, &'static str) {
    match task {
        TaskId::PiscDomain => ("Domain mAP", "Domain Acc"),
        TaskId::PiscRelation => ("Relation mAP", "Relation Acc"),
        _ => ("mAP", "Acc"),
    }
}

/// Scores every record of the requested split for `tasks`. A task without
/// validation records is evaluated on its test split.
pub fn evaluate(
    model: &SocialFusion,
    datasets: &TaskDatasets,
    store: &ImageStore,
    tasks: &[SocialTask],
    options: EvalOptions,
) -> Result<MetricsTable> {
    let session = model.session()?;
    let ctx = BatchContext {
        datasets,
        registry: model.registry(),
        store,
        heatmap_shape: model.heatmap_shape(),
        sigma: model.config().heatmap_sigma,
    };
    let mut table = MetricsTable::default();
    for &social in tasks {
        for &task in social.task_ids() {
            let (records, used) = datasets.eval_split(task, options.split);
            if records.is_empty() {
                log::warn!("{task} has no {} records; skipped", options.split);
                continue;
            }
            if used != options.split {
                log::info!("{task}: no {} split, evaluating on {used}", options.split);
            }
            let batch = options.batch_size.max(1);
            match task.output_mode() {
                OutputMode::Text => {
                    let eval = classify(&session, &ctx, task, records, batch)?;
                    let (m, a) = metric_names(task);
                    table.insert(social, m, mean_average_precision(&eval));
                    table.insert(social, a, accuracy(&eval));
                }
                OutputMode::Heatmap => {
                    let samples = gaze(&session, &ctx, records, batch)?;
                    let l2 = gaze_l2(&samples);
                    table.insert(social, "Min L2", l2.min_l2);
                    table.insert(social, "Avg L2", l2.avg_l2);
                    if let Some(auc) = gaze_auc(&samples, options.auc_radius) {
                        table.insert(social, "AUC", auc);
                    }
                }
            }
        }
    }
    Ok(table)
}

fn classify(
    session: &InferenceSession<'_>,
    ctx: &BatchContext<'_>,
    task: TaskId,
    records: &[crate::data::ManifestRecord],
    batch: usize,
) -> Result<ClassificationEval> {
    let mut rows = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch) {
        let refs: Vec<_> = chunk.iter().collect();
        let b = ctx.collate(BatchKind::Text, &refs)?;
        let inputs: Vec<_> = b.samples.iter().map(|s| s.input()).collect();
        for (s, (_, scores)) in b.samples.iter().zip(session.score_text_batch(task, &inputs)?) {
            let SampleTarget::Label(l) = s.target else {
                return Err(Error::InvalidTarget(format!("{task}: expected a label target")));
            };
            rows.push(scores);
            labels.push(l);
        }
    }
    Ok(ClassificationEval::from_rows(&rows, labels))
}

fn gaze(
    session: &InferenceSession<'_>,
    ctx: &BatchContext<'_>,
    records: &[crate::data::ManifestRecord],
    batch: usize,
) -> Result<Vec<GazeSample>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch) {
        let refs: Vec<_> = chunk.iter().collect();
        let b = ctx.collate(BatchKind::Heatmap, &refs)?;
        let inputs: Vec<_> = b.samples.iter().map(|s| s.input()).collect();
        for (s, scores) in b.samples.iter().zip(session.predict_heatmaps(&inputs)?) {
            let SampleTarget::Heatmap { points, .. } = &s.target else {
                return Err(Error::InvalidTarget("gaze records need point targets".into()));
            };
            out.push(GazeSample {
                heatmap: scores.mapv(|x| 1.0 / (1.0 + (-x).exp())),
                points: points.clone(),
            });
        }
    }
    Ok(out)
}
