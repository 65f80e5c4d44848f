//! Manifests, per-task datasets, the joint epoch sampler and batch
//! collation.

pub mod fixtures;
mod images;
mod manifest;
mod sampler;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

pub use images::{load_image, EncodedImage, ImageStore};
pub use manifest::{load_manifest, manifest_line, ManifestRecord, Split};
pub use sampler::{plan_epoch, BatchKind, JointEpochPlan, PlannedBatch, SampleRef};

use crate::error::{Error, Result};
use crate::model::bbox::BBoxSet;
use crate::model::{HeatmapExample, TextExample, VisualInput};
use crate::tasks::{synth_heatmap, Target, TaskId, TaskRegistry};

/// Records grouped by task and split, in manifest order.
#[derive(Clone, Debug, Default)]
pub struct TaskDatasets {
    groups: BTreeMap<(TaskId, Split), Vec<ManifestRecord>>,
}

impl TaskDatasets {
    pub fn from_records(records: impl IntoIterator<Item = ManifestRecord>) -> Self {
        let mut groups: BTreeMap<(TaskId, Split), Vec<ManifestRecord>> = BTreeMap::new();
        for r in records {
            groups.entry((r.task, r.split)).or_default().push(r);
        }
        Self { groups }
    }

    pub fn load(manifests: &[impl AsRef<Path>], registry: &TaskRegistry) -> Result<Self> {
        let mut all = Vec::new();
        for m in manifests {
            all.extend(load_manifest(m.as_ref(), registry)?);
        }
        Ok(Self::from_records(all))
    }

    pub fn get(&self, task: TaskId, split: Split) -> &[ManifestRecord] {
        self.groups.get(&(task, split)).map_or(&[], Vec::as_slice)
    }

    /// Keeps only the given tasks.
    pub fn restrict(&self, tasks: &[TaskId]) -> Self {
        Self {
            groups: self
                .groups
                .iter()
                .filter(|((t, _), _)| tasks.contains(t))
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
        }
    }

    pub fn tasks(&self) -> Vec<TaskId> {
        let mut t: Vec<TaskId> = self.groups.keys().map(|(t, _)| *t).collect();
        t.dedup();
        t
    }

    /// Training-set sizes for `tasks`; missing or empty sets are config errors.
    pub fn train_sizes(&self, tasks: &[TaskId]) -> Result<Vec<(TaskId, usize)>> {
        tasks
            .iter()
            .map(|&t| match self.get(t, Split::Train).len() {
                0 => Err(Error::config(format!("no training records for {t}"))),
                n => Ok((t, n)),
            })
            .collect()
    }

    /// Evaluation records: the requested split, falling back to test when a
    /// task has no validation records.
    pub fn eval_split(&self, task: TaskId, split: Split) -> (&[ManifestRecord], Split) {
        let recs = self.get(task, split);
        if recs.is_empty() && split == Split::Val {
            (self.get(task, Split::Test), Split::Test)
        } else {
            (recs, split)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SampleTarget {
    /// Index into the task's label list.
    Label(usize),
    /// Synthesized training heatmap and the points it was built from.
    Heatmap { map: Array2<f64>, points: Vec<(f64, f64)> },
}

#[derive(Clone, Debug)]
pub struct BatchSample {
    pub task: TaskId,
    pub image: EncodedImage,
    pub boxes: BBoxSet,
    pub target: SampleTarget,
}

impl BatchSample {
    pub fn input(&self) -> VisualInput<'_> {
        VisualInput {
            features: &self.image.features,
            boxes: &self.boxes,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub kind: BatchKind,
    pub samples: Vec<BatchSample>,
}

impl Batch {
    pub fn text_examples(&self) -> Vec<TextExample<'_>> {
        self.samples
            .iter()
            .filter_map(|s| match s.target {
                SampleTarget::Label(label) => Some(TextExample {
                    task: s.task,
                    input: s.input(),
                    label,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn heatmap_examples(&self) -> Vec<HeatmapExample<'_>> {
        self.samples
            .iter()
            .filter_map(|s| match &s.target {
                SampleTarget::Heatmap { map, .. } => Some(HeatmapExample {
                    input: s.input(),
                    target: map,
                }),
                _ => None,
            })
            .collect()
    }
}

/// Everything needed to turn record references into model-ready samples.
pub struct BatchContext<'a> {
    pub datasets: &'a TaskDatasets,
    pub registry: &'a TaskRegistry,
    pub store: &'a ImageStore,
    pub heatmap_shape: (usize, usize),
    pub sigma: f64,
}

impl BatchContext<'_> {
    /// Collates one record. Multi-point gaze records (evaluation splits)
    /// train on their first point.
    pub fn sample(&self, record: &ManifestRecord) -> Result<BatchSample> {
        let image = self.store.get(&record.image)?;
        let target = match &record.target {
            Target::Label(l) => {
                let spec = self.registry.get(record.task)?;
                let idx = spec
                    .label_index(l)
                    .ok_or_else(|| Error::InvalidTarget(format!("{}: unknown label {l:?}", record.task)))?;
                SampleTarget::Label(idx)
            }
            Target::Points(p) => {
                let (h, w) = self.heatmap_shape;
                SampleTarget::Heatmap {
                    map: synth_heatmap(&p[..1], h, w, self.sigma)?,
                    points: p.clone(),
                }
            }
        };
        Ok(BatchSample {
            task: record.task,
            image,
            boxes: record.bboxes.clone(),
            target,
        })
    }

    pub fn collate(&self, kind: BatchKind, records: &[&ManifestRecord]) -> Result<Batch> {
        Ok(Batch {
            kind,
            samples: records.iter().map(|r| self.sample(r)).collect::<Result<_>>()?,
        })
    }
}

/// Collates batch `index` of `plan` from the training split.
pub fn fetch_batch(plan: &JointEpochPlan, index: usize, ctx: &BatchContext<'_>) -> Result<Batch> {
    let planned = plan
        .batches
        .get(index)
        .ok_or_else(|| Error::input(format!("batch {index} outside plan of {}", plan.len())))?;
    let records: Vec<&ManifestRecord> = planned
        .items
        .iter()
        .map(|s| {
            ctx.datasets
                .get(s.task, Split::Train)
                .get(s.index)
                .ok_or_else(|| Error::input(format!("{} has no training record {}", s.task, s.index)))
        })
        .collect::<Result<_>>()?;
    ctx.collate(planned.kind, &records)
}
