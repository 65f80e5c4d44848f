use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{OutputMode, TaskId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchKind {
    Text,
    Heatmap,
}

/// Position of one sample inside its task's training set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub task: TaskId,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedBatch {
    pub kind: BatchKind,
    pub items: Vec<SampleRef>,
}

/// One epoch of the joint protocol: every active task undersampled to the
/// smallest task's size, text samples pooled and shuffled across tasks,
/// heatmap batches placed at random positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointEpochPlan {
    pub epoch: u64,
    pub min_size: usize,
    pub samples: BTreeMap<TaskId, Vec<usize>>,
    pub batches: Vec<PlannedBatch>,
}

impl JointEpochPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

/// Plans one epoch over tasks with the given training-set sizes.
pub fn plan_epoch(sizes: &[(TaskId, usize)], batch_size: usize, seed: u64, epoch: u64) -> Result<JointEpochPlan> {
    if sizes.is_empty() {
        return Err(Error::config("no active tasks"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    let mut by_task = BTreeMap::new();
    for &(task, n) in sizes {
        if n == 0 {
            return Err(Error::config(format!("training set of {task} is empty")));
        }
        if by_task.insert(task, n).is_some() {
            return Err(Error::config(format!("task {task} listed twice")));
        }
    }
    let min_size = *by_task.values().min().expect("non-empty");
    let mut rng = epoch_rng(seed, epoch);

    let mut samples = BTreeMap::new();
    for (&task, &n) in &by_task {
        samples.insert(task, index::sample(&mut rng, n, min_size).into_vec());
    }

    let mut text = Vec::new();
    let mut heat = Vec::new();
    for (&task, idx) in &samples {
        let refs = idx.iter().map(|&index| SampleRef { task, index });
        match task.output_mode() {
            OutputMode::Text => text.extend(refs),
            OutputMode::Heatmap => heat.extend(refs),
        }
    }
    text.shuffle(&mut rng);
    let mut text_batches = text.chunks(batch_size).map(|c| PlannedBatch {
        kind: BatchKind::Text,
        items: c.to_vec(),
    });
    let mut heat_batches = heat.chunks(batch_size).map(|c| PlannedBatch {
        kind: BatchKind::Heatmap,
        items: c.to_vec(),
    });
    let mut kinds: Vec<BatchKind> = std::iter::repeat_n(BatchKind::Text, text.len().div_ceil(batch_size))
        .chain(std::iter::repeat_n(BatchKind::Heatmap, heat.len().div_ceil(batch_size)))
        .collect();
    kinds.shuffle(&mut rng);
    let batches = kinds
        .into_iter()
        .map(|k| match k {
            BatchKind::Text => text_batches.next(),
            BatchKind::Heatmap => heat_batches.next(),
        })
        .map(|b| b.expect("one batch per kind slot"))
        .collect();
    Ok(JointEpochPlan {
        epoch,
        min_size,
        samples,
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn three_tasks_give_twelve_batches() {
        let sizes = [(TaskId::Lam, 100), (TaskId::AffectNet, 40), (TaskId::HagridV2, 70)];
        let plan = plan_epoch(&sizes, 10, 1, 0).unwrap();
        assert_eq!(plan.min_size, 40);
        assert_eq!(plan.len(), 12);
        let total: usize = plan.batches.iter().map(|b| b.items.len()).sum();
        assert_eq!(total, 120);
    }

    #[test]
    fn single_task_is_a_shuffled_epoch() {
        let plan = plan_epoch(&[(TaskId::Lam, 25)], 10, 3, 0).unwrap();
        let mut seen: Vec<usize> = plan
            .batches
            .iter()
            .flat_map(|b| b.items.iter().map(|s| s.index))
            .collect();
        assert_eq!(
            plan.batches.iter().map(|b| b.items.len()).collect::<Vec<_>>(),
            vec![10, 10, 5]
        );
        seen.sort();
        assert_eq!(seen, (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn heatmap_batches_are_pure_and_counted() {
        let sizes = [(TaskId::Lam, 50), (TaskId::GazeFollow, 33), (TaskId::PiscDomain, 90)];
        let plan = plan_epoch(&sizes, 8, 5, 2).unwrap();
        let heat: Vec<_> = plan.batches.iter().filter(|b| b.kind == BatchKind::Heatmap).collect();
        assert_eq!(heat.len(), 33usize.div_ceil(8));
        for b in &plan.batches {
            let gaze = b.items.iter().filter(|s| s.task == TaskId::GazeFollow).count();
            assert!(gaze == 0 || gaze == b.items.len());
            assert_eq!(gaze > 0, b.kind == BatchKind::Heatmap);
        }
    }

    #[test]
    fn seeds_and_epochs_change_subsamples() {
        let sizes = [(TaskId::Lam, 1000), (TaskId::AffectNet, 300)];
        let a = plan_epoch(&sizes, 32, 9, 0).unwrap();
        assert_eq!(a, plan_epoch(&sizes, 32, 9, 0).unwrap());
        assert_ne!(
            a.samples[&TaskId::Lam],
            plan_epoch(&sizes, 32, 10, 0).unwrap().samples[&TaskId::Lam]
        );
        assert_ne!(
            a.samples[&TaskId::Lam],
            plan_epoch(&sizes, 32, 9, 1).unwrap().samples[&TaskId::Lam]
        );
        let uniq: HashSet<_> = a.samples[&TaskId::Lam].iter().collect();
        assert_eq!(uniq.len(), 300);
    }

    #[test]
    fn rejects_empty_inputs() {
        assert!(plan_epoch(&[], 4, 0, 0).unwrap_err().is_config_error());
        assert!(plan_epoch(&[(TaskId::Lam, 0)], 4, 0, 0).unwrap_err().is_config_error());
        assert!(plan_epoch(&[(TaskId::Lam, 3)], 0, 0, 0).unwrap_err().is_config_error());
    }
}
