//! Loading a configured workspace and running one training regime end to
//! end: train, restore best weights, evaluate, write the run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{ImageStore, Split, TaskDatasets};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsTable};
use crate::model::checkpoint::Checkpoint;
use crate::model::encoder::PatchEncoder;
use crate::model::SocialFusion;
use crate::tasks::{SocialTask, TaskRegistry};
use crate::train::{train, Regime, TrainData, TrainSummary};

/// Config, datasets, cached encoder features and the initial model.
pub struct Workspace {
    pub config: RunConfig,
    pub registry: Arc<TaskRegistry>,
    pub datasets: TaskDatasets,
    pub store: ImageStore,
    base: SocialFusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: TrainSummary,
    pub metrics: MetricsTable,
    pub train_metrics: Option<MetricsTable>,
}

impl Workspace {
    /// Loads the manifests of `tasks` (all configured tasks when `None`).
    pub fn open(config: RunConfig, tasks: Option<&[SocialTask]>) -> Result<Self> {
        let registry = Arc::new(TaskRegistry::builtin());
        let manifests = config.manifests();
        if let Some(wanted) = tasks {
            for t in wanted {
                if !manifests.iter().any(|(m, _)| m == t) {
                    return Err(Error::config(format!("at `data.manifests`: no manifest for {t}")));
                }
            }
        }
        let paths: Vec<PathBuf> = manifests
            .into_iter()
            .filter(|(t, _)| tasks.is_none_or(|w| w.contains(t)))
            .map(|(_, p)| p)
            .collect();
        let datasets = TaskDatasets::load(&paths, &registry)?;
        let encoder = Arc::new(PatchEncoder::new(&config.model.encoder)?);
        let base = SocialFusion::with_encoder(&config.model, registry.clone(), encoder.clone())?;
        Ok(Self {
            config,
            registry,
            datasets,
            store: ImageStore::new(encoder),
            base,
        })
    }

    /// A fresh copy of the model at initialization.
    pub fn model(&self) -> SocialFusion {
        self.base.clone()
    }

    /// Model with a saved checkpoint applied.
    pub fn load_checkpoint(&self, path: &Path) -> Result<SocialFusion> {
        let mut m = self.model();
        Checkpoint::load(path)?.apply(&mut m)?;
        Ok(m)
    }

    pub fn data(&self) -> TrainData<'_> {
        TrainData {
            datasets: &self.datasets,
            store: &self.store,
        }
    }

    pub fn evaluate(&self, model: &SocialFusion, tasks: &[SocialTask], split: Split) -> Result<MetricsTable> {
        evaluate(
            model,
            &self.datasets,
            &self.store,
            tasks,
            self.config.eval.options(split),
        )
    }

    /// Trains `regime` into `dir` and evaluates the best-validation weights.
    pub fn run(&self, regime: &Regime, dir: &Path) -> Result<RunOutcome> {
        self.run_with_epochs(regime, dir, None)
    }

    pub fn run_with_epochs(&self, regime: &Regime, dir: &Path, epochs: Option<usize>) -> Result<RunOutcome> {
        let tasks = regime.tasks();
        for t in &tasks {
            if t.task_ids()
                .iter()
                .all(|&id| self.datasets.get(id, Split::Train).is_empty())
            {
                return Err(Error::config(format!(
                    "regime {regime} needs {t}, which has no training data"
                )));
            }
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut snapshot = self.config.clone();
        snapshot.regime = Some(regime.clone());
        let mut tc = self.config.train_config();
        if let Some(e) = epochs {
            tc.epochs = e;
            snapshot.train.epochs = e;
        }
        write(&dir.join("config.toml"), &snapshot.to_toml()?)?;

        let mut model = self.model();
        let summary = train(&mut model, self.data(), regime, &tc, Some(dir))?;
        let metrics = self.evaluate(&model, &tasks, self.config.eval.split)?;
        metrics.save(&dir.join("metrics.json"))?;
        let train_metrics = if self.config.eval.train_metrics {
            let m = self.evaluate(&model, &tasks, Split::Train)?;
            m.save(&dir.join("metrics_train.json"))?;
            Some(m)
        } else {
            None
        };
        Ok(RunOutcome {
            dir: dir.to_path_buf(),
            summary,
            metrics,
            train_metrics,
        })
    }
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
