use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ImageStore, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::experiment::Workspace;
use crate::metrics::{accuracy, mean_average_precision, ClassificationEval};
use crate::model::encoder::VisualFeatureGrid;
use crate::tasks::{OutputMode, Target, TaskSpec};
use crate::train::{AdamW, LrSchedule};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Every patch feature concatenated (`Gh * Gw * d_v` inputs).
    #[default]
    Flatten,
    /// Mean over patches (`d_v` inputs).
    MeanPool,
}

impl FeatureSource {
    pub fn extract(self, grid: &VisualFeatureGrid) -> Vec<f64> {
        match self {
            FeatureSource::Flatten => grid.values.iter().copied().collect(),
            FeatureSource::MeanPool => grid.to_rows().mean_axis(Axis(0)).expect("non-empty grid").to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub features: FeatureSource,
    pub lr: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            features: FeatureSource::Flatten,
            lr: 1e-2,
            warmup_steps: 10,
            epochs: 50,
            batch_size: 32,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 || !(self.weight_decay >= 0.0) {
            return Err(Error::config("at `probe`: lr, epochs and batch_size must be positive"));
        }
        Ok(())
    }
}

/// Affine classifier `x W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearProbe {
    pub fn scores(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub probe: LinearProbe,
    pub train_acc: f64,
    pub val_map: f64,
    pub val_acc: f64,
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

/// Features are standardized with training-split statistics inside the
/// probe, which keeps one learning rate usable across encoders.
fn standardize(train: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = train.mean_axis(Axis(0)).expect("rows");
    let std = train.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    (mean, std)
}

/// Trains a linear softmax classifier on frozen features with AdamW and
/// the warmup-cosine schedule, then reports validation mAP and accuracy.
pub fn train_probe(
    train_x: &Array2<f64>,
    train_y: &[usize],
    val_x: &Array2<f64>,
    val_y: &[usize],
    num_classes: usize,
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    config.validate()?;
    if train_x.nrows() != train_y.len() || val_x.nrows() != val_y.len() || train_x.ncols() != val_x.ncols() {
        return Err(Error::input("probe feature and label counts disagree"));
    }
    let mut seen = vec![false; num_classes];
    for &y in train_y.iter().chain(val_y) {
        if y >= num_classes {
            return Err(Error::input(format!("label {y} outside {num_classes} classes")));
        }
    }
    for &y in train_y {
        seen[y] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::config(format!("class {c} has no training samples")));
    }
    let (mean, std) = standardize(train_x);
    let norm = |x: &Array2<f64>| (x - &mean) / &std;
    let (xt, xv) = (norm(train_x), norm(val_x));

    let d = xt.ncols();
    let mut params = vec![Array2::zeros((d, num_classes)), Array2::zeros((1, num_classes))];
    let mut opt = AdamW::new(&params, config.weight_decay);
    let steps_per_epoch = train_y.len().div_ceil(config.batch_size);
    let schedule = LrSchedule::new(config.lr, config.warmup_steps, steps_per_epoch * config.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_y.len()).collect();
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let xb = xt.select(Axis(0), chunk);
            let mut p = xb.dot(&params[0]) + &params[1];
            softmax_rows(&mut p);
            for (r, &i) in chunk.iter().enumerate() {
                p[[r, train_y[i]]] -= 1.0;
            }
            p /= chunk.len() as f64;
            let gw = xb.t().dot(&p);
            let gb = p.sum_axis(Axis(0)).insert_axis(Axis(0));
            step += 1;
            opt.step(&mut params, &[gw, gb], schedule.lr(step));
        }
    }
    let probe = LinearProbe {
        weight: params[0].clone(),
        bias: params[1].row(0).to_owned(),
    };
    let train_eval = ClassificationEval::new(probe.scores(&xt), train_y.to_vec());
    let val_eval = ClassificationEval::new(probe.scores(&xv), val_y.to_vec());
    Ok(ProbeResult {
        train_acc: accuracy(&train_eval),
        val_map: mean_average_precision(&val_eval),
        val_acc: accuracy(&val_eval),
        probe: LinearProbe {
            // fold the standardization back in so the stored probe acts on raw features
            weight: &probe.weight / &std.clone().insert_axis(Axis(1)),
            bias: &probe.bias - &(&mean / &std).dot(&probe.weight),
        },
    })
}

/// Frozen encoder features and label indices for classification records.
pub fn probe_features(
    store: &ImageStore,
    spec: &TaskSpec,
    records: &[ManifestRecord],
    source: FeatureSource,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut rows = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        let Target::Label(l) = &r.target else {
            return Err(Error::InvalidTask(format!("{} has no class labels to probe", spec.id)));
        };
        labels.push(
            spec.label_index(l)
                .ok_or_else(|| Error::InvalidTarget(format!("{}: unknown label {l:?}", spec.id)))?,
        );
        rows.push(source.extract(&store.get(&r.image)?.features));
    }
    let d = rows.first().map_or(0, Vec::len);
    let flat = rows.into_iter().flatten().collect();
    let x = Array2::from_shape_vec((labels.len(), d), flat).map_err(|e| Error::input(e.to_string()))?;
    Ok((x, labels))
}

/// Validation scores of one task's probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeTaskReport {
    /// Classes with training samples; the probe is fit over these only.
    pub classes: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub val_split: Split,
    pub train_acc: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "Acc")]
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub encoder: String,
    pub features: FeatureSource,
    /// Keyed by task id (`LAM`, `PISC_DOMAIN`, ...).
    pub tasks: BTreeMap<String, ProbeTaskReport>,
}

/// Probes the workspace encoder on every loaded classification task.
/// Labels absent from the training split are dropped on both sides.
pub fn probe_workspace(ws: &Workspace, config: &ProbeConfig) -> Result<ProbeReport> {
    let mut tasks = BTreeMap::new();
    for id in ws.datasets.tasks() {
        if id.output_mode() != OutputMode::Text {
            log::info!("{id}: no class labels, skipped by the probe");
            continue;
        }
        let spec = ws.registry.get(id)?;
        let train = ws.datasets.get(id, Split::Train);
        let (val, val_split) = ws.datasets.eval_split(id, Split::Val);
        if train.is_empty() || val.is_empty() {
            log::warn!("{id}: probe needs train and evaluation records, skipped");
            continue;
        }
        let (tx, ty) = probe_features(&ws.store, spec, train, config.features)?;
        let (vx, vy) = probe_features(&ws.store, spec, val, config.features)?;
        let mut present: Vec<usize> = ty.clone();
        present.sort_unstable();
        present.dedup();
        let remap = |y: usize| present.binary_search(&y).ok();
        let ty: Vec<usize> = ty.iter().map(|&y| remap(y).expect("train label")).collect();
        let keep: Vec<usize> = (0..vy.len()).filter(|&i| remap(vy[i]).is_some()).collect();
        if keep.len() < vy.len() {
            log::warn!(
                "{id}: {} evaluation samples have labels unseen in training",
                vy.len() - keep.len()
            );
        }
        let vx = vx.select(Axis(0), &keep);
        let vy: Vec<usize> = keep.iter().map(|&i| remap(vy[i]).expect("kept")).collect();
        let r = train_probe(&tx, &ty, &vx, &vy, present.len(), config)?;
        tasks.insert(
            id.as_str().to_string(),
            ProbeTaskReport {
                classes: present.len(),
                train_samples: ty.len(),
                val_samples: vy.len(),
                val_split,
                train_acc: r.train_acc,
                map: r.val_map,
                acc: r.val_acc,
            },
        );
    }
    if tasks.is_empty() {
        return Err(Error::config(
            "no classification task with train and evaluation records to probe",
        ));
    }
    Ok(ProbeReport {
        encoder: ws.config.model.encoder.name.clone(),
        features: config.features,
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 3), |(i, j)| {
            let c = if y[i] == 0 { -1.0 } else { 1.0 };
            (if j == 0 { 2.0 * c } else { 0.0 }) + rng.random_range(-0.5..0.5)
        });
        (x, y)
    }

    #[test]
    fn separable_blobs_are_perfect() {
        let (xt, yt) = blobs(100, 1);
        let (xv, yv) = blobs(40, 2);
        let r = train_probe(&xt, &yt, &xv, &yv, 2, &ProbeConfig::default()).unwrap();
        assert_eq!(r.val_acc, 1.0);
        let raw = ClassificationEval::new(r.probe.scores(&xv), yv);
        assert_eq!(accuracy(&raw), 1.0);
    }

    #[test]
    fn absent_class_is_config_error() {
        let (xt, _) = blobs(10, 1);
        let e = train_probe(&xt, &[0; 10], &xt, &[1; 10], 2, &ProbeConfig::default()).unwrap_err();
        assert!(e.is_config_error());
    }
}
