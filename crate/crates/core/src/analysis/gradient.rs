use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{BatchContext, BatchKind, ImageStore, ManifestRecord, SampleTarget, Split, TaskDatasets};
use crate::error::{Error, Result};
use crate::model::params::flatten;
use crate::model::SocialFusion;
use crate::tasks::{OutputMode, SocialTask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcdConfig {
    /// Samples per accumulation step.
    pub micro_batch: usize,
    /// Use at most this many training records per task (all when unset).
    pub max_samples: Option<usize>,
    pub split: Split,
}

impl Default for GcdConfig {
    fn default() -> Self {
        Self {
            micro_batch: 16,
            max_samples: None,
            split: Split::Train,
        }
    }
}

impl GcdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.micro_batch == 0 || self.max_samples == Some(0) {
            return Err(Error::config(
                "at `gcd`: micro_batch and max_samples must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Flattened gradient of one task's full-dataset loss over every trainable
/// tensor, in parameter-set order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    pub task: String,
    pub values: Vec<f64>,
    /// Names and shapes of the parameters, for comparability checks.
    pub fingerprint: String,
}

impl GradientVector {
    pub fn new(task: impl Into<String>, values: Vec<f64>, fingerprint: impl Into<String>) -> Self {
        Self {
            task: task.into(),
            values,
            fingerprint: fingerprint.into(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// `1 - cos` of the angle between two task gradients, in `[0, 2]`.
pub fn gcd(a: &GradientVector, b: &GradientVector) -> Result<f64> {
    if a.fingerprint != b.fingerprint || a.values.len() != b.values.len() {
        return Err(Error::Comparability(format!(
            "{} and {} were taken over different parameter sets",
            a.task, b.task
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    for (g, n) in [(a, na), (b, nb)] {
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::DegenerateGradient(format!(
                "gradient of {} has norm {n}",
                g.task
            )));
        }
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(1.0 - (dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Gradient of the mean loss over `records` (one task's samples) at the
/// model's current parameters, accumulated over micro-batches. Text losses
/// are weighted by target-token count so the result equals the gradient of
/// one batch holding every record. The heatmap loss enters unweighted.
pub fn task_gradient(
    model: &SocialFusion,
    store: &ImageStore,
    datasets: &TaskDatasets,
    name: &str,
    records: &[&ManifestRecord],
    micro_batch: usize,
) -> Result<GradientVector> {
    if records.is_empty() {
        return Err(Error::input(format!("no records to take the {name} gradient over")));
    }
    let ctx = BatchContext {
        datasets,
        registry: model.registry(),
        store,
        heatmap_shape: model.heatmap_shape(),
        sigma: model.config().heatmap_sigma,
    };
    let weight_of = |r: &ManifestRecord| -> Result<f64> {
        match r.task.output_mode() {
            OutputMode::Heatmap => Ok(1.0),
            OutputMode::Text => {
                let SampleTarget::Label(l) = ctx.sample(r)?.target else {
                    unreachable!("text records carry labels")
                };
                Ok(model.codec(r.task)?.target(l).len() as f64)
            }
        }
    };
    let weights: Vec<f64> = records.iter().map(|r| weight_of(r)).collect::<Result<_>>()?;
    let total: f64 = weights.iter().sum();
    let mut acc: Option<Vec<ndarray::Array2<f64>>> = None;
    for (chunk, w) in records
        .chunks(micro_batch.max(1))
        .zip(weights.chunks(micro_batch.max(1)))
    {
        let batch = ctx.collate(BatchKind::Text, chunk)?;
        let text = batch.text_examples();
        let heat = batch.heatmap_examples();
        if !text.is_empty() && !heat.is_empty() {
            return Err(Error::input(format!(
                "{name}: gradient records mix text and heatmap targets"
            )));
        }
        let (_, grads) = model.loss_and_grads(&text, &heat, 1.0)?;
        let share = w.iter().sum::<f64>() / total;
        match acc.as_mut() {
            None => acc = Some(grads.into_iter().map(|g| g * share).collect()),
            Some(a) => {
                for (a, g) in a.iter_mut().zip(grads) {
                    a.scaled_add(share, &g);
                }
            }
        }
    }
    let values = flatten(&acc.expect("at least one micro-batch"));
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient for {name}")));
    }
    Ok(GradientVector::new(name, values, model.params().fingerprint()))
}

/// Pairwise cosine and GCD over tasks, with the mean over unordered pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictMatrix {
    pub tasks: Vec<String>,
    pub cos: Vec<Vec<f64>>,
    pub gcd: Vec<Vec<f64>>,
    pub aggregate: f64,
}

impl ConflictMatrix {
    pub fn from_gradients(grads: &[GradientVector]) -> Result<Self> {
        let n = grads.len();
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = gcd(&grads[i], &grads[j])?;
                g[i][j] = v;
                g[j][i] = v;
            }
        }
        let pairs = n * n.saturating_sub(1) / 2;
        let aggregate = if pairs == 0 {
            0.0
        } else {
            (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .map(|(i, j)| g[i][j])
                .sum::<f64>()
                / pairs as f64
        };
        Ok(Self {
            tasks: grads.iter().map(|x| x.task.clone()).collect(),
            cos: g.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect(),
            gcd: g,
            aggregate,
        })
    }

    /// GCD matrix rows followed by an `aggregate` row.
    pub fn to_csv(&self) -> String {
        let mut s = format!("task,{}\n", self.tasks.join(","));
        for (t, row) in self.tasks.iter().zip(&self.gcd) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{t},{}", cells.join(","));
        }
        let _ = writeln!(s, "aggregate,{}", self.aggregate);
        s
    }
}

/// Per-task gradients at the model's current parameters and their conflict
/// matrix. PISC's gradient covers the union of its two subtasks.
pub fn conflict_matrix(
    model: &SocialFusion,
    store: &ImageStore,
    datasets: &TaskDatasets,
    tasks: &[SocialTask],
    config: &GcdConfig,
) -> Result<(Vec<GradientVector>, ConflictMatrix)> {
    let mut grads = Vec::new();
    for &t in tasks {
        let mut records: Vec<&ManifestRecord> = Vec::new();
        for &id in t.task_ids() {
            let recs = datasets.get(id, config.split);
            let take = config.max_samples.unwrap_or(recs.len()).min(recs.len());
            records.extend(&recs[..take]);
        }
        grads.push(task_gradient(
            model,
            store,
            datasets,
            t.display_name(),
            &records,
            config.micro_batch,
        )?);
    }
    let m = ConflictMatrix::from_gradients(&grads)?;
    Ok((grads, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> GradientVector {
        GradientVector::new("t", x.to_vec(), "fp")
    }

    #[test]
    fn hand_cases() {
        assert!((gcd(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap() - 0.29289).abs() < 1e-5);
        assert!((gcd(&v(&[1.0, 2.0]), &v(&[-1.0, -2.0])).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(gcd(&v(&[1.0, 0.0]), &v(&[0.0, 3.0])).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            gcd(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::DegenerateGradient(_))
        ));
        let other = GradientVector::new("u", vec![1.0, 0.0], "other");
        assert!(matches!(gcd(&v(&[1.0, 0.0]), &other), Err(Error::Comparability(_))));
    }

    #[test]
    fn matrix_shape_and_aggregate() {
        let g = [v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[-1.0, 0.0])];
        let m = ConflictMatrix::from_gradients(&g).unwrap();
        assert_eq!(m.gcd[0][0], 0.0);
        assert_eq!(m.gcd[0][2], 2.0);
        assert!((m.aggregate - 4.0 / 3.0).abs() < 1e-15);
        assert!(m.to_csv().ends_with(&format!("aggregate,{}\n", m.aggregate)));
    }
}
