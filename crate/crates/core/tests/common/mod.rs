//! Brute-force oracles and fixture helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use socialfusion_core::data::fixtures::FixtureConfig;
use socialfusion_core::model::backbone::BackboneConfig;
use socialfusion_core::model::encoder::EncoderConfig;
use socialfusion_core::{MetricsTable, ModelConfig, RunConfig, SocialTask, Workspace};

/// 1-based rank of item `i` when sorting by descending score, ties broken
/// by index.
pub fn rank(scores: &[f64], i: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
        .count()
}

/// Mean over positives of precision at that positive's rank.
pub fn oracle_ap(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos: Vec<usize> = (0..scores.len()).filter(|&i| positive[i]).collect();
    if pos.is_empty() {
        return None;
    }
    let sum: f64 = pos
        .iter()
        .map(|&i| {
            let r = rank(scores, i);
            let hits = pos.iter().filter(|&&j| rank(scores, j) <= r).count();
            hits as f64 / r as f64
        })
        .sum();
    Some(sum / pos.len() as f64)
}

pub fn oracle_map(scores: &Array2<f64>, labels: &[usize]) -> f64 {
    let aps: Vec<f64> = (0..scores.ncols())
        .filter_map(|c| {
            let col: Vec<f64> = scores.column(c).to_vec();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            oracle_ap(&col, &pos)
        })
        .collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// Index of the first maximum.
pub fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub fn oracle_accuracy(scores: &Array2<f64>, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| first_argmax(&scores.row(i).to_vec()) == l)
        .count();
    hits as f64 / labels.len() as f64
}

/// Fraction of (positive, negative) pairs ordered correctly, ties half.
pub fn oracle_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut num, mut pairs) = (0.0, 0usize);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| num / pairs as f64)
}

/// Normalized location of the first maximal pixel in row-major order.
pub fn oracle_point(h: &Array2<f64>) -> (f64, f64) {
    let (rows, cols) = h.dim();
    let flat: Vec<f64> = h.iter().copied().collect();
    let k = first_argmax(&flat);
    (
        (k % cols) as f64 / (cols - 1) as f64,
        (k / cols) as f64 / (rows - 1) as f64,
    )
}

pub fn oracle_l2(h: &Array2<f64>, points: &[(f64, f64)]) -> (f64, f64) {
    let (px, py) = oracle_point(h);
    let d: Vec<f64> = points
        .iter()
        .map(|&(x, y)| ((x - px).powi(2) + (y - py).powi(2)).sqrt())
        .collect();
    (
        d.iter().cloned().fold(f64::MAX, f64::min),
        d.iter().sum::<f64>() / d.len() as f64,
    )
}

/// Scores drawn from a few levels so ties are common.
pub fn tied_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let levels = rng.random_range(2..8);
    (0..n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
        .collect()
}

/// A 2x2-grid model small enough for finite differences.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            name: "patch-random".into(),
            image_size: 16,
            patch_size: 8,
            feature_dim: 6,
            seed: 3,
        },
        backbone: BackboneConfig {
            name: "toy-transformer".into(),
            d_model: 8,
            layers: 2,
            ffn_dim: 12,
            max_context: 4096,
            seed: 5,
        },
        connector_hidden: 10,
        lora_rank: 2,
        heatmap_size: 6,
        heatmap_sigma: 1.0,
        init_seed: 11,
    }
}

/// Generates fixtures for `tasks` into `dir` and opens them with the
/// tiny model.
pub fn tiny_workspace(dir: &Path, tasks: &[SocialTask], train: usize) -> Workspace {
    let fc = FixtureConfig {
        image_size: 16,
        train,
        val: 4,
        test: 4,
        hagrid_classes: 4,
        seed: 5,
        tasks: tasks.to_vec(),
    };
    let path = RunConfig::write_desk(dir, &fc).expect("fixtures");
    let mut cfg = RunConfig::load(&path).expect("config");
    cfg.model = tiny_model_config();
    cfg.train.batch_size = 4;
    cfg.train.warmup_steps = 5;
    Workspace::open(cfg, None).expect("workspace")
}

/// Reference single-task and joint results (values in percent, L2 in
/// normalized units).
pub fn reference_tables() -> (MetricsTable, MetricsTable) {
    use SocialTask::*;
    let rows: [(SocialTask, &str, f64, f64); 11] = [
        (HagridV2, "mAP", 99.7, 99.9),
        (HagridV2, "Acc", 97.8, 98.9),
        (Pisc, "Domain mAP", 91.7, 94.4),
        (Pisc, "Relation mAP", 88.0, 90.1),
        (Lam, "mAP", 85.0, 86.1),
        (Lam, "Acc", 94.1, 94.4),
        (GazeFollow, "Min L2", 0.073, 0.065),
        (GazeFollow, "Avg L2", 0.134, 0.128),
        (GazeFollow, "AUC", 93.4, 94.0),
        (AffectNet, "mAP", 67.1, 68.0),
        (AffectNet, "Acc", 52.2, 52.8),
    ];
    let (mut single, mut joint) = (MetricsTable::default(), MetricsTable::default());
    for (t, m, s, j) in rows {
        single.insert(t, m, s);
        joint.insert(t, m, j);
    }
    (single, joint)
}
