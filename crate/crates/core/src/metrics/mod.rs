//! Classification and gaze metrics, the evaluation driver and transfer
//! reports.

mod eval;
mod report;

use ndarray::{Array2, ArrayView1};

pub use eval::{evaluate, EvalOptions, MetricsTable};
pub use report::{MetricKey, TransferReport, TransferRow, REPORT_METRICS};

use crate::tasks::{argmax_lowest, quantize_point};

/// Per-class scores (`N x C`) and ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationEval {
    pub scores: Array2<f64>,
    pub labels: Vec<usize>,
}

impl ClassificationEval {
    pub fn new(scores: Array2<f64>, labels: Vec<usize>) -> Self {
        debug_assert_eq!(scores.nrows(), labels.len());
        Self { scores, labels }
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Self {
        let c = rows.first().map_or(0, Vec::len);
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(
            Array2::from_shape_vec((rows.len(), c), flat).expect("equal row lengths"),
            labels,
        )
    }

    pub fn num_classes(&self) -> usize {
        self.scores.ncols()
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.scores.rows().into_iter().map(argmax_lowest).collect()
    }
}

/// Fraction of rows whose argmax (ties to the lowest index) is the label.
pub fn accuracy(eval: &ClassificationEval) -> f64 {
    if eval.labels.is_empty() {
        return 0.0;
    }
    let hits = eval
        .predictions()
        .iter()
        .zip(&eval.labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / eval.labels.len() as f64
}

/// Mean precision at the rank of each positive, ranking by descending
/// score with ties in index order. `None` when there are no positives.
pub fn average_precision(scores: ArrayView1<'_, f64>, positive: &[bool]) -> Option<f64> {
    let total = positive.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Unweighted mean of one-vs-rest AP over classes with at least one
/// positive; classes without positives are skipped with a warning.
pub fn mean_average_precision(eval: &ClassificationEval) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for c in 0..eval.num_classes() {
        let pos: Vec<bool> = eval.labels.iter().map(|&l| l == c).collect();
        match average_precision(eval.scores.column(c), &pos) {
            Some(ap) => {
                sum += ap;
                n += 1;
            }
            None => log::warn!("class {c} has no positives; excluded from mAP"),
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// ROC AUC by the Mann–Whitney rank statistic; tied scores count one half.
/// `None` when either class is empty.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // average 1-based rank of the tie group
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let p = p as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n as f64))
}

/// One gaze sample: post-sigmoid heatmap and its annotation points.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeSample {
    pub heatmap: Array2<f64>,
    pub points: Vec<(f64, f64)>,
}

/// Argmax pixel (ties to the lowest row-major index) mapped to normalized
/// `(x, y) = (col / (W - 1), row / (H - 1))`.
pub fn predicted_point(heatmap: &Array2<f64>) -> (f64, f64) {
    let (h, w) = heatmap.dim();
    let flat = heatmap.as_standard_layout();
    let idx = argmax_lowest(ArrayView1::from(flat.as_slice().expect("standard layout")));
    let (r, c) = (idx / w, idx % w);
    let norm = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.5 };
    (norm(c, w), norm(r, h))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GazeL2 {
    pub per_sample: Vec<(f64, f64)>,
    pub min_l2: f64,
    pub avg_l2: f64,
}

/// Minimum and mean distance between `prediction` and the annotations.
pub fn point_l2(prediction: (f64, f64), points: &[(f64, f64)]) -> (f64, f64) {
    let d: Vec<f64> = points
        .iter()
        .map(|&(x, y)| (x - prediction.0).hypot(y - prediction.1))
        .collect();
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, d.iter().sum::<f64>() / d.len() as f64)
}

pub fn gaze_l2(samples: &[GazeSample]) -> GazeL2 {
    let per_sample: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| !s.points.is_empty())
        .map(|s| point_l2(predicted_point(&s.heatmap), &s.points))
        .collect();
    let n = per_sample.len().max(1) as f64;
    GazeL2 {
        min_l2: per_sample.iter().map(|p| p.0).sum::<f64>() / n,
        avg_l2: per_sample.iter().map(|p| p.1).sum::<f64>() / n,
        per_sample,
    }
}

/// Binary grid with ones within `radius` pixels (Chebyshev) of each
/// quantized annotation.
pub fn annotation_grid(points: &[(f64, f64)], shape: (usize, usize), radius: usize) -> Vec<bool> {
    let (h, w) = shape;
    let mut grid = vec![false; h * w];
    for &p in points {
        let (r, c) = quantize_point(p, h, w);
        for y in r.saturating_sub(radius)..=(r + radius).min(h - 1) {
            for x in c.saturating_sub(radius)..=(c + radius).min(w - 1) {
                grid[y * w + x] = true;
            }
        }
    }
    grid
}

/// Mean per-sample ROC AUC of heatmap values against the annotation grid.
/// Degenerate grids are skipped with a warning; `None` if all are.
pub fn gaze_auc(samples: &[GazeSample], radius: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for (i, s) in samples.iter().enumerate() {
        let grid = annotation_grid(&s.points, s.heatmap.dim(), radius);
        let flat = s.heatmap.as_standard_layout();
        match roc_auc(flat.as_slice().expect("standard layout"), &grid) {
            Some(a) => {
                sum += a;
                n += 1;
            }
            None => log::warn!("gaze sample {i} has a degenerate annotation grid; skipped"),
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn accuracy_cases() {
        let e = ClassificationEval::from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.2, 0.1]],
            vec![0, 1, 0, 0],
        );
        assert_eq!(accuracy(&e), 1.0);
        let e = ClassificationEval::from_rows(
            &[vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0, 1, 0, 0],
        );
        assert_eq!(accuracy(&e), 0.5);
    }

    #[test]
    fn ap_hand_cases() {
        let ap = average_precision(array![0.9, 0.8, 0.7].view(), &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let ap = average_precision(array![0.9, 0.8, 0.2, 0.1].view(), &[false, false, true, true]).unwrap();
        assert!((ap - (1.0 / 3.0 + 2.0 / 4.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(array![0.1].view(), &[false]), None);
    }

    #[test]
    fn map_skips_absent_classes() {
        let e = ClassificationEval::from_rows(&[vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.0]], vec![0, 1]);
        assert_eq!(mean_average_precision(&e), 1.0);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.9], &[false, false, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.5; 4], &[true, false, false, false]), Some(0.5));
        // one positive ranked second of nine: beats 7 of 8 negatives
        let mut s = vec![0.0; 9];
        for (i, v) in s.iter_mut().enumerate() {
            *v = i as f64;
        }
        let mut pos = vec![false; 9];
        pos[7] = true;
        assert_eq!(roc_auc(&s, &pos), Some(7.0 / 8.0));
        assert_eq!(roc_auc(&[1.0], &[true]), None);
    }

    #[test]
    fn l2_cases() {
        let (min, avg) = point_l2((0.5, 0.5), &[(0.5, 0.5), (0.7, 0.7)]);
        assert_eq!(min, 0.0);
        assert!((avg - 0.2f64.hypot(0.2) / 2.0).abs() < 1e-15);
        assert!((avg - 0.14142).abs() < 1e-5);
        let (min, avg) = point_l2((0.1, 0.2), &[(0.4, 0.6)]);
        assert_eq!(min, avg);
    }

    #[test]
    fn predicted_point_uses_lowest_tie() {
        let mut h = Array2::zeros((5, 5));
        h[[4, 0]] = 1.0;
        h[[1, 2]] = 1.0;
        assert_eq!(predicted_point(&h), (0.5, 0.25));
    }

    #[test]
    fn gaze_auc_perfect_and_constant() {
        let mut h = Array2::from_elem((8, 8), 0.1);
        let pts = vec![(0.0, 0.0), (1.0, 1.0)];
        h[[0, 0]] = 0.9;
        h[[7, 7]] = 0.8;
        let s = GazeSample {
            heatmap: h,
            points: pts.clone(),
        };
        assert_eq!(gaze_auc(&[s], 0), Some(1.0));
        let c = GazeSample {
            heatmap: Array2::from_elem((8, 8), 0.3),
            points: pts,
        };
        assert_eq!(gaze_auc(&[c], 0), Some(0.5));
        let full = GazeSample {
            heatmap: Array2::from_elem((2, 2), 0.3),
            points: vec![(0.5, 0.5)],
        };
        assert_eq!(gaze_auc(&[full], 1), None);
    }
}
