use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socialfusion_core::analysis::{gcd, GradientVector};
use socialfusion_core::metrics::{
    accuracy, gaze_auc, gaze_l2, mean_average_precision, roc_auc, ClassificationEval, GazeSample,
};

fn classification(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("classification");
    for n in [1_000usize, 10_000] {
        let classes = 33;
        let scores = Array2::from_shape_fn((n, classes), |_| rng.random::<f64>());
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let eval = ClassificationEval::new(scores, labels);
        group.bench_with_input(BenchmarkId::new("mAP", n), &eval, |b, e| {
            b.iter(|| mean_average_precision(black_box(e)))
        });
        group.bench_with_input(BenchmarkId::new("accuracy", n), &eval, |b, e| {
            b.iter(|| accuracy(black_box(e)))
        });
        let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let p: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        group.bench_with_input(BenchmarkId::new("roc_auc", n), &(s, p), |b, (s, p)| {
            b.iter(|| roc_auc(black_box(s), p))
        });
    }
    group.finish();
}

fn gaze(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples: Vec<GazeSample> = (0..256)
        .map(|_| GazeSample {
            heatmap: Array2::from_shape_fn((64, 64), |_| rng.random::<f64>()),
            points: (0..10).map(|_| (rng.random(), rng.random())).collect(),
        })
        .collect();
    c.bench_function("gaze_l2/256x64x64", |b| b.iter(|| gaze_l2(black_box(&samples))));
    c.bench_function("gaze_auc/256x64x64", |b| b.iter(|| gaze_auc(black_box(&samples), 0)));
}

fn conflict(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1_000_000;
    let a = GradientVector::new("a", (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), "fp");
    let b = GradientVector::new("b", (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), "fp");
    c.bench_function("gcd/1e6", |bch| bch.iter(|| gcd(black_box(&a), black_box(&b)).unwrap()));
}

criterion_group!(benches, classification, gaze, conflict);
criterion_main!(benches);
