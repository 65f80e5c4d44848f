use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socialfusion_core::data::plan_epoch;
use socialfusion_core::model::backbone::BackboneConfig;
use socialfusion_core::model::bbox::{BBox, BBoxSet};
use socialfusion_core::model::encoder::{EncoderConfig, VisualFeatureGrid};
use socialfusion_core::model::{HeatmapExample, TextExample, VisualInput};
use socialfusion_core::tasks::{synth_heatmap, TaskId};
use socialfusion_core::{ModelConfig, SocialFusion, TaskRegistry};

fn desk_model() -> SocialFusion {
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            name: "patch-random".into(),
            image_size: 48,
            patch_size: 8,
            feature_dim: 32,
            seed: 17,
        },
        backbone: BackboneConfig {
            name: "toy-transformer".into(),
            d_model: 32,
            layers: 2,
            ffn_dim: 64,
            max_context: 1024,
            seed: 29,
        },
        connector_hidden: 64,
        lora_rank: 8,
        heatmap_size: 32,
        heatmap_sigma: 2.0,
        init_seed: 7,
    };
    SocialFusion::new(&cfg, Arc::new(TaskRegistry::builtin())).unwrap()
}

fn forward_and_backward(c: &mut Criterion) {
    let m = desk_model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = m.encoder().handle();
    let grids: Vec<VisualFeatureGrid> = (0..8)
        .map(|_| {
            VisualFeatureGrid::new(Array3::from_shape_fn((h.grid.0, h.grid.1, h.feature_dim), |_| {
                rng.random_range(-1.0..1.0)
            }))
        })
        .collect();
    let boxes = BBoxSet::new(vec![BBox::new(0.1, 0.1, 0.5, 0.5).unwrap()]).unwrap();
    let target = synth_heatmap(&[(0.3, 0.7)], 32, 32, 2.0).unwrap();
    let inputs: Vec<VisualInput> = grids
        .iter()
        .map(|g| VisualInput {
            features: g,
            boxes: &boxes,
        })
        .collect();
    let text: Vec<TextExample> = inputs
        .iter()
        .map(|&input| TextExample {
            task: TaskId::Lam,
            input,
            label: 1,
        })
        .collect();
    let heat: Vec<HeatmapExample> = inputs
        .iter()
        .map(|&input| HeatmapExample { input, target: &target })
        .collect();

    c.bench_function("loss_and_grads/text8", |b| {
        b.iter(|| m.loss_and_grads(black_box(&text), &[], 1.0).unwrap())
    });
    c.bench_function("loss_and_grads/heatmap8", |b| {
        b.iter(|| m.loss_and_grads(&[], black_box(&heat), 1.0).unwrap())
    });
    c.bench_function("score_text/lam", |b| {
        let s = m.session().unwrap();
        b.iter(|| s.score_text(TaskId::Lam, black_box(inputs[0])).unwrap())
    });
}

fn sampler(c: &mut Criterion) {
    let sizes = [
        (TaskId::Lam, 20_000),
        (TaskId::HagridV2, 50_000),
        (TaskId::GazeFollow, 100_000),
        (TaskId::AffectNet, 30_000),
    ];
    c.bench_function("plan_epoch/4tasks", |b| {
        b.iter(|| plan_epoch(black_box(&sizes), 32, 0, 1).unwrap())
    });
}

criterion_group!(benches, forward_and_backward, sampler);
criterion_main!(benches);
