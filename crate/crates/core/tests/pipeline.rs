mod common;

use std::fs;
use std::path::Path;

use common::*;
use socialfusion_core::analysis::{conflict_matrix, probe_workspace, ProbeConfig};
use socialfusion_core::data::fixtures::FixtureConfig;
use socialfusion_core::data::Split;
use socialfusion_core::model::checkpoint::Checkpoint;
use socialfusion_core::tasks::TaskId;
use socialfusion_core::{Regime, RunConfig, SocialTask, Workspace};

fn tiny_run_config(dir: &Path, tasks: &[SocialTask]) -> RunConfig {
    let fc = FixtureConfig {
        image_size: 16,
        train: 8,
        val: 4,
        test: 4,
        hagrid_classes: 4,
        seed: 1,
        tasks: tasks.to_vec(),
    };
    let mut cfg = RunConfig::load(&RunConfig::write_desk(dir, &fc).unwrap()).unwrap();
    cfg.model = tiny_model_config();
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.train.warmup_steps = 2;
    cfg
}

#[test]
fn reruns_give_byte_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run_config(dir.path(), &[SocialTask::Lam, SocialTask::GazeFollow]);
    let ws = Workspace::open(cfg, None).unwrap();
    let regime: Regime = "pair:LAM,GAZEFOLLOW".parse().unwrap();
    let a = ws.run(&regime, &dir.path().join("a")).unwrap();
    let b = ws.run(&regime, &dir.path().join("b")).unwrap();
    let read = |p: &Path| fs::read(p.join("metrics.json")).unwrap();
    assert_eq!(read(&a.dir), read(&b.dir));
    for f in [
        "config.toml",
        "loss.csv",
        "val.csv",
        "run.json",
        "checkpoints/best.json",
        "checkpoints/last.json",
    ] {
        assert!(a.dir.join(f).exists(), "missing {f}");
    }
    assert_eq!(a.metrics.tasks().len(), 2);
}

#[test]
fn snapshot_config_reloads_with_its_regime() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run_config(dir.path(), &[SocialTask::AffectNet]);
    let ws = Workspace::open(cfg, None).unwrap();
    let o = ws
        .run(&Regime::Single(SocialTask::AffectNet), &dir.path().join("run"))
        .unwrap();
    let snap = RunConfig::load(&o.dir.join("config.toml")).unwrap();
    assert_eq!(snap.regime, Some(Regime::Single(SocialTask::AffectNet)));
    assert_eq!(snap.model, ws.config.model);
}

#[test]
fn best_checkpoint_reproduces_run_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run_config(dir.path(), &[SocialTask::Lam]);
    let ws = Workspace::open(cfg, None).unwrap();
    let o = ws
        .run(&Regime::Single(SocialTask::Lam), &dir.path().join("run"))
        .unwrap();
    let model = ws.load_checkpoint(&o.dir.join("checkpoints/best.json")).unwrap();
    assert_eq!(ws.evaluate(&model, &[SocialTask::Lam], Split::Val).unwrap(), o.metrics);
    // a checkpoint from a different architecture is refused
    let mut other = ws.config.clone();
    other.model.lora_rank = 3;
    let ws2 = Workspace::open(other, None).unwrap();
    assert!(Checkpoint::load(&o.dir.join("checkpoints/best.json"))
        .unwrap()
        .apply(&mut ws2.model())
        .is_err());
}

#[test]
fn pair_workspace_loads_only_its_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run_config(dir.path(), &SocialTask::ALL);
    let regime: Regime = "pair:LAM,GAZEFOLLOW".parse().unwrap();
    let ws = Workspace::open(cfg, Some(&regime.tasks())).unwrap();
    let mut loaded = ws.datasets.tasks();
    loaded.sort();
    assert_eq!(loaded, vec![TaskId::Lam, TaskId::GazeFollow]);
    assert!(ws.datasets.get(TaskId::PiscDomain, Split::Train).is_empty());
}

#[test]
fn missing_manifest_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run_config(dir.path(), &[SocialTask::Lam]);
    let err = Workspace::open(cfg, Some(&[SocialTask::Pisc])).err().unwrap();
    assert!(err.is_config_error(), "{err}");
    let err = Workspace::open(tiny_run_config(dir.path(), &[SocialTask::Lam]), None)
        .unwrap()
        .run(&Regime::Joint, &dir.path().join("joint"))
        .err()
        .unwrap();
    assert!(err.is_config_error(), "{err}");
}

#[test]
fn two_task_conflict_matrix_has_zero_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run_config(dir.path(), &[SocialTask::Lam, SocialTask::GazeFollow]);
    let gc = cfg.gcd.clone();
    let ws = Workspace::open(cfg, None).unwrap();
    let tasks = [SocialTask::Lam, SocialTask::GazeFollow];
    let (grads, m) = conflict_matrix(&ws.model(), &ws.store, &ws.datasets, &tasks, &gc).unwrap();
    assert_eq!(grads.len(), 2);
    assert_eq!(m.gcd.len(), 2);
    assert_eq!((m.gcd[0][0], m.gcd[1][1]), (0.0, 0.0));
    assert_eq!(m.gcd[0][1], m.gcd[1][0]);
    assert!((0.0..=2.0).contains(&m.aggregate));
    assert_eq!(m.aggregate, m.gcd[0][1]);
    assert!(m.to_csv().starts_with("task,LAM,GazeFollow\n"));
}

#[test]
fn probe_report_covers_classification_heads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run_config(
        dir.path(),
        &[SocialTask::Pisc, SocialTask::GazeFollow, SocialTask::HagridV2],
    );
    let ws = Workspace::open(cfg, None).unwrap();
    let cfg = ProbeConfig {
        epochs: 5,
        ..ProbeConfig::default()
    };
    let r = probe_workspace(&ws, &cfg).unwrap();
    let keys: Vec<&str> = r.tasks.keys().map(String::as_str).collect();
    assert_eq!(keys, ["HAGRIDV2", "PISC_DOMAIN", "PISC_RELATION"]);
    // only four of the gesture classes are drawn
    assert!(r.tasks["HAGRIDV2"].classes <= 4);
    let json = serde_json::to_value(&r).unwrap();
    assert!(json["tasks"]["PISC_DOMAIN"]["mAP"].is_number());
}
