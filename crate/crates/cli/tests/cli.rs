use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_socialfusion"));
    c.env("RUST_LOG", "warn").env_remove("SOCIALFUSION_OUTPUT_DIR");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small fixtures and their config under `dir/fx`.
fn fixtures(dir: &Path) -> String {
    let o = run(
        &[
            "fixtures",
            "fx",
            "--seed",
            "2",
            "--train",
            "8",
            "--val",
            "4",
            "--test",
            "4",
            "--image-size",
            "16",
        ],
        dir,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "fx/desk.toml");
    "fx/desk.toml".into()
}

#[test]
fn help_lists_tasks_and_regimes() {
    let o = bin().arg("--help").output().unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    for t in [
        "HAGRIDV2",
        "PISC",
        "LAM",
        "GAZEFOLLOW",
        "AFFECTNET",
        "single:<task>",
        "pair:<task>,<task>",
        "joint",
    ] {
        assert!(text.contains(t), "help lacks {t}");
    }
}

#[test]
fn invalid_task_exits_2_naming_valid_ids() {
    let o = bin()
        .args(["train", "cfg.toml", "--regime", "single:FACES"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("FACES") && err.contains("HAGRIDV2, PISC, LAM, GAZEFOLLOW, AFFECTNET"),
        "{err}"
    );
    let o = bin()
        .args(["train", "cfg.toml", "--regime", "pair:LAM,LAM"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schema_violation_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.toml"),
        "[data.manifests]\nLAM = \"lam.jsonl\"\n[train]\nbatchsize = 4\n",
    )
    .unwrap();
    let o = run(&["train", "bad.toml", "--regime", "joint"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.batchsize"), "{}", stderr(&o));
}

#[test]
fn missing_data_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.toml"),
        "[data.manifests]\nLAM = \"nowhere.jsonl\"\n",
    )
    .unwrap();
    let o = run(&["train", "cfg.toml", "--regime", "single:LAM"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("nowhere.jsonl"));
}

#[test]
fn fixtures_train_eval_gcd_probe() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let o = run(
        &[
            "train",
            &cfg,
            "--regime",
            "single:HAGRIDV2",
            "--epochs",
            "2",
            "--out",
            "hg",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("hg/metrics.json")).unwrap()).unwrap();
    assert!(metrics["HAGRIDV2"]["Acc"].is_number());
    assert_eq!(metrics.as_object().unwrap().len(), 1);

    // an existing run is not overwritten silently
    let o = run(
        &[
            "train",
            &cfg,
            "--regime",
            "single:HAGRIDV2",
            "--epochs",
            "1",
            "--out",
            "hg",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));

    let o = run(
        &[
            "eval",
            "hg/checkpoints/best.json",
            &cfg,
            "--tasks",
            "HAGRIDV2",
            "--split",
            "val",
            "--out",
            "ev.json",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ev: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(ev, metrics);

    let o = run(&["gcd", &cfg, "--tasks", "LAM,GAZEFOLLOW", "--out", "gcd"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines[0], "task,LAM,GazeFollow");
    assert!(lines[1].starts_with("LAM,0,") && lines[2].ends_with(",0"));
    assert!(lines[3].starts_with("aggregate,"));
    assert!(dir.path().join("gcd/gcd.json").exists());

    let o = run(
        &["probe", &cfg, "--features", "mean-pool", "--out", "probe.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let p: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("probe.json")).unwrap()).unwrap();
    assert_eq!(p["features"], "mean_pool");
    assert!(p["tasks"]["LAM"]["Acc"].is_number());
    assert!(p["tasks"].get("GAZEFOLLOW").is_none());
}

#[test]
fn train_defaults_to_output_dir_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let o = bin()
        .args(["train", &cfg, "--regime", "single:LAM", "--epochs", "1"])
        .env("SOCIALFUSION_OUTPUT_DIR", "elsewhere")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("elsewhere/single-LAM/metrics.json").exists());
    // the config itself is left untouched
    assert!(!fs::read_to_string(dir.path().join(&cfg)).unwrap().contains("elsewhere"));
}

#[test]
fn report_over_reference_tables() {
    let dir = tempfile::tempdir().unwrap();
    let single = r#"{"HAGRIDV2":{"mAP":99.7,"Acc":97.8},"PISC":{"Domain mAP":91.7,"Relation mAP":88.0},
        "LAM":{"mAP":85.0,"Acc":94.1},"GAZEFOLLOW":{"Min L2":0.073,"Avg L2":0.134,"AUC":93.4},
        "AFFECTNET":{"mAP":67.1,"Acc":52.2}}"#;
    let joint = r#"{"HAGRIDV2":{"mAP":99.9,"Acc":98.9},"PISC":{"Domain mAP":94.4,"Relation mAP":90.1},
        "LAM":{"mAP":86.1,"Acc":94.4},"GAZEFOLLOW":{"Min L2":0.065,"Avg L2":0.128,"AUC":94.0},
        "AFFECTNET":{"mAP":68.0,"Acc":52.8}}"#;
    fs::write(dir.path().join("single.json"), single).unwrap();
    fs::write(dir.path().join("joint.json"), joint).unwrap();
    let o = run(
        &[
            "report",
            "--single",
            "single.json",
            "--joint",
            "joint.json",
            "--out",
            "rep",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = stdout(&o);
    assert!(csv.trim_end().ends_with("# improved 10/10"), "{csv}");
    assert!(csv.contains("GazeFollow,Min L2,lower,true,0.073,0.065,0.00"));
    for f in ["transfer.csv", "transfer.json", "transfer.svg"] {
        assert!(dir.path().join("rep").join(f).exists(), "{f}");
    }
    let o = run(
        &["report", "--single", "missing.json", "--joint", "joint.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synergy_emits_twelve_row_grid_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures(dir.path());
    let o = run(&["synergy", &cfg, "--epochs", "1", "--out", "sweep"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sweep/synergy.csv")).unwrap();
    assert_eq!(csv, stdout(&o));
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 13);
    assert!(rows[0].starts_with("task_one,task_two,HaGRIDv2 mAP,"));
    assert!(rows[11].starts_with("Single-task training,,") && rows[12].starts_with("Joint training,,"));
    // a pair row leaves the untrained tasks blank
    let lam_gaze = rows.iter().find(|r| r.starts_with("LAM,GazeFollow,")).unwrap();
    assert_eq!(lam_gaze.split(',').filter(|c| c.is_empty()).count(), 6);
    // everything is in the ledger, so a rerun trains nothing and reproduces the grid
    let again = run(&["synergy", &cfg, "--epochs", "1", "--out", "sweep"], dir.path());
    assert_eq!(stdout(&again), csv);
}
