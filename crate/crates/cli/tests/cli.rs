use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--n-classes",
    "12",
    "--feature-dim",
    "6",
    "--head-count",
    "120",
    "--tail-count",
    "6",
    "--val-per-class",
    "6",
    "--test-per-class",
    "6",
];

fn alphanet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alphanet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn alphanet")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = alphanet(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn prepare(dir: &Path) {
    let mut args = vec!["datagen", "--out", "data"];
    args.extend_from_slice(SMALL);
    ok(dir, &args);
    ok(
        dir,
        &[
            "baseline",
            "--dataset",
            "data",
            "--out",
            "bank",
            "--baseline-epochs",
            "5",
        ],
    );
}

const TRAIN: &[&str] = &[
    "--dataset",
    "data",
    "--bank",
    "bank",
    "--epochs",
    "4",
    "--topk",
    "3",
    "--reduced-dim",
    "4",
    "--gamma",
    "0.6",
];

#[test]
fn pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let mut args = vec!["train", "--out", "run"];
    args.extend_from_slice(TRAIN);
    ok(dir, &args);
    for f in [
        "snapshot/model.json",
        "composed/manifest.json",
        "train_log.jsonl",
        "neighbors.json",
        "run.json",
    ] {
        assert!(dir.join("run").join(f).exists(), "missing {f}");
    }
    let log = fs::read_to_string(dir.join("run/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);

    ok(
        dir,
        &[
            "eval",
            "--dataset",
            "data",
            "--bank",
            "bank",
            "--composed",
            "run/composed",
            "--out",
            "ev",
        ],
    );
    let report = fs::read_to_string(dir.join("ev/split_report.csv")).unwrap();
    assert!(report.starts_with("split,top1,top5,n\n"));
    assert_eq!(report.lines().count(), 5);
    let cw = fs::read_to_string(dir.join("ev/classwise.csv")).unwrap();
    assert!(cw.starts_with("class_id,baseline_top1,composed_top1,delta,nn_distance\n"));
    assert!(dir.join("ev/classwise.svg").exists());
    assert!(dir.join("ev/split_report_baseline.csv").exists());

    let run: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("run/run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "train");
    assert_eq!(run["config"]["alpha"]["top_k"], 3);
    assert!(run["git_describe"].is_string());
    assert!(run["wall_time_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn training_twice_gives_identical_banks_and_run_json_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    for out in ["a", "b"] {
        let mut args = vec!["train", "--out", out];
        args.extend_from_slice(TRAIN);
        ok(dir, &args);
    }
    ok(dir, &["train", "--config", "a/run.json", "--out", "c"]);
    for f in [
        "composed/weights.alft",
        "composed/biases.alft",
        "composed/manifest.json",
        "train_log.jsonl",
    ] {
        let a = fs::read(dir.join("a").join(f)).unwrap();
        assert_eq!(
            a,
            fs::read(dir.join("b").join(f)).unwrap(),
            "{f} differs between reruns"
        );
        assert_eq!(
            a,
            fs::read(dir.join("c").join(f)).unwrap(),
            "{f} differs when replayed from run.json"
        );
    }
}

#[test]
fn gamma_sweep_has_nine_rows_per_split() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let mut args = vec![
        "sweep",
        "--axis",
        "gamma",
        "--grid",
        "0.1:0.9:0.1",
        "--out",
        "sw",
    ];
    args.extend_from_slice(TRAIN);
    ok(dir, &args);
    let csv = fs::read_to_string(dir.join("sw/sweep.csv")).unwrap();
    for split in ["few", "medium", "many", "all"] {
        let n = csv
            .lines()
            .filter(|l| l.split(',').nth(1) == Some(split))
            .count();
        assert_eq!(n, 9, "{split}");
    }
    assert!(csv.lines().nth(1).unwrap().starts_with("0.1,"));
    assert!(dir.join("sw/sweep.svg").exists());

    let mut args = vec!["sweep", "--axis", "topk", "--grid", "1,2", "--out", "sk"];
    args.extend_from_slice(TRAIN);
    ok(dir, &args);
    let csv = fs::read_to_string(dir.join("sk/sweep.csv")).unwrap();
    assert!(csv.contains("\n2,few,"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = alphanet(
        dir,
        &[
            "train",
            "--dataset",
            "no/such/dir",
            "--bank",
            "b",
            "--out",
            "o",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/dir"));

    fs::write(dir.join("bad.json"), r#"{"alpha": {"gama": 0.5}}"#).unwrap();
    let out = alphanet(dir, &["datagen", "--config", "bad.json", "--out", "d"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gama"));

    assert_eq!(
        alphanet(dir, &["train", "--gamma", "1.5"]).status.code(),
        Some(1)
    );
    assert_eq!(alphanet(dir, &["bogus"]).status.code(), Some(1));

    prepare(dir);
    fs::write(dir.join("bank/weights.alft"), b"ALFT\x01\x02").unwrap();
    let mut args = vec!["train", "--out", "r"];
    args.extend_from_slice(TRAIN);
    let out = alphanet(dir, &args);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
