use std::path::Path;
use std::process::{Command, Output};

use evdl_core::data::RESULT_COLUMNS;

fn evdl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evdl"))
        .args(args)
        .current_dir(cwd)
        .env("EVDL_LOG", "error")
        .output()
        .unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn help_everywhere_exits_zero_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["", "synth", "train", "finetune", "evaluate", "sweep", "compare", "serve"] {
        let mut args: Vec<&str> = sub.split_whitespace().collect();
        args.push("--help");
        let out = evdl(&args, dir.path());
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(!out.stdout.is_empty());
    }
    assert!(listing(dir.path()).is_empty());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = evdl(&["train", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(evdl(&["explode"], dir.path()).status.code(), Some(1));
    assert_eq!(evdl(&["sweep", "--model", "m", "--data", "d", "--channel", "loss"], dir.path()).status.code(), Some(1));
}

#[test]
fn pipeline_synth_train_sweep_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |args: &[&str]| {
        let out = evdl(args, d);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(&["synth", "--out", "train.jsonl", "--test", "test.jsonl", "--n-per-class", "150", "--seed", "3"]);
    assert_eq!(listing(d), ["test.jsonl", "train.jsonl"]);

    let train = ok(&["train", "--data", "train.jsonl", "--epochs", "3", "--seed", "42", "--out", "model.evdl"]);
    let history = String::from_utf8(train.stdout).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,mean_loss,accuracy");
    assert_eq!(lines.len(), 4);
    ok(&["train", "--data", "train.jsonl", "--epochs", "3", "--seed", "42", "--out", "again.evdl"]);
    assert_eq!(std::fs::read(d.join("model.evdl")).unwrap(), std::fs::read(d.join("again.evdl")).unwrap());

    ok(&["sweep", "--model", "model.evdl", "--data", "test.jsonl", "--channel", "u", "--out", "curve.csv"]);
    let curve = std::fs::read_to_string(d.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), RESULT_COLUMNS.join(","));
    assert_eq!(curve.lines().count(), 12);
    let rates = ok(&["sweep", "--model", "model.evdl", "--data", "test.jsonl", "--channel", "entropy", "--rates", "0,0.25,0.5"]);
    assert_eq!(String::from_utf8(rates.stdout).unwrap().lines().count(), 4);

    ok(&["evaluate", "--model", "model.evdl", "--data", "test.jsonl", "--out", "r1.json"]);
    ok(&["evaluate", "--model", "model.evdl", "--data", "test.jsonl", "--out", "r2.json"]);
    let r1 = std::fs::read(d.join("r1.json")).unwrap();
    assert_eq!(r1, std::fs::read(d.join("r2.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    assert_eq!(report["items"], 150);
    assert!(report["metrics"]["accuracy"].as_f64().unwrap() > 0.5);

    ok(&["synth", "--out", "mine.jsonl", "--persona-items", "60", "--seed", "4"]);
    ok(&["finetune", "--model", "model.evdl", "--data", "mine.jsonl", "--epochs", "2", "--r10", "10", "--out", "tuned.evdl"]);
    let tuned = evdl_core::checkpoint::load_checkpoint(d.join("tuned.evdl")).unwrap();
    assert_eq!(tuned.epoch_t, 5);
    assert_eq!(tuned.risk_matrix.r10(), 10.0);
}

#[test]
fn validation_and_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = evdl(&["evaluate", "--model", "m.evdl", "--data", "x.jsonl", "--theta", "1.5", "--out", "r.json"], d);
    assert_eq!(out.status.code(), Some(1));
    let out = evdl(&["train", "--data", "x.jsonl", "--out", "m.evdl", "--r10", "-2"], d);
    assert_eq!(out.status.code(), Some(1));
    let out = evdl(&["train", "--data", "x.jsonl", "--out", "m.evdl", "--batch-size", "0"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(listing(d).is_empty());
    let out = evdl(&["train", "--data", "missing.jsonl", "--out", "m.evdl"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
}

#[test]
fn compare_reports_every_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| evdl(args, d);
    assert_eq!(run(&["synth", "--out", "a.jsonl", "--test", "b.jsonl", "--n-per-class", "60", "--dim", "4"]).status.code(), Some(0));
    let args = ["compare", "--data", "a.jsonl", "--test", "b.jsonl", "--epochs", "2", "--members", "2", "--iterations", "1000"];
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = report["baselines"].as_array().unwrap().iter().map(|b| b["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["snn", "mc_dropout", "deep_ensemble"]);
    assert_eq!(report["evidential"]["p_value"], 1.0);
    assert_eq!(run(&args).stdout, out.stdout);
    let mut short = args.to_vec();
    let last = short.len() - 1;
    short[last] = "999";
    assert_eq!(run(&short).status.code(), Some(1));
}
