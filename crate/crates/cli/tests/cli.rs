use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn sasft(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sasft"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn report(o: &Output) -> Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().expect("error report on stderr");
    serde_json::from_str(line).unwrap()
}

fn tiny(dir: &Path, extra: Value) -> String {
    let mut cfg = json!({
        "corpus": {"pretrain_n": 128, "task_n": 16},
        "pretrain": {"steps": 20, "eval_every": 10},
        "sft": {"steps": 8, "batch_size": 8, "snapshot_every": 4}
    });
    merge(&mut cfg, extra);
    let p = dir.join("exp.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    p.to_string_lossy().into_owned()
}

fn merge(a: &mut Value, b: Value) {
    match (a, b) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}

#[test]
fn unknown_field_is_rejected_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), json!({"sft": {"lrr": 0.1}}));
    let o = sasft(&["sft", "--config", &cfg], &dir.path().join("run"));
    assert_eq!(o.status.code(), Some(2));
    let r = report(&o);
    assert_eq!(r["error"], "invalid_config");
    assert!(r["message"].as_str().unwrap().contains("lrr"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn every_violation_is_listed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(
        dir.path(),
        json!({"sft": {"lr": -1.0}, "corpus": {"eval0_n": 500}, "selfgen": {"lambda": 0.0}}),
    );
    let o = sasft(&["pretrain", "--config", &cfg], &dir.path().join("run"));
    assert_eq!(o.status.code(), Some(2));
    let r = report(&o);
    assert_eq!(r["exit_code"], 2);
    assert!(r["violations"].as_array().unwrap().len() >= 3, "{r}");
}

#[test]
fn regime_flags_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["sft", "--regime", "custom"][..],
        &["sft", "--regime", "task-only", "--ratio", "0.5"][..],
        &["sft", "--regime", "bogus"][..],
    ] {
        let o = sasft(args, &dir.path().join("run"));
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert_eq!(report(&o)["error"], "invalid_config");
    }
}

#[test]
fn mix_writes_data_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), json!({}));
    let out = dir.path().join("run");
    let o = sasft(&["mix", "--config", &cfg, "--ratio", "0.75"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let man: Value = serde_json::from_str(&std::fs::read_to_string(out.join("data/mix.json")).unwrap()).unwrap();
    assert_eq!(man["n_task"], 16);
    assert_eq!(man["n_self"], 12);
    assert_eq!(man["n_total"], 28);
    assert_eq!(man["epsilon"], 0.75 / 1.75);
    let lines = |f: &str| std::fs::read_to_string(out.join("data").join(f)).unwrap().lines().count();
    assert_eq!(lines("mix.jsonl"), 28);
    assert_eq!(lines("task.jsonl"), 16);
    let rec: Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(rec["command"], "mix");
    assert_eq!(rec["regime"], json!({"kind": "custom", "lambda": 0.75}));
    for f in ["omega0.bin", "omega0-key.json", "pretrain.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn sft_snapshots_on_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), json!({}));
    let out = dir.path().join("run");
    let o = sasft(&["sft", "--config", &cfg, "--regime", "task-only"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for t in [0, 4, 8] {
        assert!(out.join(format!("params-step-{t}.bin")).exists(), "step {t}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_train"], 16);
    assert!(summary["delta_forget"].as_f64().unwrap().is_finite());
}
