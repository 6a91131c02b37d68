use std::path::Path;
use std::process::{Command, Output};

fn dec(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dec")).args(args).current_dir(cwd).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(root: &Path) {
    let out = dec(&["synth", "--images", "120", "--test-images", "40", "--unseen", "2", "--out", "data"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dec(&["train", "--no-such-flag", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(dec(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(dec(&["--help"], tmp.path()).status.code(), Some(0));
    synth(tmp.path());
    let out = dec(&["train", "--data", "data", "--corpus", "c.jsonl", "--out", "t"], tmp.path());
    assert_eq!(out.status.code(), Some(1), "--corpus without --dec");
    std::fs::write(tmp.path().join("bad.conf"), "no_such_key = 3\n").unwrap();
    let out = dec(&["stats", "--data", "data", "--config", "bad.conf", "--out", "s"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dec(&["stats", "--data", "missing", "--out", "s"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let m = json(&tmp.path().join("s/manifest.json"));
    assert_eq!(m["status"], "failed");
    synth(tmp.path());
    std::fs::write(tmp.path().join("data/train.jsonl"), "{\"broken\": \n").unwrap();
    assert_eq!(dec(&["anchors", "--data", "data", "--out", "a"], tmp.path()).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = dec(&["train", "--data", "data", "--lr", "1e308", "--iterations", "5", "--out", "t"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    std::fs::write(tmp.path().join("run.conf"), "# desk run\niterations = 7\nlearning_rate = 0.25\n").unwrap();
    let out = dec(&["train", "--data", "data", "--config", "run.conf", "--iterations", "3", "--out", "t"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&tmp.path().join("t/train_summary.json"));
    assert_eq!(summary["iterations"], 3);
    let m = json(&tmp.path().join("t/manifest.json"));
    assert_eq!(m["settings"]["learning_rate"], "0.25");
    assert_eq!(m["settings"]["iterations"], "3");
    assert_eq!(m["status"], "ok");
    let trace = std::fs::read_to_string(tmp.path().join("t/loss.txt")).unwrap();
    assert_eq!(trace.lines().count(), 3);
}

#[test]
fn rerun_detects_tampered_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    assert!(dec(&["stats", "--data", "data", "--out", "s"], tmp.path()).status.success());
    assert!(dec(&["rerun", "--manifest", "s/manifest.json", "--out", "s2"], tmp.path()).status.success());
    assert_eq!(std::fs::read(tmp.path().join("s/stats.csv")).unwrap(), std::fs::read(tmp.path().join("s2/stats.csv")).unwrap());
    std::fs::write(tmp.path().join("data/vocab.json"), "{}").unwrap();
    assert_ne!(dec(&["rerun", "--manifest", "s/manifest.json", "--out", "s3"], tmp.path()).status.code(), Some(0));
}
