use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const DESK: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");

fn emoe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emoe"))
        .current_dir(dir)
        .env("EMOE_CONFIG", DESK)
        .args(args)
        .output()
        .expect("spawn emoe")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = emoe(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "one-line summary expected: {stdout}");
    stdout
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr line");
    serde_json::from_str(last).expect("machine-readable error")
}

#[test]
fn train_without_bank_names_it() {
    let dir = TempDir::new().unwrap();
    let out = emoe(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["error"], "missing_artifact");
    assert!(err["message"].as_str().unwrap().contains("anchor bank not found"));
}

#[test]
fn missing_prerequisites_exit_2() {
    let dir = TempDir::new().unwrap();
    for args in [&["label"][..], &["anchors"], &["simulate", "--planner", "replay"], &["report"]] {
        let out = emoe(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(error_line(&out)["message"].as_str().unwrap().contains("not found"));
    }
    let out = emoe(dir.path(), &["train", "--config", "nope.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(emoe(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(emoe(dir.path(), &["report", "--format", "pdf"]).status.code(), Some(2));
    assert_eq!(emoe(dir.path(), &["--threads", "0", "gradcheck"]).status.code(), Some(2));
}

#[test]
fn unknown_config_keys_warn() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\ncolour = 2\n[generate]\nper_type = 2\neval_per_type = 1\n").unwrap();
    let out = emoe(dir.path(), &["generate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown config keys: colour"), "{stderr}");
}

#[test]
fn pipeline_is_idempotent_and_reports_seven_rows() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--per-type", "30", "--eval-per-type", "1"]);
    let scenes = std::fs::read(d.join("data/scenes.jsonl")).unwrap();
    ok(d, &["label"]);
    assert_eq!(std::fs::read(d.join("data/scenes.jsonl")).unwrap(), scenes, "label mutated its input");
    ok(d, &["anchors"]);
    ok(d, &["train", "--max-steps", "2"]);
    ok(d, &["simulate"]);
    ok(d, &["report"]);

    let csv = std::fs::read_to_string(d.join("reports/scores.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).filter(|l| !l.starts_with("all,")).collect();
    assert_eq!(rows.len(), 7);

    let snapshot = |files: &[&str]| -> Vec<Vec<u8>> { files.iter().map(|f| std::fs::read(d.join(f)).unwrap()).collect() };
    let files = [
        "data/scenes.jsonl",
        "data/labeled.jsonl",
        "artifacts/anchors.json",
        "artifacts/model/model.json",
        "reports/runs.json",
        "reports/scores.csv",
    ];
    let first = snapshot(&files);
    ok(d, &["generate", "--per-type", "30", "--eval-per-type", "1"]);
    ok(d, &["label"]);
    ok(d, &["anchors"]);
    ok(d, &["train", "--max-steps", "2"]);
    ok(d, &["simulate"]);
    ok(d, &["report"]);
    assert!(first == snapshot(&files), "re-run changed an artifact");
}

#[test]
fn gradcheck_passes_from_cli() {
    let dir = TempDir::new().unwrap();
    let line = ok(dir.path(), &["gradcheck", "--tol", "1e-4"]);
    assert!(line.starts_with("gradcheck:"));
    assert!(dir.path().join("reports/gradcheck.csv").exists());
}
