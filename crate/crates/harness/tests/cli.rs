//! End-to-end CLI checks: subcommands, flags, and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn medqa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_medqa"))
}

fn write_dataset(dir: &Path) -> PathBuf {
    let mut text = String::new();
    for (i, gold) in ["A", "B", "C", "D"].iter().enumerate() {
        text.push_str(&format!(
            r#"{{"id": "q{i}", "question": "Scenario {i}?", "options": {{"A": "a{i}", "B": "b{i}", "C": "c{i}", "D": "d{i}"}}, "answer_idx": "{gold}"}}"#,
        ));
        text.push('\n');
    }
    let path = dir.join("dataset.jsonl");
    std::fs::write(&path, text).unwrap();
    path
}

fn write_script(dir: &Path) -> PathBuf {
    let script = serde_json::json!({
        "schema": "mock/v1",
        "entries": [
            {"tag": "qe", "response": "Field: Cardiology", "sticky": true},
            {"tag": "oe", "response": "Field: Pharmacology", "sticky": true},
            {"tag": "qa/*", "response": "analysis", "sticky": true},
            {"tag": "oa/*", "response": "analysis", "sticky": true},
            {"tag": "case", "response": "Case 1: c", "sticky": true},
            {"tag": "report", "response": "Key Knowledge: kk.\nTotal Analysis: ta.", "sticky": true},
            {"tag": "vote/*", "response": "Yes", "sticky": true},
            {"tag": "dm", "response": "Answer: A", "sticky": true}
        ]
    });
    let path = dir.join("script.json");
    std::fs::write(&path, serde_json::to_string(&script).unwrap()).unwrap();
    path
}

#[test]
fn eval_report_and_audit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path());
    let script = write_script(dir.path());
    let out = dir.path().join("run");

    let status = medqa()
        .args([
            "eval",
            "--method",
            "ours",
            "--runs",
            "1",
            "--sample-size",
            "4",
            "--seed",
            "1",
        ])
        .arg("--dataset")
        .arg(&dataset)
        .arg("--mock-script")
        .arg(&script)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "eval failed: {}",
        String::from_utf8_lossy(&status.stderr)
    );
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("Accuracy"));
    assert!(stdout.contains("ours (zero-shot)"));
    assert!(out.join("results.jsonl").exists());

    let report = medqa().arg("report").arg(&out).output().unwrap();
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("Macro F1-Score"));

    let audit = medqa().arg("audit-leakage").arg(&out).output().unwrap();
    assert!(audit.status.success(), "clean run must audit clean");
    assert!(String::from_utf8_lossy(&audit.stdout).contains("no leakage"));
}

#[test]
fn missing_dataset_exits_with_config_code() {
    let output = medqa().args(["eval", "--method", "ours"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("dataset"));
}

#[test]
fn unknown_dataset_path_exits_with_config_code() {
    let output = medqa()
        .args([
            "eval",
            "--dataset",
            "/nonexistent/nope.jsonl",
            "--mock-script",
            "/nonexistent/s.json",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn audit_detects_a_planted_leak() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path());
    let script = write_script(dir.path());
    let out = dir.path().join("run");

    let status = medqa()
        .args([
            "eval",
            "--method",
            "ours",
            "--runs",
            "1",
            "--sample-size",
            "2",
            "--sentinel-golds",
        ])
        .arg("--dataset")
        .arg(&dataset)
        .arg("--mock-script")
        .arg(&script)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let clean = medqa().arg("audit-leakage").arg(&out).output().unwrap();
    assert_eq!(
        clean.status.code(),
        Some(0),
        "sentinel golds never reach prompts"
    );

    // Plant a trace whose outbound prompt leaks a sentinel; the audit
    // must flag it and exit 2.
    let leaky = concat!(
        r#"{"schema":"trace/v1","question_id":"planted","method":"ours"}"#,
        "\n",
        r#"{"kind":"exchange","seq":0,"stage":"dm","request":{"model_id":"m","messages":[{"role":"user","content":"oops XYZZY-GOLD-q0"}],"params":{"temperature":0.0,"top_p":1.0,"frequency_penalty":0.0,"presence_penalty":0.0,"max_tokens":1024},"stage_tag":"dm"},"completion":{"text":"x","finish_reason":"stop"},"attempts":1,"from_cache":false,"at_ms":1}"#,
        "\n"
    );
    std::fs::write(out.join("traces/run1/planted.jsonl"), leaky).unwrap();
    let found = medqa().arg("audit-leakage").arg(&out).output().unwrap();
    assert_eq!(found.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&found.stderr).contains("planted"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path());
    let script = write_script(dir.path());
    let out = dir.path().join("run");
    let config = format!(
        "dataset = {:?}\nmock_script = {:?}\nout = {:?}\nruns = 3\nsample_size = 2\nmethod = \"ours\"\n",
        dataset, script, out
    );
    let config_path = dir.path().join("run.toml");
    std::fs::write(&config_path, config).unwrap();

    let status = medqa()
        .arg("eval")
        .arg("--config")
        .arg(&config_path)
        .args(["--runs", "1"])
        .status()
        .unwrap();
    assert!(status.success());
    let results = medqa_harness::store::read_results(&out).unwrap();
    assert_eq!(
        results.per_run.len(),
        1,
        "CLI --runs overrides the file's 3"
    );
    assert_eq!(results.outcomes.len(), 2, "file's sample_size applies");
}
