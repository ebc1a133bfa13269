//! Runner behavior: resume, configuration guards, output atomicity,
//! and the results/trace correspondence.

use medqa_harness::store::{self, read_manifest, read_results};
use medqa_harness::{run_eval, EvalArgs, HarnessError, Method};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

fn write_dataset(dir: &Path, n: usize) -> PathBuf {
    let mut text = String::new();
    let golds = ["A", "B", "C", "D", "E"];
    for i in 0..n {
        text.push_str(&format!(
            r#"{{"id": "q{i}", "question": "Scenario {i}: what is the best next step?", "options": {{"A": "choice a{i}", "B": "choice b{i}", "C": "choice c{i}", "D": "choice d{i}", "E": "choice e{i}"}}, "answer_idx": "{}"}}"#,
            golds[i % golds.len()]
        ));
        text.push('\n');
    }
    let path = dir.join("dataset.jsonl");
    std::fs::write(&path, text).unwrap();
    path
}

/// Sticky script covering every stage of the six-stage pipeline.
fn write_ours_script(dir: &Path, decision: &str) -> PathBuf {
    let script = serde_json::json!({
        "schema": "mock/v1",
        "entries": [
            {"tag": "qe", "response": "Field: Cardiology", "sticky": true},
            {"tag": "oe", "response": "Field: Pharmacology", "sticky": true},
            {"tag": "qa/*", "response": "Question analysis body.", "sticky": true},
            {"tag": "oa/*", "response": "Option analysis body.", "sticky": true},
            {"tag": "case", "response": "Case 1:\nContext: c.\nKey Mechanism: m.\nNeutrality Check: n.", "sticky": true},
            {"tag": "report", "response": "Key Knowledge: kk.\nTotal Analysis: ta.", "sticky": true},
            {"tag": "vote/*", "response": "Yes", "sticky": true},
            {"tag": "dm", "response": format!("The answer is ({decision})."), "sticky": true}
        ]
    });
    let path = dir.join("script.json");
    std::fs::write(&path, serde_json::to_string_pretty(&script).unwrap()).unwrap();
    path
}

fn args(dataset: &Path, script: &Path, out: &Path, sample: usize, runs: usize) -> EvalArgs {
    EvalArgs {
        dataset: Some(dataset.to_path_buf()),
        method: Some(Method::Ours),
        mock_script: Some(script.to_path_buf()),
        out: Some(out.to_path_buf()),
        sample_size: Some(sample),
        runs: Some(runs),
        seed: Some(1),
        ..EvalArgs::default()
    }
}

#[test]
fn scripted_run_accuracy_matches_script() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 6);
    let script = write_ours_script(dir.path(), "A");
    let out = dir.path().join("run");
    let config = args(&dataset, &script, &out, 6, 1).resolve().unwrap();
    let outcome = run_eval(&config).unwrap();

    // Scripted decision is always A; golds cycle A,B,C,D,E,A.
    let correct = outcome
        .results
        .outcomes
        .iter()
        .filter(|o| o.correct)
        .count();
    assert_eq!(correct, 2);
    assert!((outcome.results.per_run[0].accuracy - 2.0 / 6.0).abs() < 1e-12);
    assert!(!outcome.had_failures);
    assert!(out.join("manifest.json").exists());
    assert!(out.join("results.jsonl").exists());
    assert!(out.join("table.txt").exists());
}

#[test]
fn every_outcome_has_a_trace_and_vice_versa() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 5);
    let script = write_ours_script(dir.path(), "B");
    let out = dir.path().join("run");
    let config = args(&dataset, &script, &out, 3, 2).resolve().unwrap();
    let outcome = run_eval(&config).unwrap();

    let from_results: BTreeSet<(usize, String)> = outcome
        .results
        .outcomes
        .iter()
        .map(|o| (o.run, o.id.clone()))
        .collect();
    let mut from_traces = BTreeSet::new();
    for file in store::list_trace_files(&out) {
        let trace = store::read_trace(&file).unwrap();
        let run: usize = file
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("run"))
            .and_then(|n| n.parse().ok())
            .unwrap();
        from_traces.insert((run, trace.question_id.clone()));
    }
    assert_eq!(from_results, from_traces);
    assert_eq!(from_results.len(), 6);
}

#[test]
fn resume_skips_completed_questions() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 4);
    // Non-sticky script with exactly enough entries for ONE full run of
    // 4 questions (1 qe + 1 oe + 1 qa + 1 oa + 1 case + 1 report + 2
    // votes + 1 dm = 9 calls per question). A second pass would exhaust
    // it and fail, so success on rerun proves the resume skipped them.
    let mut entries = Vec::new();
    for _ in 0..4 {
        entries.push(serde_json::json!({"tag": "qe", "response": "Field: Cardiology"}));
        entries.push(serde_json::json!({"tag": "oe", "response": "Field: Pharmacology"}));
        entries.push(serde_json::json!({"tag": "qa/qe1", "response": "analysis"}));
        entries.push(serde_json::json!({"tag": "oa/oe1", "response": "analysis"}));
        entries.push(serde_json::json!({"tag": "case", "response": "Case 1: c"}));
        entries.push(serde_json::json!({"tag": "report", "response": "Key Knowledge: kk.\nTotal Analysis: ta."}));
        entries.push(serde_json::json!({"tag": "vote/qe1", "response": "Yes"}));
        entries.push(serde_json::json!({"tag": "vote/oe1", "response": "Yes"}));
        entries.push(serde_json::json!({"tag": "dm", "response": "Answer: C"}));
    }
    let script_path = dir.path().join("script.json");
    std::fs::write(
        &script_path,
        serde_json::to_string(&serde_json::json!({"schema": "mock/v1", "entries": entries}))
            .unwrap(),
    )
    .unwrap();

    let out = dir.path().join("run");
    let config = args(&dataset, &script_path, &out, 4, 1).resolve().unwrap();
    let first = run_eval(&config).unwrap();
    let second = run_eval(&config).unwrap();
    assert_eq!(first.results.outcomes, second.results.outcomes);
    assert_eq!(read_results(&out).unwrap().outcomes, first.results.outcomes);
}

#[test]
fn resume_with_different_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 4);
    let script = write_ours_script(dir.path(), "A");
    let out = dir.path().join("run");
    run_eval(&args(&dataset, &script, &out, 3, 1).resolve().unwrap()).unwrap();

    let mut changed = args(&dataset, &script, &out, 3, 1);
    changed.seed = Some(99);
    let err = run_eval(&changed.resolve().unwrap()).unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)));
}

#[test]
fn interrupted_run_leaves_manifest_but_no_results() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 3);
    let script = write_ours_script(dir.path(), "A");
    let out = dir.path().join("run");
    std::fs::create_dir_all(&out).unwrap();
    // Occupying traces/ with a file makes trace writing fail mid-run.
    std::fs::write(out.join("traces"), b"roadblock").unwrap();

    let config = args(&dataset, &script, &out, 3, 1).resolve().unwrap();
    let err = run_eval(&config).unwrap_err();
    assert!(matches!(err, HarnessError::Fatal(_)));
    assert!(
        out.join("manifest.json").exists(),
        "manifest written before evaluation"
    );
    assert!(
        !out.join("results.jsonl").exists(),
        "no results without a completed run"
    );
    let manifest = read_manifest(&out).unwrap();
    assert!(manifest.finished_at_ms.is_none());
}

#[test]
fn failed_questions_are_recorded_and_run_continues() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 3);
    // First question's expert call fails hard; the rest succeed.
    let script = serde_json::json!({
        "schema": "mock/v1",
        "entries": [
            {"tag": "qe", "fail": "refusal"},
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
    let script_path = dir.path().join("script.json");
    std::fs::write(&script_path, serde_json::to_string(&script).unwrap()).unwrap();

    let out = dir.path().join("run");
    let config = args(&dataset, &script_path, &out, 3, 1).resolve().unwrap();
    let outcome = run_eval(&config).unwrap();
    assert!(outcome.had_failures);
    let failed: Vec<_> = outcome
        .results
        .outcomes
        .iter()
        .filter(|o| o.failure.is_some())
        .collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].failure.as_deref(), Some("backend:refusal"));
    assert_eq!(
        failed[0].predicted, "UNPARSED",
        "failures score as incorrect"
    );
    assert_eq!(
        outcome.results.outcomes.len(),
        3,
        "run continued past the failure"
    );
}

#[test]
fn parallel_run_matches_sequential_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 8);
    let script = write_ours_script(dir.path(), "C");

    let sequential = {
        let out = dir.path().join("seq");
        let config = args(&dataset, &script, &out, 8, 1).resolve().unwrap();
        run_eval(&config).unwrap()
    };
    let parallel = {
        let out = dir.path().join("par");
        let mut a = args(&dataset, &script, &out, 8, 1);
        a.parallelism = Some(4);
        run_eval(&a.resolve().unwrap()).unwrap()
    };
    assert_eq!(sequential.results.outcomes, parallel.results.outcomes);
    assert_eq!(sequential.results.mean, parallel.results.mean);
}
