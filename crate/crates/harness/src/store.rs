//! Persistence: manifests, results, traces, all written atomically
//! (temp file + rename) so an interrupted run never leaves torn files.
//!
//! Results and traces are line-delimited structured records; manifests
//! are single structured documents. All formats carry a schema tag.

use crate::config::RunConfig;
use medqa_core::metrics::MetricsReport;
use medqa_core::pipeline::PipelineTrace;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const MANIFEST_SCHEMA: &str = "manifest/v1";
pub const RESULTS_SCHEMA: &str = "results/v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const TABLE_FILE: &str = "table.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub run_id: String,
    pub config: RunConfig,
    pub prompt_catalog_digest: String,
    pub seeds: Vec<u64>,
    pub exemplar_seed: u64,
    pub model_id: String,
    pub started_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at_ms: Option<u64>,
    pub deviation_notes: Vec<String>,
}

/// One evaluated question within one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    /// 1-based run index.
    pub run: usize,
    pub id: String,
    pub gold: String,
    pub predicted: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub schema: String,
    pub method: String,
    pub shots: usize,
    pub per_run: Vec<MetricsReport>,
    pub mean: MetricsReport,
    pub std: MetricsReport,
    pub outcomes: Vec<QuestionRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ResultsLine {
    Header {
        schema: String,
        manifest: String,
        method: String,
        shots: usize,
    },
    Outcome(QuestionRecord),
    RunMetrics {
        run: usize,
        metrics: MetricsReport,
    },
    Aggregate {
        mean: MetricsReport,
        std: MetricsReport,
    },
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Write via a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> std::io::Result<()> {
    let bytes = serde_json::to_vec_pretty(manifest)?;
    write_atomic(&dir.join(MANIFEST_FILE), &bytes)
}

pub fn read_manifest(dir: &Path) -> std::io::Result<RunManifest> {
    let bytes = std::fs::read(dir.join(MANIFEST_FILE))?;
    serde_json::from_slice(&bytes).map_err(Into::into)
}

pub fn write_results(dir: &Path, results: &ResultsRecord) -> std::io::Result<()> {
    let mut out = String::new();
    let mut push = |line: &ResultsLine| {
        out.push_str(&serde_json::to_string(line).expect("results line serializes"));
        out.push('\n');
    };
    push(&ResultsLine::Header {
        schema: results.schema.clone(),
        manifest: MANIFEST_FILE.to_string(),
        method: results.method.clone(),
        shots: results.shots,
    });
    for outcome in &results.outcomes {
        push(&ResultsLine::Outcome(outcome.clone()));
    }
    for (i, metrics) in results.per_run.iter().enumerate() {
        push(&ResultsLine::RunMetrics {
            run: i + 1,
            metrics: metrics.clone(),
        });
    }
    push(&ResultsLine::Aggregate {
        mean: results.mean.clone(),
        std: results.std.clone(),
    });
    write_atomic(&dir.join(RESULTS_FILE), out.as_bytes())
}

pub fn read_results(path: &Path) -> Result<ResultsRecord, String> {
    let path = if path.is_dir() {
        path.join(RESULTS_FILE)
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read results {}: {e}", path.display()))?;
    let mut method = String::new();
    let mut shots = 0;
    let mut schema = RESULTS_SCHEMA.to_string();
    let mut outcomes = Vec::new();
    let mut per_run = Vec::new();
    let mut aggregate = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ResultsLine =
            serde_json::from_str(line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?;
        match parsed {
            ResultsLine::Header {
                schema: s,
                method: m,
                shots: n,
                ..
            } => {
                schema = s;
                method = m;
                shots = n;
            }
            ResultsLine::Outcome(record) => outcomes.push(record),
            ResultsLine::RunMetrics { metrics, .. } => per_run.push(metrics),
            ResultsLine::Aggregate { mean, std } => aggregate = Some((mean, std)),
        }
    }
    let (mean, std) =
        aggregate.ok_or_else(|| format!("{}: no aggregate record", path.display()))?;
    Ok(ResultsRecord {
        schema,
        method,
        shots,
        per_run,
        mean,
        std,
        outcomes,
    })
}

/// Replace any character outside `[A-Za-z0-9._-]` so ids are safe file names.
pub fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn trace_dir(out_dir: &Path, run: usize) -> PathBuf {
    out_dir.join("traces").join(format!("run{run}"))
}

pub fn trace_path(out_dir: &Path, run: usize, question_id: &str) -> PathBuf {
    trace_dir(out_dir, run).join(format!("{}.jsonl", sanitize_id(question_id)))
}

pub fn write_trace(out_dir: &Path, run: usize, trace: &PipelineTrace) -> std::io::Result<()> {
    write_atomic(
        &trace_path(out_dir, run, &trace.question_id),
        trace.to_jsonl().as_bytes(),
    )
}

pub fn read_trace(path: &Path) -> Result<PipelineTrace, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read trace {}: {e}", path.display()))?;
    PipelineTrace::from_jsonl(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// All trace files under a run directory, sorted for determinism.
pub fn list_trace_files(out_dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let traces = out_dir.join("traces");
    let Ok(runs) = std::fs::read_dir(&traces) else {
        return files;
    };
    for run in runs.flatten() {
        if let Ok(entries) = std::fs::read_dir(run.path()) {
            for entry in entries.flatten() {
                if entry.path().extension().is_some_and(|e| e == "jsonl") {
                    files.push(entry.path());
                }
            }
        }
    }
    files.sort();
    files
}

/// Rewrite a trace file's lines with every wall-clock field zeroed, for
/// byte comparison between replayed runs.
pub fn normalize_trace_text(text: &str) -> String {
    let mut out = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<serde_json::Value>(line) {
            Ok(mut value) => {
                if let Some(at) = value.get_mut("at_ms") {
                    *at = serde_json::Value::from(0u64);
                }
                out.push_str(&value.to_string());
            }
            Err(_) => out.push_str(line),
        }
        out.push('\n');
    }
    out
}
