//! Gold-leakage audit: scan outbound prompts in stored traces for
//! sentinel strings. Only request messages are scanned; completions may
//! legitimately mention option keys.

use crate::store::{list_trace_files, read_trace};
use medqa_core::pipeline::PipelineTrace;
use std::path::{Path, PathBuf};

pub const DEFAULT_SENTINEL: &str = "XYZZY-GOLD";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakHit {
    pub trace_file: PathBuf,
    pub question_id: String,
    pub stage: String,
    pub seq: u64,
    pub needle: String,
}

/// Hits for one in-memory trace.
pub fn scan_trace(trace: &PipelineTrace, needle: &str) -> Vec<(String, u64)> {
    trace
        .exchanges()
        .filter(|x| {
            x.request
                .messages
                .iter()
                .any(|m| m.content.contains(needle))
        })
        .map(|x| (x.stage.clone(), x.seq))
        .collect()
}

/// Scan every trace under a run directory for the given sentinels.
pub fn scan_run_dir(out_dir: &Path, needles: &[String]) -> Result<Vec<LeakHit>, String> {
    let files = list_trace_files(out_dir);
    if files.is_empty() {
        return Err(format!("no trace files found under {}", out_dir.display()));
    }
    let mut hits = Vec::new();
    for file in files {
        let trace = read_trace(&file)?;
        for needle in needles {
            for (stage, seq) in scan_trace(&trace, needle) {
                hits.push(LeakHit {
                    trace_file: file.clone(),
                    question_id: trace.question_id.clone(),
                    stage,
                    seq,
                    needle: needle.clone(),
                });
            }
        }
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use medqa_core::backend::{ChatRequest, Completion};

    #[test]
    fn scan_finds_needle_in_requests_only() {
        let mut trace = PipelineTrace::new("q1", "ours");
        trace.record_exchange(
            ChatRequest::user("m", "qe", "clean prompt"),
            Some(Completion::stop("XYZZY-GOLD-q1 appears in output only")),
            None,
            1,
            Vec::new(),
            false,
        );
        assert!(
            scan_trace(&trace, "XYZZY-GOLD").is_empty(),
            "completions are not outbound"
        );
        trace.record_exchange(
            ChatRequest::user("m", "dm", "leaky prompt XYZZY-GOLD-q1"),
            Some(Completion::stop("x")),
            None,
            1,
            Vec::new(),
            false,
        );
        let hits = scan_trace(&trace, "XYZZY-GOLD");
        assert_eq!(hits, vec![("dm".to_string(), 1)]);
    }
}
