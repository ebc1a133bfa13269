//! Per-question audit trace: every prompt, completion, vote, report
//! version, and the decision, in append order.
//!
//! The file form is line-delimited JSON: a header record followed by one
//! record per event. `at_ms` is the only wall-clock field; everything
//! else is deterministic, which is what makes replay comparison possible.

use super::{Decision, ExpertPanel, OptionAnalysis, QuestionAnalysis, Report, VoteRound};
use crate::backend::{ChatRequest, Completion};
use crate::prompts::ParsedCase;
use serde::{Deserialize, Serialize};

pub const TRACE_SCHEMA: &str = "trace/v1";

/// One backend call, successful or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    /// Position among this trace's exchanges, 0-based.
    pub seq: u64,
    pub stage: String,
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<Completion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
    /// Error text of failed attempts that preceded the final outcome.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attempt_errors: Vec<String>,
    pub from_cache: bool,
    /// Wall-clock milliseconds; excluded from replay comparisons.
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Exchange(Exchange),
    Panel {
        panel: ExpertPanel,
    },
    QuestionAnalyses {
        analyses: Vec<QuestionAnalysis>,
    },
    OptionAnalyses {
        analyses: Vec<OptionAnalysis>,
    },
    Cases {
        cases: Vec<ParsedCase>,
    },
    Report {
        report: Report,
    },
    VoteRound {
        round: VoteRound,
    },
    VotingSummary {
        unanimous: bool,
        rounds: u32,
    },
    Decision {
        decision: Decision,
    },
    Warning {
        stage: String,
        message: String,
    },
    Failure {
        stage: String,
        class: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceHeader {
    schema: String,
    question_id: String,
    method: String,
}

/// Complete per-question record, events in production order.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineTrace {
    pub question_id: String,
    pub method: String,
    pub events: Vec<TraceEvent>,
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl PipelineTrace {
    pub fn new(question_id: impl Into<String>, method: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            method: method.into(),
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn record_exchange(
        &mut self,
        request: ChatRequest,
        completion: Option<Completion>,
        error: Option<String>,
        attempts: u32,
        attempt_errors: Vec<String>,
        from_cache: bool,
    ) {
        let seq = self.exchanges().count() as u64;
        let stage = request.stage_tag.clone();
        self.push(TraceEvent::Exchange(Exchange {
            seq,
            stage,
            request,
            completion,
            error,
            attempts,
            attempt_errors,
            from_cache,
            at_ms: now_ms(),
        }));
    }

    pub fn warn(&mut self, stage: &str, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!(stage, %message);
        self.push(TraceEvent::Warning {
            stage: stage.to_string(),
            message,
        });
    }

    pub fn exchanges(&self) -> impl Iterator<Item = &Exchange> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Exchange(x) => Some(x),
            _ => None,
        })
    }

    pub fn panel(&self) -> Option<&ExpertPanel> {
        self.events.iter().find_map(|e| match e {
            TraceEvent::Panel { panel } => Some(panel),
            _ => None,
        })
    }

    /// All report versions in order, version 0 first.
    pub fn report_history(&self) -> Vec<&Report> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Report { report } => Some(report),
                _ => None,
            })
            .collect()
    }

    pub fn vote_rounds(&self) -> Vec<&VoteRound> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::VoteRound { round } => Some(round),
                _ => None,
            })
            .collect()
    }

    pub fn decision(&self) -> Option<&Decision> {
        self.events.iter().find_map(|e| match e {
            TraceEvent::Decision { decision } => Some(decision),
            _ => None,
        })
    }

    pub fn failure(&self) -> Option<(&str, &str, &str)> {
        self.events.iter().find_map(|e| match e {
            TraceEvent::Failure {
                stage,
                class,
                message,
            } => Some((stage.as_str(), class.as_str(), message.as_str())),
            _ => None,
        })
    }

    pub fn warnings(&self) -> Vec<(&str, &str)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Warning { stage, message } => Some((stage.as_str(), message.as_str())),
                _ => None,
            })
            .collect()
    }

    pub fn unanimous(&self) -> Option<bool> {
        self.events.iter().find_map(|e| match e {
            TraceEvent::VotingSummary { unanimous, .. } => Some(*unanimous),
            _ => None,
        })
    }

    /// True when any outbound request message contains `needle`.
    pub fn any_prompt_contains(&self, needle: &str) -> bool {
        self.exchanges().any(|x| {
            x.request
                .messages
                .iter()
                .any(|m| m.content.contains(needle))
        })
    }

    /// Line-delimited serialization: header record then one record per event.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = TraceHeader {
            schema: TRACE_SCHEMA.into(),
            question_id: self.question_id.clone(),
            method: self.method.clone(),
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: TraceHeader = serde_json::from_str(lines.next().unwrap_or("{}"))?;
        let mut events = Vec::new();
        for line in lines {
            events.push(serde_json::from_str(line)?);
        }
        Ok(Self {
            question_id: header.question_id,
            method: header.method,
            events,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::FinishReason;

    #[test]
    fn jsonl_round_trip() {
        let mut trace = PipelineTrace::new("q1", "ours");
        trace.record_exchange(
            ChatRequest::user("m", "qe", "classify this"),
            Some(Completion {
                text: "Field: Cardiology".into(),
                finish_reason: FinishReason::Stop,
                token_usage: None,
            }),
            None,
            1,
            Vec::new(),
            false,
        );
        trace.warn("report", "missing Total Analysis header");
        let text = trace.to_jsonl();
        let back = PipelineTrace::from_jsonl(&text).unwrap();
        assert_eq!(back, trace);
        assert_eq!(back.exchanges().count(), 1);
        assert_eq!(back.warnings().len(), 1);
    }

    #[test]
    fn exchange_seq_counts_only_exchanges() {
        let mut trace = PipelineTrace::new("q1", "ours");
        trace.warn("x", "noise");
        trace.record_exchange(
            ChatRequest::user("m", "a", "p"),
            Some(Completion::stop("1")),
            None,
            1,
            Vec::new(),
            false,
        );
        trace.record_exchange(
            ChatRequest::user("m", "b", "p"),
            Some(Completion::stop("2")),
            None,
            1,
            Vec::new(),
            false,
        );
        let seqs: Vec<u64> = trace.exchanges().map(|x| x.seq).collect();
        assert_eq!(seqs, vec![0, 1]);
    }
}
