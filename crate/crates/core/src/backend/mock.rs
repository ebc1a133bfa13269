//! Deterministic scripted backend for tests and offline runs.
//!
//! Responses are selected by (stage tag, call sequence number): the n-th
//! matching call for a tag consumes the n-th matching entry. An entry can
//! additionally require a substring of the rendered prompt, which lets
//! tests script disagreement schedules precisely. Sticky entries never
//! get consumed, so "always vote No" is a single line of script.

use super::{Backend, BackendError, ChatRequest, Completion};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

/// Forced failure kinds for scripting error paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailKind {
    Network,
    Timeout,
    Malformed,
    Refusal,
}

/// One scripted response.
///
/// `tag` matches the request's stage tag exactly, or by prefix when it
/// ends in `/*`, or matches everything when it is `*`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Only match when the rendered prompt contains this substring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when_contains: Option<String>,
    /// Sticky entries are never consumed.
    #[serde(default)]
    pub sticky: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<FailKind>,
}

/// Serializable script, loadable from a JSON file via `--mock-script`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub schema: Option<String>,
    pub entries: Vec<ScriptEntry>,
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

struct EntryState {
    entry: ScriptEntry,
    consumed: bool,
}

struct Inner {
    entries: Mutex<Vec<EntryState>>,
    calls: AtomicU64,
}

/// Scripted mock backend. Cloning shares the script state and counters.
#[derive(Clone)]
pub struct MockBackend {
    inner: Arc<Inner>,
}

impl MockBackend {
    pub fn from_script(script: MockScript) -> Self {
        let entries = script
            .entries
            .into_iter()
            .map(|entry| EntryState {
                entry,
                consumed: false,
            })
            .collect();
        Self {
            inner: Arc::new(Inner {
                entries: Mutex::new(entries),
                calls: AtomicU64::new(0),
            }),
        }
    }

    pub fn builder() -> MockBuilder {
        MockBuilder {
            entries: Vec::new(),
        }
    }

    /// Total completed or failed calls served so far.
    pub fn calls(&self) -> u64 {
        self.inner.calls.load(Ordering::SeqCst)
    }

    fn tag_matches(pattern: &str, tag: &str) -> bool {
        if pattern == "*" {
            return true;
        }
        if let Some(prefix) = pattern.strip_suffix("/*") {
            return tag == prefix || tag.starts_with(&format!("{prefix}/"));
        }
        pattern == tag
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        self.inner.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request.prompt_text();
        let mut entries = self.inner.entries.lock().unwrap();
        let slot = entries.iter_mut().find(|state| {
            !state.consumed
                && Self::tag_matches(&state.entry.tag, &request.stage_tag)
                && state
                    .entry
                    .when_contains
                    .as_ref()
                    .is_none_or(|needle| prompt.contains(needle.as_str()))
        });
        let Some(state) = slot else {
            return Err(BackendError::Refusal {
                status: None,
                message: format!(
                    "mock: no scripted response for stage tag '{}'",
                    request.stage_tag
                ),
            });
        };
        if !state.entry.sticky {
            state.consumed = true;
        }
        if let Some(kind) = state.entry.fail {
            return Err(match kind {
                FailKind::Network => BackendError::Network {
                    attempts: 1,
                    last: "scripted network failure".into(),
                },
                FailKind::Timeout => BackendError::Timeout {
                    attempts: 1,
                    last: "scripted timeout".into(),
                },
                FailKind::Malformed => {
                    BackendError::MalformedResponse("scripted malformed response".into())
                }
                FailKind::Refusal => BackendError::Refusal {
                    status: Some(400),
                    message: "scripted refusal".into(),
                },
            });
        }
        Ok(Completion::stop(
            state.entry.response.clone().unwrap_or_default(),
        ))
    }
}

/// Fluent script construction for tests.
pub struct MockBuilder {
    entries: Vec<ScriptEntry>,
}

impl MockBuilder {
    fn push(
        mut self,
        tag: &str,
        response: Option<String>,
        when: Option<String>,
        sticky: bool,
        fail: Option<FailKind>,
    ) -> Self {
        self.entries.push(ScriptEntry {
            tag: tag.to_string(),
            response,
            when_contains: when,
            sticky,
            fail,
        });
        self
    }

    pub fn reply(self, tag: &str, response: &str) -> Self {
        self.push(tag, Some(response.to_string()), None, false, None)
    }

    pub fn reply_sticky(self, tag: &str, response: &str) -> Self {
        self.push(tag, Some(response.to_string()), None, true, None)
    }

    pub fn reply_when(self, tag: &str, contains: &str, response: &str) -> Self {
        self.push(
            tag,
            Some(response.to_string()),
            Some(contains.to_string()),
            false,
            None,
        )
    }

    pub fn reply_when_sticky(self, tag: &str, contains: &str, response: &str) -> Self {
        self.push(
            tag,
            Some(response.to_string()),
            Some(contains.to_string()),
            true,
            None,
        )
    }

    pub fn reply_wildcard_sticky(self, response: &str) -> Self {
        self.push("*", Some(response.to_string()), None, true, None)
    }

    pub fn fail(self, tag: &str, kind: FailKind) -> Self {
        self.push(tag, None, None, false, Some(kind))
    }

    pub fn fail_sticky(self, tag: &str, kind: FailKind) -> Self {
        self.push(tag, None, None, true, Some(kind))
    }

    pub fn entry(mut self, entry: ScriptEntry) -> Self {
        self.entries.push(entry);
        self
    }

    pub fn build(self) -> MockBackend {
        MockBackend::from_script(MockScript {
            schema: Some("mock/v1".into()),
            entries: self.entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(tag: &str, content: &str) -> ChatRequest {
        ChatRequest::user("m", tag, content)
    }

    #[test]
    fn scripted_fixture_echoes_its_script() {
        let mock = MockBackend::builder().reply("vote/qe1", "Yes").build();
        let out = mock.complete(&req("vote/qe1", "approve?")).unwrap();
        assert_eq!(out.text, "Yes");
        assert_eq!(out.finish_reason, super::super::FinishReason::Stop);
    }

    #[test]
    fn sequence_number_selects_entries_in_order() {
        let mock = MockBackend::builder()
            .reply("vote/qe1", "No. Fix the intro.")
            .reply("vote/qe1", "Yes")
            .build();
        assert_eq!(
            mock.complete(&req("vote/qe1", "")).unwrap().text,
            "No. Fix the intro."
        );
        assert_eq!(mock.complete(&req("vote/qe1", "")).unwrap().text, "Yes");
    }

    #[test]
    fn exhausted_script_refuses() {
        let mock = MockBackend::builder().reply("t", "once").build();
        mock.complete(&req("t", "")).unwrap();
        let err = mock.complete(&req("t", "")).unwrap_err();
        assert!(matches!(err, BackendError::Refusal { .. }));
    }

    #[test]
    fn substring_matcher_gates_entries() {
        let mock = MockBackend::builder()
            .reply_when_sticky("dm", "CASEFUL", "The answer is (B).")
            .reply_sticky("dm", "The answer is (A).")
            .build();
        assert_eq!(
            mock.complete(&req("dm", "report: CASEFUL digest"))
                .unwrap()
                .text,
            "The answer is (B)."
        );
        assert_eq!(
            mock.complete(&req("dm", "report: plain digest"))
                .unwrap()
                .text,
            "The answer is (A)."
        );
    }

    #[test]
    fn wildcard_and_prefix_tags() {
        let mock = MockBackend::builder()
            .reply_sticky("vote/*", "No. Needs work.")
            .reply_wildcard_sticky("fallback")
            .build();
        assert_eq!(
            mock.complete(&req("vote/qe1", "")).unwrap().text,
            "No. Needs work."
        );
        assert_eq!(
            mock.complete(&req("vote/oe3", "")).unwrap().text,
            "No. Needs work."
        );
        assert_eq!(mock.complete(&req("dm", "")).unwrap().text, "fallback");
    }

    #[test]
    fn script_round_trips_through_json() {
        let script = MockScript {
            schema: Some("mock/v1".into()),
            entries: vec![ScriptEntry {
                tag: "dm".into(),
                response: Some("The answer is (C).".into()),
                when_contains: None,
                sticky: true,
                fail: None,
            }],
        };
        let text = serde_json::to_string(&script).unwrap();
        let back = MockScript::from_json(&text).unwrap();
        assert_eq!(back.entries.len(), 1);
        assert_eq!(back.entries[0].tag, "dm");
    }
}
