//! Parsers that turn free-text completions into structured values.
//!
//! All parsers are pure functions of their inputs and tolerate truncated
//! or messy model output. Only blank text is an error, and only where
//! the pipeline genuinely cannot proceed without content.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("completion is empty")]
    EmptyCompletion,
}

/// One expert's verdict on a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Vote {
    Agree,
    Disagree {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        suggestion: Option<String>,
    },
    Unparseable,
}

impl Vote {
    pub fn is_disagree(&self) -> bool {
        matches!(self, Vote::Disagree { .. })
    }
}

/// Outcome of extracting an answer key from a decision completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "key", rename_all = "snake_case")]
pub enum AnswerOutcome {
    /// Matched an explicit key mention ("answer is (C)", "Answer: C", "(C)", standalone "C").
    Letter(String),
    /// Matched the full text of one option.
    TextMatch(String),
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerParse {
    pub outcome: AnswerOutcome,
    pub raw: String,
}

impl AnswerParse {
    pub fn key(&self) -> Option<&str> {
        match &self.outcome {
            AnswerOutcome::Letter(k) | AnswerOutcome::TextMatch(k) => Some(k),
            AnswerOutcome::Failure => None,
        }
    }
}

/// One parsed clinical case. `raw` is always populated; the three
/// sections may be empty when the lenient fallback applies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCase {
    pub context: String,
    pub key_mechanism: String,
    pub neutrality_check: String,
    pub raw: String,
}

fn regex(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex compiles"))
}

// ---------------------------------------------------------------------------
// Expert domain extraction
// ---------------------------------------------------------------------------

fn strip_list_marker(line: &str) -> (&str, bool) {
    static MARKER: OnceLock<Regex> = OnceLock::new();
    let re = regex(&MARKER, r"^\s*(?:[-*•]+|\(?\d+[.)\]:]?)\s+");
    match re.find(line) {
        Some(m) => (&line[m.end()..], true),
        None => (line, false),
    }
}

fn label_value(line: &str) -> Option<&str> {
    static LABEL: OnceLock<Regex> = OnceLock::new();
    let re = regex(
        &LABEL,
        r"(?i)^\s*(?:field|domain|subfield|specialty|expertise|expert|option\s+[A-Za-z0-9]+)\s*:\s*(.+)$",
    );
    re.captures(line).map(|c| c.get(1).unwrap().as_str())
}

/// Split "1. Hematology 2. Gynecology" style inline enumerations.
fn split_inline_numbered(line: &str) -> Vec<&str> {
    static INLINE: OnceLock<Regex> = OnceLock::new();
    let re = regex(&INLINE, r"\d+[.)]\s*");
    let marks: Vec<(usize, usize)> = re.find_iter(line).map(|m| (m.start(), m.end())).collect();
    if marks.is_empty() {
        return Vec::new();
    }
    let mut parts = Vec::new();
    let lead = line[..marks[0].0].trim();
    if !lead.is_empty() {
        parts.push(lead);
    }
    for (i, &(_, end)) in marks.iter().enumerate() {
        let stop = marks.get(i + 1).map(|m| m.0).unwrap_or(line.len());
        let piece = line[end..stop].trim();
        if !piece.is_empty() {
            parts.push(piece);
        }
    }
    parts
}

fn clean_domain(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let before = s;
        s = s.trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '*');
        s = s.trim_end_matches(['.', ',', ';', ':']);
        s = s.trim();
        if s == before {
            break;
        }
    }
    s.to_string()
}

/// Extract up to `max_count` deduplicated domain names from a completion.
///
/// Accepts `Field: <name>` style declarations, numbered and bulleted
/// lists (inline or one per line), and comma/semicolon separated lists.
/// When nothing is extractable the trimmed first line stands in as a
/// single domain, so any non-blank completion yields at least one name.
pub fn parse_expert_domains(text: &str, max_count: usize) -> Result<Vec<String>, ParseError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(ParseError::EmptyCompletion);
    }
    let max_count = max_count.max(1);

    let mut candidates: Vec<String> = Vec::new();
    for line in trimmed.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (stripped, had_marker) = strip_list_marker(line);
        let stripped = stripped.trim_matches('*').trim();
        if let Some(value) = label_value(stripped) {
            candidates.push(value.to_string());
            continue;
        }
        let inline = split_inline_numbered(line);
        if inline.len() >= 2 {
            candidates.extend(inline.iter().map(|s| s.to_string()));
            continue;
        }
        if had_marker {
            candidates.push(stripped.to_string());
            continue;
        }
        if line.contains(',') || line.contains(';') {
            let parts: Vec<&str> = line
                .split([',', ';'])
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .collect();
            if parts.len() >= 2 && parts.iter().all(|p| p.len() <= 48 && !p.contains(':')) {
                candidates.extend(parts.iter().map(|s| s.to_string()));
            }
        }
    }

    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut out: Vec<String> = Vec::new();
    for candidate in candidates {
        let cleaned = clean_domain(&candidate);
        if cleaned.is_empty() || cleaned.len() > 80 {
            continue;
        }
        if seen.insert(cleaned.to_lowercase()) {
            out.push(cleaned);
            if out.len() == max_count {
                break;
            }
        }
    }

    if out.is_empty() {
        let first_line = trimmed
            .lines()
            .find(|l| !l.trim().is_empty())
            .unwrap_or(trimmed);
        let cleaned = clean_domain(strip_list_marker(first_line.trim()).0);
        out.push(if cleaned.is_empty() {
            first_line.trim().to_string()
        } else {
            cleaned
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Vote parsing
// ---------------------------------------------------------------------------

fn is_affirmative(token: &str) -> bool {
    token == "yes" || token.starts_with("agree") || token.starts_with("approv")
}

fn is_negative(token: &str) -> bool {
    token == "no" || token.starts_with("disagree") || token.starts_with("reject")
}

/// Total vote parser: every input maps to exactly one verdict.
///
/// The first affirmative or negative keyword token within the first
/// sentence decides. A negative verdict captures the remainder of the
/// text as the revision suggestion when one is present.
pub fn parse_vote(text: &str) -> Vote {
    let first_sentence_end = text
        .char_indices()
        .find(|(_, c)| matches!(c, '.' | '!' | '?' | '\n'))
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    let sentence = &text[..first_sentence_end];

    let mut token_start = None;
    for (i, c) in sentence
        .char_indices()
        .chain(std::iter::once((sentence.len(), ' ')))
    {
        if c.is_alphabetic() {
            token_start.get_or_insert(i);
            continue;
        }
        if let Some(start) = token_start.take() {
            let raw = &sentence[start..i];
            let token = raw.to_lowercase();
            if is_negative(&token) {
                let remainder = text[start + raw.len()..]
                    .trim_start_matches(|c: char| {
                        c.is_whitespace() || matches!(c, '.' | ',' | ':' | ';' | '-' | '!' | '?')
                    })
                    .trim();
                let suggestion = if remainder.is_empty() {
                    None
                } else {
                    Some(remainder.to_string())
                };
                return Vote::Disagree { suggestion };
            }
            if is_affirmative(&token) {
                return Vote::Agree;
            }
        }
    }
    Vote::Unparseable
}

// ---------------------------------------------------------------------------
// Answer extraction
// ---------------------------------------------------------------------------

fn key_alternation(options: &BTreeMap<String, String>) -> String {
    options
        .keys()
        .map(|k| regex::escape(k))
        .collect::<Vec<_>>()
        .join("|")
}

/// Extract an answer key from a completion.
///
/// First match wins in this order:
/// (a) an explicit declaration — "answer is (X)", "Answer: X",
///     "option X" — then a parenthesized key, then a standalone
///     uppercase key token; within each pattern the earliest mention
///     in the text wins (so "Both A and B" resolves to A);
/// (b) the longest option text occurring verbatim (case-insensitively);
/// (c) failure.
///
/// The returned key is always a member of the provided option set.
pub fn parse_answer(text: &str, options: &BTreeMap<String, String>) -> AnswerParse {
    let raw = text.to_string();
    if options.is_empty() {
        return AnswerParse {
            outcome: AnswerOutcome::Failure,
            raw,
        };
    }
    let keys = key_alternation(options);

    let declared = [
        format!(r#"(?i)\banswer\s*(?:is|:|=)\s*(?:option\s+)?[*('"\[#\s]*({keys})\b"#),
        format!(r"(?i)\b(?:option|choice)\s*[:\-]?\s*\(?\s*({keys})\b"),
        format!(r"[\(\[]\s*(?i:({keys}))\s*[\)\]]"),
    ];
    for pattern in &declared {
        let re = Regex::new(pattern).expect("answer pattern compiles");
        if let Some(caps) = re.captures(text) {
            let key = normalize_key(caps.get(1).unwrap().as_str(), options);
            return AnswerParse {
                outcome: AnswerOutcome::Letter(key),
                raw,
            };
        }
    }

    // Standalone key token, exact case, so articles like "a" never match.
    let standalone = Regex::new(&format!(r"\b({keys})\b")).expect("standalone pattern compiles");
    if let Some(caps) = standalone.captures(text) {
        let key = caps.get(1).unwrap().as_str().to_string();
        return AnswerParse {
            outcome: AnswerOutcome::Letter(key),
            raw,
        };
    }

    // Rule (b): longest option text wins; ties break on key order.
    let haystack = text.to_lowercase();
    let mut ranked: Vec<(&String, &String)> = options.iter().collect();
    ranked.sort_by(|a, b| b.1.trim().len().cmp(&a.1.trim().len()).then(a.0.cmp(b.0)));
    for (key, option_text) in ranked {
        let needle = option_text.trim().to_lowercase();
        if !needle.is_empty() && haystack.contains(&needle) {
            return AnswerParse {
                outcome: AnswerOutcome::TextMatch(key.clone()),
                raw,
            };
        }
    }

    AnswerParse {
        outcome: AnswerOutcome::Failure,
        raw,
    }
}

fn normalize_key(found: &str, options: &BTreeMap<String, String>) -> String {
    options
        .keys()
        .find(|k| k.eq_ignore_ascii_case(found))
        .cloned()
        .unwrap_or_else(|| found.to_uppercase())
}

// ---------------------------------------------------------------------------
// Case parsing
// ---------------------------------------------------------------------------

fn case_marker_re() -> &'static Regex {
    static MARKER: OnceLock<Regex> = OnceLock::new();
    regex(
        &MARKER,
        r"(?i)(?:\*+\s*|#+\s*)?\bcase\s*\d+\s*[:．.\-]?\s*\**",
    )
}

fn section_header_re() -> &'static Regex {
    static HEADER: OnceLock<Regex> = OnceLock::new();
    regex(
        &HEADER,
        r"(?im)^\s*(?:[*#>\-]+\s*)?(context|key\s+mechanism(?:\s*/\s*reasoning)?|reasoning|neutrality(?:\s+check)?)\s*\**\s*[:：]\**\s*",
    )
}

fn parse_case_sections(body: &str) -> ParsedCase {
    let mut case = ParsedCase {
        context: String::new(),
        key_mechanism: String::new(),
        neutrality_check: String::new(),
        raw: body.trim().to_string(),
    };
    let re = section_header_re();
    let headers: Vec<(usize, usize, String)> = re
        .captures_iter(body)
        .map(|c| {
            let whole = c.get(0).unwrap();
            (
                whole.start(),
                whole.end(),
                c.get(1).unwrap().as_str().to_lowercase(),
            )
        })
        .collect();
    for (i, (_, end, name)) in headers.iter().enumerate() {
        let stop = headers.get(i + 1).map(|h| h.0).unwrap_or(body.len());
        let content = body[*end..stop].trim().to_string();
        if name.starts_with("context") {
            case.context = content;
        } else if name.starts_with("key") || name.starts_with("reasoning") {
            case.key_mechanism = content;
        } else if name.starts_with("neutrality") {
            case.neutrality_check = content;
        }
    }
    case
}

/// Split a completion into clinical cases.
///
/// "Case N" markers delimit cases when present; otherwise blank-line
/// blocks are used when at least two blocks carry section headers; as a
/// last resort the whole text becomes one case with only `raw` set.
pub fn parse_cases(text: &str) -> Vec<ParsedCase> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return vec![ParsedCase {
            context: String::new(),
            key_mechanism: String::new(),
            neutrality_check: String::new(),
            raw: String::new(),
        }];
    }

    let marker = case_marker_re();
    let marks: Vec<(usize, usize)> = marker
        .find_iter(trimmed)
        .map(|m| (m.start(), m.end()))
        .collect();
    if !marks.is_empty() {
        let mut cases = Vec::new();
        for (i, &(start, end)) in marks.iter().enumerate() {
            let stop = marks.get(i + 1).map(|m| m.0).unwrap_or(trimmed.len());
            let segment = trimmed[start..stop].trim();
            let body = trimmed[end..stop].trim();
            if segment.is_empty() {
                continue;
            }
            let mut case = parse_case_sections(body);
            case.raw = segment.to_string();
            cases.push(case);
        }
        if !cases.is_empty() {
            return cases;
        }
    }

    let blocks: Vec<&str> = trimmed
        .split("\n\n")
        .map(str::trim)
        .filter(|b| !b.is_empty())
        .collect();
    let headed = blocks
        .iter()
        .filter(|b| section_header_re().is_match(b))
        .count();
    if blocks.len() >= 2 && headed >= 2 {
        return blocks.into_iter().map(parse_case_sections).collect();
    }

    vec![parse_case_sections(trimmed)]
}
