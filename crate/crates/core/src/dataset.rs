//! MedQA-style record ingestion and seeded sampling.
//!
//! The loader accepts line-delimited JSON in the published MedQA shape:
//!
//! ```json
//! {"question": "...", "options": {"A": "...", "B": "..."}, "answer_idx": "B", "answer": "...", "id": "optional"}
//! ```
//!
//! `answer_idx` holds the gold option key; when absent, `answer` is used
//! and may be either a key or the full text of the gold option. Both the
//! 4-option and 5-option variants are accepted. Ids default to the line
//! number when absent.
//!
//! Sampling uses ChaCha8 seeded by a `u64` and a partial Fisher-Yates
//! shuffle over `next_u64`, so draws are byte-identical across platforms.

use crate::baselines::FewShotExemplar;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// One multiple-choice item. The gold key is quarantined from prompts:
/// nothing in the pipeline or baselines may bind it into a rendered
/// prompt, and the leakage audit verifies that with sentinel golds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    pub options: BTreeMap<String, String>,
    pub gold: String,
}

impl QAItem {
    /// Options rendered one per line as "A. text".
    pub fn options_block(&self) -> String {
        self.options
            .iter()
            .map(|(k, v)| format!("{k}. {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        if self.options.len() < 2 || self.options.len() > 5 {
            return Err(format!(
                "expected 2..=5 options, got {}",
                self.options.len()
            ));
        }
        for key in self.options.keys() {
            if key.len() != 1 || !('A'..='E').contains(&key.chars().next().unwrap()) {
                return Err(format!("option key '{key}' is not one of A..E"));
            }
        }
        if !self.options.contains_key(&self.gold) {
            return Err(format!(
                "gold key '{}' is not among the option keys",
                self.gold
            ));
        }
        Ok(())
    }
}

/// The sampling protocol: `run_count` independent draws of
/// `sample_size` items, one seed per draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub sample_size: usize,
    pub run_count: usize,
    pub seeds: Vec<u64>,
}

impl SamplePlan {
    /// Seeds derived as `base_seed + run_index`.
    pub fn with_base_seed(sample_size: usize, run_count: usize, base_seed: u64) -> Self {
        Self {
            sample_size,
            run_count,
            seeds: (0..run_count as u64)
                .map(|i| base_seed.wrapping_add(i))
                .collect(),
        }
    }
}

impl Default for SamplePlan {
    fn default() -> Self {
        Self::with_base_seed(300, 3, 1)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error on line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("insufficient items: need {needed}, have {available}")]
    InsufficientItems { needed: usize, available: usize },
    #[error("sample plan declares {declared} seeds for {runs} runs")]
    SeedCountMismatch { declared: usize, runs: usize },
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    question: String,
    options: BTreeMap<String, String>,
    #[serde(default)]
    answer_idx: Option<String>,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    reasoning: Option<String>,
}

fn record_from_line(line_no: usize, line: &str) -> Result<(QAItem, Option<String>), DatasetError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;

    let options: BTreeMap<String, String> = raw
        .options
        .into_iter()
        .map(|(k, v)| (k.trim().to_uppercase(), v))
        .collect();

    let gold = resolve_gold(&options, raw.answer_idx.as_deref(), raw.answer.as_deref()).map_err(
        |message| DatasetError::Validation {
            line: line_no,
            message,
        },
    )?;

    let item = QAItem {
        id: raw.id.unwrap_or_else(|| format!("line-{line_no}")),
        question: raw.question,
        options,
        gold,
    };
    item.validate()
        .map_err(|message| DatasetError::Validation {
            line: line_no,
            message,
        })?;
    Ok((item, raw.reasoning))
}

fn resolve_gold(
    options: &BTreeMap<String, String>,
    answer_idx: Option<&str>,
    answer: Option<&str>,
) -> Result<String, String> {
    if let Some(idx) = answer_idx {
        let key = idx.trim().to_uppercase();
        return if options.contains_key(&key) {
            Ok(key)
        } else {
            Err(format!("answer_idx '{idx}' is not among the option keys"))
        };
    }
    let Some(answer) = answer else {
        return Err("record has neither answer_idx nor answer".into());
    };
    let trimmed = answer.trim();
    let as_key = trimmed.to_uppercase();
    if options.contains_key(&as_key) {
        return Ok(as_key);
    }
    for (key, text) in options {
        if text.trim().eq_ignore_ascii_case(trimmed) {
            return Ok(key.clone());
        }
    }
    Err(format!(
        "answer '{trimmed}' matches neither an option key nor an option text"
    ))
}

/// Parse items from line-delimited JSON text. The first malformed line
/// aborts the load with its line number.
pub fn load_str(text: &str) -> Result<Vec<QAItem>, DatasetError> {
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (item, _) = record_from_line(i + 1, line)?;
        items.push(item);
    }
    Ok(items)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<QAItem>, DatasetError> {
    load_str(&std::fs::read_to_string(path)?)
}

/// Serialize items back to the documented line format. `load_str` of the
/// output reproduces the input exactly.
pub fn serialize_items(items: &[QAItem]) -> String {
    let mut out = String::new();
    for item in items {
        let record = serde_json::json!({
            "id": item.id,
            "question": item.question,
            "options": item.options,
            "answer_idx": item.gold,
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

/// Exemplar files use the dataset record shape plus an optional
/// `reasoning` field with a worked solution.
pub fn load_exemplars(path: impl AsRef<Path>) -> Result<Vec<FewShotExemplar>, DatasetError> {
    load_exemplars_str(&std::fs::read_to_string(path)?)
}

pub fn load_exemplars_str(text: &str) -> Result<Vec<FewShotExemplar>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (item, reasoning) = record_from_line(i + 1, line)?;
        out.push(FewShotExemplar { item, reasoning });
    }
    Ok(out)
}

/// Partial Fisher-Yates: after `take` steps, `indices[..take]` is a
/// uniform draw without replacement. The modulo step is part of the
/// pinned algorithm, chosen for portability over perfect uniformity.
fn seeded_draw_indices(n: usize, take: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..take.min(n) {
        let remaining = (n - i) as u64;
        let j = i + (rng.next_u64() % remaining) as usize;
        indices.swap(i, j);
    }
    indices.truncate(take);
    indices
}

/// Execute a sampling plan: each run draws `sample_size` items without
/// replacement using its own seed. Identical inputs reproduce identical
/// draws on any platform.
pub fn sample(items: &[QAItem], plan: &SamplePlan) -> Result<Vec<Vec<QAItem>>, DatasetError> {
    if plan.sample_size > items.len() {
        return Err(DatasetError::InsufficientItems {
            needed: plan.sample_size,
            available: items.len(),
        });
    }
    if plan.seeds.len() != plan.run_count {
        return Err(DatasetError::SeedCountMismatch {
            declared: plan.seeds.len(),
            runs: plan.run_count,
        });
    }
    Ok(plan
        .seeds
        .iter()
        .map(|&seed| {
            seeded_draw_indices(items.len(), plan.sample_size, seed)
                .into_iter()
                .map(|i| items[i].clone())
                .collect()
        })
        .collect())
}

/// Deterministic seeded exemplar draw avoiding the excluded ids.
pub fn select_exemplars(
    items: &[QAItem],
    k: usize,
    seed: u64,
    exclude_ids: &BTreeSet<String>,
) -> Result<Vec<FewShotExemplar>, DatasetError> {
    let pool: Vec<FewShotExemplar> = items
        .iter()
        .map(|item| FewShotExemplar {
            item: item.clone(),
            reasoning: None,
        })
        .collect();
    select_exemplars_from(&pool, k, seed, exclude_ids)
}

/// Seeded draw from an already-loaded exemplar pool (e.g. an exemplar
/// file with reasoning fields), avoiding the excluded ids.
pub fn select_exemplars_from(
    pool: &[FewShotExemplar],
    k: usize,
    seed: u64,
    exclude_ids: &BTreeSet<String>,
) -> Result<Vec<FewShotExemplar>, DatasetError> {
    let filtered: Vec<&FewShotExemplar> = pool
        .iter()
        .filter(|e| !exclude_ids.contains(&e.item.id))
        .collect();
    if k > filtered.len() {
        return Err(DatasetError::InsufficientItems {
            needed: k,
            available: filtered.len(),
        });
    }
    Ok(seeded_draw_indices(filtered.len(), k, seed)
        .into_iter()
        .map(|i| filtered[i].clone())
        .collect())
}
