//! Prompt-template catalog, placeholder rendering, and completion parsers.
//!
//! The catalog holds exactly ten templates, one per pipeline call site.
//! Bodies live in a TOML data file (the default ships compiled in) so
//! prompt engineering never requires code changes. Rendering substitutes
//! `{name}` placeholders in a single left-to-right pass: bound values are
//! inserted verbatim and never rescanned, and an unbound placeholder is
//! an error, so no unexpanded placeholder can survive in the output.

mod parse;

pub use parse::{
    parse_answer, parse_cases, parse_expert_domains, parse_vote, AnswerOutcome, AnswerParse,
    ParsedCase, Vote,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

/// The ten template ids, one per pipeline call site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateId {
    /// Question-expert generation.
    Qe,
    /// Option-expert generation.
    Oe,
    /// Question analysis by one question expert.
    Qa,
    /// Option analysis by one option expert.
    Oa,
    /// Clinical case generation.
    Exa,
    /// Report digest synthesis.
    Rp,
    /// Per-expert approval vote on the report.
    Vote,
    /// Suggestion elicitation after a rejection.
    Modify,
    /// Report revision from accumulated suggestions.
    Revise,
    /// Final decision over the report.
    Dm,
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::Qe,
        TemplateId::Oe,
        TemplateId::Qa,
        TemplateId::Oa,
        TemplateId::Exa,
        TemplateId::Rp,
        TemplateId::Vote,
        TemplateId::Modify,
        TemplateId::Revise,
        TemplateId::Dm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateId::Qe => "qe",
            TemplateId::Oe => "oe",
            TemplateId::Qa => "qa",
            TemplateId::Oa => "oa",
            TemplateId::Exa => "exa",
            TemplateId::Rp => "rp",
            TemplateId::Vote => "vote",
            TemplateId::Modify => "modify",
            TemplateId::Revise => "revise",
            TemplateId::Dm => "dm",
        }
    }

    pub fn parse(s: &str) -> Option<TemplateId> {
        TemplateId::ALL.iter().copied().find(|id| id.as_str() == s)
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One template: a body with `{name}` placeholders and the declared set
/// of required placeholders, which must match the body exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
    pub required: BTreeSet<String>,
}

/// Placeholder bindings for one render call.
pub type Bindings = BTreeMap<String, String>;

/// Convenience constructor for bindings maps.
pub fn bindings<K, V, I>(pairs: I) -> Bindings
where
    K: Into<String>,
    V: Into<String>,
    I: IntoIterator<Item = (K, V)>,
{
    pairs
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("missing binding for placeholder '{0}'")]
    MissingBinding(String),
    #[error("unknown template id '{0}'")]
    UnknownTemplate(String),
    #[error("catalog is missing template '{0}'")]
    MissingTemplate(TemplateId),
    #[error("template '{id}': declared placeholders {declared:?} do not match body placeholders {found:?}")]
    PlaceholderMismatch {
        id: TemplateId,
        declared: Vec<String>,
        found: Vec<String>,
    },
    #[error("catalog parse error: {0}")]
    CatalogParse(String),
    #[error("io error reading catalog: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize, Serialize)]
struct CatalogFile {
    #[serde(default)]
    schema: Option<String>,
    templates: BTreeMap<String, TemplateFile>,
}

#[derive(Deserialize, Serialize)]
struct TemplateFile {
    required: Vec<String>,
    body: String,
}

/// Registry of the ten prompt templates.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptCatalog {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

const DEFAULT_CATALOG: &str = include_str!("default_prompts.toml");

impl PromptCatalog {
    /// The compiled-in default catalog.
    pub fn default_catalog() -> Self {
        Self::from_toml(DEFAULT_CATALOG).expect("default catalog is valid")
    }

    /// Parse a catalog file. All ten templates must be present and each
    /// declared `required` set must match the placeholders in the body.
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let file: CatalogFile =
            toml::from_str(text).map_err(|e| PromptError::CatalogParse(e.to_string()))?;
        let mut templates = BTreeMap::new();
        for (key, tf) in file.templates {
            let id =
                TemplateId::parse(&key).ok_or_else(|| PromptError::UnknownTemplate(key.clone()))?;
            let declared: BTreeSet<String> = tf.required.into_iter().collect();
            let found = placeholders_in(&tf.body);
            if declared != found {
                return Err(PromptError::PlaceholderMismatch {
                    id,
                    declared: declared.into_iter().collect(),
                    found: found.into_iter().collect(),
                });
            }
            templates.insert(
                id,
                PromptTemplate {
                    id,
                    body: tf.body.trim().to_string(),
                    required: declared,
                },
            );
        }
        for id in TemplateId::ALL {
            if !templates.contains_key(&id) {
                return Err(PromptError::MissingTemplate(id));
            }
        }
        Ok(Self { templates })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn template(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    /// Stable digest of the catalog contents, recorded in run manifests.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for id in TemplateId::ALL {
            let t = &self.templates[&id];
            hasher.update(id.as_str().as_bytes());
            hasher.update([0]);
            hasher.update(t.body.as_bytes());
            hasher.update([0]);
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Render a template: every placeholder must be bound; bound values
    /// appear verbatim in the output and are never rescanned.
    pub fn render(&self, id: TemplateId, bindings: &Bindings) -> Result<String, PromptError> {
        render_body(&self.templates[&id].body, bindings)
    }
}

/// True placeholder names are `[a-z_][a-z0-9_]*`; anything else after a
/// brace is treated as literal text. `{{` and `}}` escape literal braces.
fn scan_placeholder(rest: &str) -> Option<(&str, usize)> {
    let bytes = rest.as_bytes();
    if bytes.is_empty() || !(bytes[0].is_ascii_lowercase() || bytes[0] == b'_') {
        return None;
    }
    let mut end = 1;
    while end < bytes.len()
        && (bytes[end].is_ascii_lowercase() || bytes[end].is_ascii_digit() || bytes[end] == b'_')
    {
        end += 1;
    }
    if end < bytes.len() && bytes[end] == b'}' {
        Some((&rest[..end], end + 1))
    } else {
        None
    }
}

fn render_body(body: &str, bindings: &Bindings) -> Result<String, PromptError> {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
        } else if let Some(after) = tail.strip_prefix('{') {
            match scan_placeholder(after) {
                Some((name, consumed)) => {
                    let value = bindings
                        .get(name)
                        .ok_or_else(|| PromptError::MissingBinding(name.to_string()))?;
                    out.push_str(value);
                    rest = &after[consumed..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        } else {
            out.push('}');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn placeholders_in(body: &str) -> BTreeSet<String> {
    let mut found = BTreeSet::new();
    let mut rest = body;
    while let Some(pos) = rest.find('{') {
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            rest = after;
            continue;
        }
        let after = &tail[1..];
        match scan_placeholder(after) {
            Some((name, consumed)) => {
                found.insert(name.to_string());
                rest = &after[consumed..];
            }
            None => rest = after,
        }
    }
    found
}
