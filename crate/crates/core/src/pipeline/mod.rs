//! Six-stage multi-agent orchestrator.
//!
//! For one question: generate question and option expert panels, collect
//! per-expert question analyses, option analyses over the full option
//! set, generate 1-2 supporting clinical cases, synthesize the report
//! digest, run the bounded voting/revision loop until unanimity or the
//! iteration cap, then make the final decision. Every backend exchange
//! and stage product is recorded in a [`PipelineTrace`].
//!
//! The gold answer is never bound into any rendered prompt; the leakage
//! audit enforces this with sentinel golds.

mod trace;

pub use trace::{Exchange, PipelineTrace, TraceEvent, TRACE_SCHEMA};

use crate::backend::{BackendError, ChatRequest, Client, Completion, InferenceParams, Message};
use crate::dataset::QAItem;
use crate::metrics::UNPARSED;
use crate::prompts::{
    bindings, parse_answer, parse_cases, parse_expert_domains, parse_vote, ParsedCase,
    PromptCatalog, PromptError, TemplateId, Vote,
};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Clinical case structure shared with the case parser.
pub type ClinicalCase = ParsedCase;

/// The two expert panels. Voters are the union of both, question
/// experts first, labeled `qe1..qeM` and `oe1..oeN`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertPanel {
    pub question_experts: Vec<String>,
    pub option_experts: Vec<String>,
}

impl ExpertPanel {
    pub fn new(
        question_experts: Vec<String>,
        option_experts: Vec<String>,
    ) -> Result<Self, PipelineError> {
        if question_experts.is_empty() || option_experts.is_empty() {
            return Err(PipelineError::Precondition(
                "both expert panels must be non-empty".into(),
            ));
        }
        if question_experts
            .iter()
            .chain(&option_experts)
            .any(|n| n.trim().is_empty())
        {
            return Err(PipelineError::Precondition(
                "expert names must be non-empty".into(),
            ));
        }
        Ok(Self {
            question_experts,
            option_experts,
        })
    }

    pub fn question_voters(&self) -> Vec<(String, String)> {
        self.question_experts
            .iter()
            .enumerate()
            .map(|(i, name)| (format!("qe{}", i + 1), name.clone()))
            .collect()
    }

    pub fn option_voters(&self) -> Vec<(String, String)> {
        self.option_experts
            .iter()
            .enumerate()
            .map(|(i, name)| (format!("oe{}", i + 1), name.clone()))
            .collect()
    }

    /// All voters: question experts then option experts.
    pub fn voters(&self) -> Vec<(String, String)> {
        let mut v = self.question_voters();
        v.extend(self.option_voters());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionAnalysis {
    pub expert: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionAnalysis {
    pub expert: String,
    pub text: String,
}

/// Versioned report digest. Version 0 is the initial synthesis; each
/// revision increments the version by exactly 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub key_knowledge: String,
    pub total_analysis: String,
    pub raw: String,
    pub version: u32,
}

fn report_header_re() -> &'static Regex {
    static HEADER: OnceLock<Regex> = OnceLock::new();
    HEADER.get_or_init(|| {
        Regex::new(
            r"(?im)^\s*(?:[*#>\-]+\s*)?(key\s+knowledge|total\s+analysis)\b\s*\**\s*[:：]?\**\s*",
        )
        .expect("report header regex compiles")
    })
}

impl Report {
    /// Extract the two core sections by fuzzy header match. Missing
    /// headers leave their section empty; the raw text is always kept.
    pub fn from_completion(raw: &str, version: u32) -> (Self, Vec<String>) {
        let mut report = Report {
            key_knowledge: String::new(),
            total_analysis: String::new(),
            raw: raw.to_string(),
            version,
        };
        let headers: Vec<(usize, usize, String)> = report_header_re()
            .captures_iter(raw)
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
            let stop = headers.get(i + 1).map(|h| h.0).unwrap_or(raw.len());
            let content = raw[*end..stop].trim().to_string();
            if name.starts_with("key") && report.key_knowledge.is_empty() {
                report.key_knowledge = content;
            } else if name.starts_with("total") && report.total_analysis.is_empty() {
                report.total_analysis = content;
            }
        }
        let mut warnings = Vec::new();
        if report.key_knowledge.is_empty() {
            warnings.push("report is missing a 'Key Knowledge' section".to_string());
        }
        if report.total_analysis.is_empty() {
            warnings.push("report is missing a 'Total Analysis' section".to_string());
        }
        (report, warnings)
    }
}

/// One expert's vote in one round. `counted_disagree` reflects the
/// configured policy for unparseable votes, while `vote` keeps what the
/// expert actually said.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub voter: String,
    pub expert: String,
    pub vote: Vote,
    pub counted_disagree: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRound {
    pub iteration: u32,
    pub votes: Vec<VoteRecord>,
    /// Accumulated suggestion text after this round.
    pub suggestions_snapshot: String,
}

/// Final decision: the chosen option key, or `UNPARSED` when no option
/// could be extracted (scored as incorrect downstream, never dropped).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub chosen: String,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_final: Option<Report>,
}

/// How the suggestion accumulator behaves across voting rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SuggestionMode {
    /// The accumulator is never cleared: each revision sees every
    /// suggestion gathered so far.
    #[default]
    LiteralAccumulate,
    /// The accumulator is cleared at the top of each iteration.
    PerRoundReset,
}

/// Policy for votes that parse to neither Yes nor No.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UnparseablePolicy {
    /// Count as agreement (default): parse noise never drives revisions.
    #[default]
    CountAsAgree,
    /// Count as disagreement and elicit a suggestion.
    CountAsDisagree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Maximum voting iterations.
    pub k: u32,
    /// Cap on each expert panel's size.
    pub expert_cap: usize,
    pub accumulation: SuggestionMode,
    /// Case-generation stage switch (the ablation flag).
    pub case_generation: bool,
    pub unparseable_votes: UnparseablePolicy,
    /// Upper bound on concurrent question pipelines.
    pub parallelism: usize,
    /// Bound for `{max_words}` in expert generation.
    pub max_words: u32,
    /// Bound for `{question_domain_format}`.
    pub question_domain_format: String,
    /// Per-option pattern expanded into `{options_domain_format}`, one
    /// line per option key.
    pub options_domain_format: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 3,
            expert_cap: 5,
            accumulation: SuggestionMode::LiteralAccumulate,
            case_generation: true,
            unparseable_votes: UnparseablePolicy::CountAsAgree,
            parallelism: 1,
            max_words: 100,
            question_domain_format: "Field: <subfield name>".into(),
            options_domain_format: "Option <key>: <subfield>".into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("backend failure at stage '{stage}': {source}")]
    Backend {
        stage: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("empty completion at stage '{stage}' after one retry")]
    EmptyCompletion { stage: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl PipelineError {
    pub fn stage(&self) -> &str {
        match self {
            PipelineError::Backend { stage, .. } | PipelineError::EmptyCompletion { stage } => {
                stage
            }
            PipelineError::Prompt(_) | PipelineError::Precondition(_) => "config",
        }
    }

    pub fn class(&self) -> String {
        match self {
            PipelineError::Backend { source, .. } => source.class().to_string(),
            PipelineError::Prompt(_) => "prompt".to_string(),
            PipelineError::EmptyCompletion { .. } => "empty_completion".to_string(),
            PipelineError::Precondition(_) => "precondition".to_string(),
        }
    }
}

/// The orchestrator. Stage methods are public so tests can drive each
/// operation in isolation; [`Pipeline::answer_question`] runs them all.
pub struct Pipeline<'a> {
    client: &'a Client,
    catalog: &'a PromptCatalog,
    config: &'a PipelineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(client: &'a Client, catalog: &'a PromptCatalog, config: &'a PipelineConfig) -> Self {
        Self {
            client,
            catalog,
            config,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        self.config
    }

    fn request(&self, tag: &str, prompt: String) -> ChatRequest {
        ChatRequest {
            model_id: self.client.config().model_id.clone(),
            messages: vec![Message::user(prompt)],
            params: InferenceParams::default(),
            stage_tag: tag.to_string(),
        }
    }

    fn call(
        &self,
        trace: &mut PipelineTrace,
        tag: &str,
        prompt: String,
    ) -> Result<Completion, PipelineError> {
        let request = self.request(tag, prompt);
        match self.client.complete_cached(&request) {
            Ok(outcome) => {
                trace.record_exchange(
                    request,
                    Some(outcome.completion.clone()),
                    None,
                    outcome.attempts,
                    outcome.attempt_errors.clone(),
                    outcome.from_cache,
                );
                Ok(outcome.completion)
            }
            Err(err) => {
                trace.record_exchange(request, None, Some(err.to_string()), 0, Vec::new(), false);
                Err(PipelineError::Backend {
                    stage: tag.to_string(),
                    source: err,
                })
            }
        }
    }

    /// Like [`Pipeline::call`], but a blank completion is retried once with a
    /// fresh (cache-bypassing) call, then aborts the question.
    fn call_nonblank(
        &self,
        trace: &mut PipelineTrace,
        tag: &str,
        prompt: String,
    ) -> Result<Completion, PipelineError> {
        let first = self.call(trace, tag, prompt.clone())?;
        if !first.text.trim().is_empty() {
            return Ok(first);
        }
        trace.warn(tag, "blank completion; retrying once");
        let request = self.request(tag, prompt);
        match self.client.complete_fresh(&request) {
            Ok(outcome) => {
                trace.record_exchange(
                    request,
                    Some(outcome.completion.clone()),
                    None,
                    outcome.attempts,
                    outcome.attempt_errors.clone(),
                    false,
                );
                if outcome.completion.text.trim().is_empty() {
                    Err(PipelineError::EmptyCompletion {
                        stage: tag.to_string(),
                    })
                } else {
                    Ok(outcome.completion)
                }
            }
            Err(err) => {
                trace.record_exchange(request, None, Some(err.to_string()), 0, Vec::new(), false);
                Err(PipelineError::Backend {
                    stage: tag.to_string(),
                    source: err,
                })
            }
        }
    }

    fn options_domain_format_for(&self, item: &QAItem) -> String {
        item.options
            .keys()
            .map(|k| self.config.options_domain_format.replace("<key>", k))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Stage 1a: generate the question-expert panel.
    pub fn generate_question_experts(
        &self,
        item: &QAItem,
        trace: &mut PipelineTrace,
    ) -> Result<Vec<String>, PipelineError> {
        if item.question.trim().is_empty() {
            return Err(PipelineError::Precondition(
                "question must be non-empty".into(),
            ));
        }
        let prompt = self.catalog.render(
            TemplateId::Qe,
            &bindings([
                ("question", item.question.as_str()),
                (
                    "question_domain_format",
                    self.config.question_domain_format.as_str(),
                ),
                ("max_words", &self.config.max_words.to_string()),
            ]),
        )?;
        let completion = self.call_nonblank(trace, "qe", prompt)?;
        Ok(
            parse_expert_domains(&completion.text, self.config.expert_cap)
                .expect("non-blank completion yields at least one domain"),
        )
    }

    /// Stage 1b: generate the option-expert panel.
    pub fn generate_option_experts(
        &self,
        item: &QAItem,
        trace: &mut PipelineTrace,
    ) -> Result<Vec<String>, PipelineError> {
        if item.options.len() < 2 {
            return Err(PipelineError::Precondition(
                "at least two options are required".into(),
            ));
        }
        let prompt = self.catalog.render(
            TemplateId::Oe,
            &bindings([
                ("options", item.options_block().as_str()),
                ("question", item.question.as_str()),
                (
                    "options_domain_format",
                    self.options_domain_format_for(item).as_str(),
                ),
            ]),
        )?;
        let completion = self.call_nonblank(trace, "oe", prompt)?;
        Ok(
            parse_expert_domains(&completion.text, self.config.expert_cap)
                .expect("non-blank completion yields at least one domain"),
        )
    }

    /// Stage 2a: one analysis by one question expert.
    pub fn analyze_question(
        &self,
        item: &QAItem,
        expert: &str,
        voter_label: &str,
        trace: &mut PipelineTrace,
    ) -> Result<QuestionAnalysis, PipelineError> {
        let prompt = self.catalog.render(
            TemplateId::Qa,
            &bindings([("expert", expert), ("question", item.question.as_str())]),
        )?;
        let completion = self.call_nonblank(trace, &format!("qa/{voter_label}"), prompt)?;
        Ok(QuestionAnalysis {
            expert: expert.to_string(),
            text: completion.text,
        })
    }

    /// Stage 2b: one option analysis over the full option set. Every
    /// option expert receives all question analyses in panel order.
    pub fn analyze_option(
        &self,
        item: &QAItem,
        expert: &str,
        voter_label: &str,
        question_analyses: &[QuestionAnalysis],
        trace: &mut PipelineTrace,
    ) -> Result<OptionAnalysis, PipelineError> {
        if question_analyses.is_empty() {
            return Err(PipelineError::Precondition(
                "question analyses must be non-empty".into(),
            ));
        }
        let analyses = format_analyses(
            "Question analysis",
            question_analyses.iter().map(|a| (&a.expert, &a.text)),
        );
        let prompt = self.catalog.render(
            TemplateId::Oa,
            &bindings([
                ("expert", expert),
                ("question", item.question.as_str()),
                ("options", item.options_block().as_str()),
                ("analyses", analyses.as_str()),
            ]),
        )?;
        let completion = self.call_nonblank(trace, &format!("oa/{voter_label}"), prompt)?;
        Ok(OptionAnalysis {
            expert: expert.to_string(),
            text: completion.text,
        })
    }

    /// Stage 3: generate 1-2 supporting clinical cases. Disabled by the
    /// ablation flag, in which case no backend call happens and the
    /// report prompt will carry no case block.
    pub fn generate_cases(
        &self,
        item: &QAItem,
        trace: &mut PipelineTrace,
    ) -> Result<Vec<ClinicalCase>, PipelineError> {
        if !self.config.case_generation {
            return Ok(Vec::new());
        }
        let prompt = self.catalog.render(
            TemplateId::Exa,
            &bindings([
                ("question", item.question.as_str()),
                ("options", item.options_block().as_str()),
            ]),
        )?;
        let completion = self.call(trace, "case", prompt)?;
        let mut cases = parse_cases(&completion.text);
        cases.truncate(2);
        Ok(cases)
    }

    /// Stage 4: synthesize the report digest (version 0).
    pub fn generate_report(
        &self,
        question_analyses: &[QuestionAnalysis],
        option_analyses: &[OptionAnalysis],
        cases: &[ClinicalCase],
        trace: &mut PipelineTrace,
    ) -> Result<Report, PipelineError> {
        if question_analyses.is_empty() || option_analyses.is_empty() {
            return Err(PipelineError::Precondition(
                "question and option analyses must both be non-empty".into(),
            ));
        }
        let mut analyses = format_analyses(
            "Question analysis",
            question_analyses.iter().map(|a| (&a.expert, &a.text)),
        );
        analyses.push('\n');
        analyses.push_str(&format_analyses(
            "Option analysis",
            option_analyses.iter().map(|a| (&a.expert, &a.text)),
        ));
        let case_block = if cases.is_empty() {
            String::new()
        } else {
            let mut block = String::from("\nCase studies:\n");
            for case in cases {
                block.push_str(&case.raw);
                block.push_str("\n\n");
            }
            block
        };
        let prompt = self.catalog.render(
            TemplateId::Rp,
            &bindings([
                ("analyses", analyses.as_str()),
                ("cases", case_block.as_str()),
            ]),
        )?;
        let completion = self.call(trace, "report", prompt)?;
        let (report, warnings) = Report::from_completion(&completion.text, 0);
        for w in warnings {
            trace.warn("report", w);
        }
        Ok(report)
    }

    /// One voting round: exactly one vote per panel member. A disagreeing
    /// vote that carried no suggestion text triggers a follow-up
    /// suggestion call. Disagreement suggestions are appended to `acc`.
    pub fn collect_votes(
        &self,
        item: &QAItem,
        report: &Report,
        panel: &ExpertPanel,
        iteration: u32,
        acc: &mut Vec<String>,
        trace: &mut PipelineTrace,
    ) -> Result<VoteRound, PipelineError> {
        let voters = panel.voters();
        if voters.is_empty() {
            return Err(PipelineError::Precondition(
                "voter panel must be non-empty".into(),
            ));
        }
        let mut votes = Vec::with_capacity(voters.len());
        for (label, expert) in voters {
            let prompt = self.catalog.render(
                TemplateId::Vote,
                &bindings([
                    ("expert", expert.as_str()),
                    ("question", item.question.as_str()),
                    ("options", item.options_block().as_str()),
                    ("report", report.raw.as_str()),
                ]),
            )?;
            let completion = self.call(trace, &format!("vote/{label}"), prompt)?;
            let vote = parse_vote(&completion.text);

            let counted_disagree = match &vote {
                Vote::Agree => false,
                Vote::Disagree { .. } => true,
                Vote::Unparseable => match self.config.unparseable_votes {
                    UnparseablePolicy::CountAsAgree => {
                        trace.warn(
                            &format!("vote/{label}"),
                            "unparseable vote counted as Agree",
                        );
                        false
                    }
                    UnparseablePolicy::CountAsDisagree => {
                        trace.warn(
                            &format!("vote/{label}"),
                            "unparseable vote counted as Disagree",
                        );
                        true
                    }
                },
            };

            if counted_disagree {
                let inline = match &vote {
                    Vote::Disagree { suggestion } => suggestion.clone(),
                    _ => None,
                };
                let suggestion = match inline {
                    Some(text) if !text.trim().is_empty() => Some(text),
                    _ => {
                        let modify_prompt = self.catalog.render(
                            TemplateId::Modify,
                            &bindings([
                                ("expert", expert.as_str()),
                                ("question", item.question.as_str()),
                                ("options", item.options_block().as_str()),
                                ("report", report.raw.as_str()),
                            ]),
                        )?;
                        let modified =
                            self.call(trace, &format!("modify/{label}"), modify_prompt)?;
                        let text = modified.text.trim().to_string();
                        if text.is_empty() {
                            trace.warn(
                                &format!("modify/{label}"),
                                "suggestion call returned blank text",
                            );
                            None
                        } else {
                            Some(text)
                        }
                    }
                };
                if let Some(text) = suggestion {
                    acc.push(format!("[{expert}] {text}"));
                }
            }

            votes.push(VoteRecord {
                voter: label,
                expert,
                vote,
                counted_disagree,
            });
        }
        Ok(VoteRound {
            iteration,
            votes,
            suggestions_snapshot: acc.join("\n\n"),
        })
    }

    /// Revise the report against the accumulated suggestions; the new
    /// version is exactly one higher.
    pub fn revise_report(
        &self,
        report: &Report,
        suggestions: &str,
        trace: &mut PipelineTrace,
    ) -> Result<Report, PipelineError> {
        if suggestions.trim().is_empty() {
            return Err(PipelineError::Precondition(
                "suggestions must be non-empty for a revision".into(),
            ));
        }
        let prompt = self.catalog.render(
            TemplateId::Revise,
            &bindings([
                ("report", report.raw.as_str()),
                ("suggestions", suggestions),
            ]),
        )?;
        let completion = self.call(trace, "revise", prompt)?;
        let (revised, warnings) = Report::from_completion(&completion.text, report.version + 1);
        for w in warnings {
            trace.warn("revise", w);
        }
        Ok(revised)
    }

    /// Stage 5: the bounded voting/revision loop.
    ///
    /// Starting from the initial draft: collect one vote per panel
    /// member; every counted disagreement appends its suggestion to the
    /// accumulator and flags a revision; if flagged, the draft is
    /// revised against the accumulated suggestions and the loop repeats,
    /// up to `k` rounds. Unanimity exits immediately. In per-round-reset
    /// mode the accumulator is cleared at the top of each iteration.
    pub fn run_voting_loop(
        &self,
        item: &QAItem,
        report_0: Report,
        panel: &ExpertPanel,
        trace: &mut PipelineTrace,
    ) -> Result<(Report, Vec<VoteRound>), PipelineError> {
        let k = self.config.k;
        if k < 1 {
            return Err(PipelineError::Precondition("k must be >= 1".into()));
        }
        let mut feedback_required = true;
        let mut iteration = 0u32;
        let mut draft = report_0;
        let mut suggestions: Vec<String> = Vec::new();
        let mut rounds: Vec<VoteRound> = Vec::new();

        while feedback_required && iteration < k {
            iteration += 1;
            if self.config.accumulation == SuggestionMode::PerRoundReset {
                suggestions.clear();
            }
            let round =
                self.collect_votes(item, &draft, panel, iteration, &mut suggestions, trace)?;
            feedback_required = round.votes.iter().any(|v| v.counted_disagree);
            trace.push(TraceEvent::VoteRound {
                round: round.clone(),
            });
            rounds.push(round);

            if feedback_required {
                let mut feedback = suggestions.join("\n\n");
                if feedback.trim().is_empty() {
                    trace.warn("revise", "disagreement carried no suggestion text");
                    feedback = "(no specific suggestions were provided)".to_string();
                }
                draft = self.revise_report(&draft, &feedback, trace)?;
                trace.push(TraceEvent::Report {
                    report: draft.clone(),
                });
            }
        }

        trace.push(TraceEvent::VotingSummary {
            unanimous: !feedback_required,
            rounds: iteration,
        });
        if feedback_required {
            trace.warn(
                "vote",
                format!("no unanimity after {iteration} round(s); returning last draft"),
            );
        }
        Ok((draft, rounds))
    }

    /// Stage 6: final decision over the final report.
    pub fn make_decision(
        &self,
        item: &QAItem,
        report_final: &Report,
        trace: &mut PipelineTrace,
    ) -> Result<Decision, PipelineError> {
        let prompt = self.catalog.render(
            TemplateId::Dm,
            &bindings([
                ("question", item.question.as_str()),
                ("options", item.options_block().as_str()),
                ("report", report_final.raw.as_str()),
            ]),
        )?;
        let completion = self.call(trace, "dm", prompt)?;
        let parsed = parse_answer(&completion.text, &item.options);
        let chosen = match parsed.key() {
            Some(key) => key.to_string(),
            None => {
                trace.warn(
                    "dm",
                    "no option could be parsed from the decision; recording UNPARSED",
                );
                UNPARSED.to_string()
            }
        };
        Ok(Decision {
            chosen,
            rationale: completion.text,
            report_final: Some(report_final.clone()),
        })
    }

    /// Run all six stages for one question.
    ///
    /// Stage failures are recorded in the trace and returned as errors;
    /// the caller records a failed-question outcome and the run continues.
    pub fn answer_question(
        &self,
        item: &QAItem,
    ) -> (Result<Decision, PipelineError>, PipelineTrace) {
        let mut trace = PipelineTrace::new(&item.id, "ours");
        let result = self.run_stages(item, &mut trace);
        if let Err(err) = &result {
            trace.push(TraceEvent::Failure {
                stage: err.stage().to_string(),
                class: err.class(),
                message: err.to_string(),
            });
        }
        (result, trace)
    }

    fn run_stages(
        &self,
        item: &QAItem,
        trace: &mut PipelineTrace,
    ) -> Result<Decision, PipelineError> {
        let question_experts = self.generate_question_experts(item, trace)?;
        let option_experts = self.generate_option_experts(item, trace)?;
        let panel = ExpertPanel::new(question_experts, option_experts)?;
        trace.push(TraceEvent::Panel {
            panel: panel.clone(),
        });

        let mut question_analyses = Vec::new();
        for (label, expert) in panel.question_voters() {
            question_analyses.push(self.analyze_question(item, &expert, &label, trace)?);
        }
        trace.push(TraceEvent::QuestionAnalyses {
            analyses: question_analyses.clone(),
        });

        let mut option_analyses = Vec::new();
        for (label, expert) in panel.option_voters() {
            option_analyses.push(self.analyze_option(
                item,
                &expert,
                &label,
                &question_analyses,
                trace,
            )?);
        }
        trace.push(TraceEvent::OptionAnalyses {
            analyses: option_analyses.clone(),
        });

        let cases = self.generate_cases(item, trace)?;
        if self.config.case_generation {
            trace.push(TraceEvent::Cases {
                cases: cases.clone(),
            });
        }

        let report_0 = self.generate_report(&question_analyses, &option_analyses, &cases, trace)?;
        trace.push(TraceEvent::Report {
            report: report_0.clone(),
        });

        let (report_final, _rounds) = self.run_voting_loop(item, report_0, &panel, trace)?;

        let decision = self.make_decision(item, &report_final, trace)?;
        trace.push(TraceEvent::Decision {
            decision: decision.clone(),
        });
        Ok(decision)
    }
}

fn format_analyses<'x>(
    kind: &str,
    entries: impl Iterator<Item = (&'x String, &'x String)>,
) -> String {
    entries
        .map(|(expert, text)| format!("{kind} by expert in {expert}:\n{text}\n"))
        .collect::<Vec<_>>()
        .join("\n")
}
