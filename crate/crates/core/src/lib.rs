//! Core library for a multi-agent medical multiple-choice QA system.
//!
//! The pieces, bottom up:
//!
//! - [`backend`] — a uniform client for chat-completion endpoints with
//!   retries, a deterministic scripted mock, and a persistent response
//!   cache for replayable experiments.
//! - [`prompts`] — the prompt-template catalog, placeholder rendering,
//!   and the parsers that turn free-text completions into structured
//!   values (expert domains, votes, answers, clinical cases).
//! - [`dataset`] — MedQA-style record ingestion and seeded sampling.
//! - [`pipeline`] — the six-stage orchestrator: expert generation,
//!   proposition analysis, case generation, report digest, the bounded
//!   voting/revision loop, and decision making.
//! - [`baselines`] — direct inference, chain-of-thought, and
//!   chain-of-thought with self-consistency, in zero- and few-shot modes.
//! - [`metrics`] — accuracy and macro precision/recall/F1 over a
//!   confusion matrix, with cross-run aggregation.

pub mod backend;
pub mod baselines;
pub mod dataset;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
