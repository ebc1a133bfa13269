//! Evaluation harness: CLI configuration, run orchestration,
//! persistence, result tables, and the gold-leakage audit.

pub mod audit;
pub mod config;
pub mod runner;
pub mod store;
pub mod table;

pub use config::{EvalArgs, Method, RunConfig, ShotMode};
pub use runner::{run_ablation, run_eval, HarnessError, RunOutcome};
