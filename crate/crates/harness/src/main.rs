//! `medqa` command line interface.
//!
//! Exit codes: 0 success, 1 configuration error, 2 run completed with
//! failures (or audit found leakage), 3 fatal error.

use clap::{Parser, Subcommand};
use medqa_harness::audit::{scan_run_dir, DEFAULT_SENTINEL};
use medqa_harness::store::read_results;
use medqa_harness::table::render_table;
use medqa_harness::{run_ablation, run_eval, EvalArgs, HarnessError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "medqa",
    about = "Multi-agent evaluation harness for multiple-choice medical QA",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a method over the sampling plan and write results.
    Eval(EvalArgs),
    /// Run the case-generation ablation pair and emit a delta table.
    Ablate(EvalArgs),
    /// Render a table from one or more stored results files or run dirs.
    Report {
        /// Paths to results.jsonl files or run directories.
        paths: Vec<PathBuf>,
    },
    /// Scan a run's traces for gold sentinels in outbound prompts.
    AuditLeakage {
        /// Run directory containing traces/.
        run_dir: PathBuf,
        /// Sentinel substring(s) to search for.
        #[arg(long, default_value = DEFAULT_SENTINEL)]
        sentinel: Vec<String>,
    },
}

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_WITH_FAILURES: u8 = 2;
const EXIT_FATAL: u8 = 3;

fn exit_for(err: &HarnessError) -> u8 {
    match err {
        HarnessError::Config(_) => EXIT_CONFIG,
        HarnessError::Fatal(_) => EXIT_FATAL,
    }
}

fn cmd_eval(args: &EvalArgs) -> u8 {
    let config = match args.resolve() {
        Ok(config) => config,
        Err(message) => {
            eprintln!("error: {message}");
            return EXIT_CONFIG;
        }
    };
    match run_eval(&config) {
        Ok(outcome) => {
            println!("{}", outcome.table);
            println!("results: {}", config.out_dir.display());
            if outcome.had_failures {
                let failed = outcome
                    .results
                    .outcomes
                    .iter()
                    .filter(|o| o.failure.is_some())
                    .count();
                eprintln!("warning: {failed} question(s) failed; see traces");
                EXIT_WITH_FAILURES
            } else {
                EXIT_OK
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            exit_for(&err)
        }
    }
}

fn cmd_ablate(args: &EvalArgs) -> u8 {
    let config = match args.resolve() {
        Ok(config) => config,
        Err(message) => {
            eprintln!("error: {message}");
            return EXIT_CONFIG;
        }
    };
    match run_ablation(&config) {
        Ok((with_case, no_case, table)) => {
            println!("{table}");
            println!("results: {}", config.out_dir.display());
            if with_case.had_failures || no_case.had_failures {
                EXIT_WITH_FAILURES
            } else {
                EXIT_OK
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            exit_for(&err)
        }
    }
}

fn cmd_report(paths: &[PathBuf]) -> u8 {
    if paths.is_empty() {
        eprintln!("error: report needs at least one results file or run directory");
        return EXIT_CONFIG;
    }
    let mut records = Vec::new();
    for path in paths {
        match read_results(path) {
            Ok(record) => {
                let mode = if record.shots == 0 {
                    "zero-shot"
                } else {
                    "few-shot"
                };
                records.push((format!("{} ({mode})", record.method), record));
            }
            Err(message) => {
                eprintln!("error: {message}");
                return EXIT_CONFIG;
            }
        }
    }
    println!("{}", render_table(&records));
    EXIT_OK
}

fn cmd_audit(run_dir: &std::path::Path, sentinels: &[String]) -> u8 {
    match scan_run_dir(run_dir, sentinels) {
        Ok(hits) if hits.is_empty() => {
            println!("no leakage: scanned traces contain no sentinel in any outbound prompt");
            EXIT_OK
        }
        Ok(hits) => {
            eprintln!("LEAKAGE: {} hit(s)", hits.len());
            for hit in hits {
                eprintln!(
                    "  {} question={} stage={} seq={} sentinel={}",
                    hit.trace_file.display(),
                    hit.question_id,
                    hit.stage,
                    hit.seq,
                    hit.needle
                );
            }
            EXIT_WITH_FAILURES
        }
        Err(message) => {
            eprintln!("error: {message}");
            EXIT_CONFIG
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_max_level(tracing::Level::WARN)
        .with_target(false)
        .init();

    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Report { paths } => cmd_report(paths),
        Command::AuditLeakage { run_dir, sentinel } => cmd_audit(run_dir, sentinel),
    };
    ExitCode::from(code)
}
