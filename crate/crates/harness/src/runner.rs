//! Run orchestration: execute a sampling plan over a method, persist
//! manifest, traces, and results, and aggregate metrics across runs.
//!
//! The manifest is written before any evaluation and finalized after the
//! results, so an interrupted run never leaves results without a
//! manifest. Completed questions (their trace files) are skipped on
//! restart within the same run directory; restarting with a different
//! configuration in the same directory is refused.

use crate::audit::DEFAULT_SENTINEL;
use crate::config::{Method, RunConfig};
use crate::store::{
    self, QuestionRecord, ResultsRecord, RunManifest, MANIFEST_SCHEMA, RESULTS_SCHEMA, TABLE_FILE,
};
use crate::table::{render_ablation_table, render_table};
use medqa_core::backend::{Client, HttpBackend, MockBackend, MockScript};
use medqa_core::baselines::{BaselineRunner, FewShotExemplar};
use medqa_core::dataset::{self, QAItem};
use medqa_core::metrics::{self, UNPARSED};
use medqa_core::pipeline::{Decision, Pipeline, PipelineError, PipelineTrace};
use medqa_core::prompts::PromptCatalog;
use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Configuration problems abort before any backend call (exit 1).
    #[error("configuration error: {0}")]
    Config(String),
    /// Unrecoverable runtime problems (exit 3).
    #[error("fatal error: {0}")]
    Fatal(String),
}

fn fatal(err: impl std::fmt::Display) -> HarnessError {
    HarnessError::Fatal(err.to_string())
}

#[derive(Debug)]
pub struct RunOutcome {
    pub results: ResultsRecord,
    pub manifest: RunManifest,
    pub table: String,
    pub had_failures: bool,
}

pub fn build_client(config: &RunConfig) -> Result<Client, HarnessError> {
    let backend: std::sync::Arc<dyn medqa_core::backend::Backend> = match &config.mock_script {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                HarnessError::Config(format!("cannot read mock script {}: {e}", path.display()))
            })?;
            let script = MockScript::from_json(&text).map_err(|e| {
                HarnessError::Config(format!("mock script {}: {e}", path.display()))
            })?;
            std::sync::Arc::new(MockBackend::from_script(script))
        }
        None => std::sync::Arc::new(HttpBackend::new(&config.backend)),
    };
    Client::new(backend, config.backend.clone()).map_err(|e| HarnessError::Config(e.to_string()))
}

pub fn load_catalog(config: &RunConfig) -> Result<PromptCatalog, HarnessError> {
    match &config.prompts_path {
        Some(path) => {
            PromptCatalog::from_path(path).map_err(|e| HarnessError::Config(e.to_string()))
        }
        None => Ok(PromptCatalog::default_catalog()),
    }
}

/// Resolve the few-shot exemplars for a run: taken from the exemplar
/// file when given, otherwise drawn from the dataset; always disjoint
/// from every evaluation draw. Chain-of-thought methods need worked
/// reasoning, synthesized (and noted) when the source lacks it.
fn resolve_exemplars(
    config: &RunConfig,
    items: &[QAItem],
    draws: &[Vec<QAItem>],
    notes: &mut Vec<String>,
) -> Result<Vec<FewShotExemplar>, HarnessError> {
    if config.shots == 0 || config.method == Method::Ours {
        return Ok(Vec::new());
    }
    let eval_ids: BTreeSet<String> = draws.iter().flatten().map(|item| item.id.clone()).collect();

    let mut exemplars = match &config.exemplar_path {
        Some(path) => {
            let pool =
                dataset::load_exemplars(path).map_err(|e| HarnessError::Config(e.to_string()))?;
            dataset::select_exemplars_from(&pool, config.shots, config.exemplar_seed, &eval_ids)
                .map_err(|e| HarnessError::Config(e.to_string()))?
        }
        None => dataset::select_exemplars(items, config.shots, config.exemplar_seed, &eval_ids)
            .map_err(|e| HarnessError::Config(e.to_string()))?,
    };

    if matches!(config.method, Method::Cot | Method::CotSc) {
        let mut synthesized = 0;
        for ex in &mut exemplars {
            if ex.reasoning.as_deref().unwrap_or("").trim().is_empty() {
                let gold_text = ex
                    .item
                    .options
                    .get(&ex.item.gold)
                    .cloned()
                    .unwrap_or_default();
                ex.reasoning = Some(format!(
                    "Weighing each option against the clinical findings, option {} ({}) fits best.",
                    ex.item.gold, gold_text
                ));
                synthesized += 1;
            }
        }
        if synthesized > 0 {
            notes.push(format!(
                "synthesized worked reasoning for {synthesized} exemplar(s) that lacked a reasoning field"
            ));
        }
    }
    Ok(exemplars)
}

fn evaluate_one(
    config: &RunConfig,
    client: &Client,
    catalog: &PromptCatalog,
    item: &QAItem,
    exemplars: &[FewShotExemplar],
) -> (Result<Decision, PipelineError>, PipelineTrace) {
    match config.method {
        Method::Ours => Pipeline::new(client, catalog, &config.pipeline).answer_question(item),
        _ => BaselineRunner::new(client, &config.baseline).run(item, exemplars),
    }
}

fn record_from(
    run: usize,
    item: &QAItem,
    decision: Option<&Decision>,
    failure: Option<String>,
) -> QuestionRecord {
    let predicted = decision
        .map(|d| d.chosen.clone())
        .unwrap_or_else(|| UNPARSED.to_string());
    QuestionRecord {
        run,
        id: item.id.clone(),
        gold: item.gold.clone(),
        correct: predicted == item.gold,
        predicted,
        failure,
    }
}

/// Rebuild an outcome from a previously written trace, if one exists.
fn resume_record(out_dir: &Path, run: usize, item: &QAItem) -> Option<QuestionRecord> {
    let path = store::trace_path(out_dir, run, &item.id);
    if !path.exists() {
        return None;
    }
    let trace = store::read_trace(&path).ok()?;
    if let Some(decision) = trace.decision() {
        return Some(record_from(run, item, Some(decision), None));
    }
    if let Some((_, class, _)) = trace.failure() {
        return Some(record_from(run, item, None, Some(class.to_string())));
    }
    None
}

fn evaluate_run(
    config: &RunConfig,
    client: &Client,
    catalog: &PromptCatalog,
    draw: &[QAItem],
    exemplars: &[FewShotExemplar],
    run_no: usize,
) -> Result<Vec<QuestionRecord>, HarnessError> {
    let slots: Vec<Mutex<Option<QuestionRecord>>> = draw.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let io_errors: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let workers = config.pipeline.parallelism.clamp(1, draw.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= draw.len() {
                    break;
                }
                let item = &draw[i];
                let record = match resume_record(&config.out_dir, run_no, item) {
                    Some(record) => record,
                    None => {
                        let (result, trace) =
                            evaluate_one(config, client, catalog, item, exemplars);
                        if let Err(err) = store::write_trace(&config.out_dir, run_no, &trace) {
                            io_errors
                                .lock()
                                .unwrap()
                                .push(format!("writing trace for '{}': {err}", item.id));
                            break;
                        }
                        match result {
                            Ok(decision) => record_from(run_no, item, Some(&decision), None),
                            Err(err) => record_from(run_no, item, None, Some(err.class())),
                        }
                    }
                };
                *slots[i].lock().unwrap() = Some(record);
            });
        }
    });

    let io_errors = io_errors.into_inner().unwrap();
    if let Some(first) = io_errors.into_iter().next() {
        return Err(HarnessError::Fatal(first));
    }
    Ok(slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot filled"))
        .collect())
}

/// Execute the full sampling plan for one configuration.
pub fn run_eval(config: &RunConfig) -> Result<RunOutcome, HarnessError> {
    config.validate().map_err(HarnessError::Config)?;
    let catalog = load_catalog(config)?;
    let mut items =
        dataset::load(&config.dataset_path).map_err(|e| HarnessError::Config(e.to_string()))?;
    if config.sentinel_golds {
        for item in &mut items {
            item.gold = format!("{DEFAULT_SENTINEL}-{}", item.id);
        }
    }
    let draws =
        dataset::sample(&items, &config.plan).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut notes = config.deviation_notes();
    let exemplars = resolve_exemplars(config, &items, &draws, &mut notes)?;
    let client = build_client(config)?;

    // Refuse to resume over a different configuration.
    if let Ok(existing) = store::read_manifest(&config.out_dir) {
        if existing.config != *config {
            return Err(HarnessError::Config(format!(
                "output directory {} holds a run with a different configuration; pick a fresh --out",
                config.out_dir.display()
            )));
        }
    }

    let run_id = config
        .out_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let mut manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        run_id,
        config: config.clone(),
        prompt_catalog_digest: catalog.digest(),
        seeds: config.plan.seeds.clone(),
        exemplar_seed: config.exemplar_seed,
        model_id: config.backend.model_id.clone(),
        started_at_ms: store::now_ms(),
        finished_at_ms: None,
        deviation_notes: notes,
    };
    store::write_manifest(&config.out_dir, &manifest).map_err(fatal)?;

    let mut outcomes: Vec<QuestionRecord> = Vec::new();
    let mut per_run = Vec::new();
    for (r, draw) in draws.iter().enumerate() {
        let run_no = r + 1;
        let records = evaluate_run(config, &client, &catalog, draw, &exemplars, run_no)?;
        let golds: Vec<String> = draw.iter().map(|item| item.gold.clone()).collect();
        let preds: Vec<String> = records
            .iter()
            .map(|record| record.predicted.clone())
            .collect();
        per_run.push(metrics::evaluate(&golds, &preds).map_err(fatal)?);
        outcomes.extend(records);
    }

    let (mean, std) = metrics::aggregate(&per_run).map_err(fatal)?;
    let had_failures = outcomes.iter().any(|o| o.failure.is_some());
    let results = ResultsRecord {
        schema: RESULTS_SCHEMA.into(),
        method: config.method.as_str().into(),
        shots: config.shots,
        per_run,
        mean,
        std,
        outcomes,
    };
    store::write_results(&config.out_dir, &results).map_err(fatal)?;

    let table = render_table(&[(config.label(), results.clone())]);
    store::write_atomic(&config.out_dir.join(TABLE_FILE), table.as_bytes()).map_err(fatal)?;

    manifest.finished_at_ms = Some(store::now_ms());
    store::write_manifest(&config.out_dir, &manifest).map_err(fatal)?;

    Ok(RunOutcome {
        results,
        manifest,
        table,
        had_failures,
    })
}

/// Two runs differing only in the case-generation flag, plus the delta table.
pub fn run_ablation(config: &RunConfig) -> Result<(RunOutcome, RunOutcome, String), HarnessError> {
    if config.method != Method::Ours {
        return Err(HarnessError::Config("ablate requires --method ours".into()));
    }
    let mut no_case = config.clone();
    no_case.pipeline.case_generation = false;
    no_case.out_dir = config.out_dir.join("no-case");

    let mut with_case = config.clone();
    with_case.pipeline.case_generation = true;
    with_case.out_dir = config.out_dir.join("with-case");

    let no_outcome = run_eval(&no_case)?;
    let with_outcome = run_eval(&with_case)?;

    let table = render_ablation_table(&no_outcome.results, &with_outcome.results);
    store::write_atomic(&config.out_dir.join("ablation.txt"), table.as_bytes()).map_err(fatal)?;
    Ok((with_outcome, no_outcome, table))
}
