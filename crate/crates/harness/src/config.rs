//! Run configuration: defaults, TOML file, and CLI overrides merged with
//! precedence CLI > file > defaults.

use medqa_core::backend::BackendConfig;
use medqa_core::baselines::{BaselineConfig, BaselineMethod};
use medqa_core::dataset::SamplePlan;
use medqa_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    Direct,
    Cot,
    CotSc,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Direct => "direct",
            Method::Cot => "cot",
            Method::CotSc => "cot_sc",
        }
    }

    pub fn baseline(&self) -> Option<BaselineMethod> {
        match self {
            Method::Ours => None,
            Method::Direct => Some(BaselineMethod::Direct),
            Method::Cot => Some(BaselineMethod::Cot),
            Method::CotSc => Some(BaselineMethod::CotSc),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotMode {
    Zero,
    Few,
}

/// Fully resolved run configuration, snapshotted into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub shots: usize,
    pub backend: BackendConfig,
    pub pipeline: PipelineConfig,
    pub baseline: BaselineConfig,
    pub plan: SamplePlan,
    pub dataset_path: PathBuf,
    pub exemplar_path: Option<PathBuf>,
    pub prompts_path: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Replace every gold with a unique sentinel for leakage auditing.
    pub sentinel_golds: bool,
    pub exemplar_seed: u64,
}

impl RunConfig {
    pub fn shot_mode(&self) -> ShotMode {
        if self.shots == 0 {
            ShotMode::Zero
        } else {
            ShotMode::Few
        }
    }

    pub fn label(&self) -> String {
        let mode = match self.shot_mode() {
            ShotMode::Zero => "zero-shot",
            ShotMode::Few => "few-shot",
        };
        format!("{} ({mode})", self.method.as_str())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.plan.run_count == 0 {
            return Err("runs must be >= 1".into());
        }
        if self.plan.sample_size == 0 {
            return Err("sample-size must be >= 1".into());
        }
        if self.method != Method::Ours && !self.pipeline.case_generation {
            return Err("--no-case-generation applies only to --method ours".into());
        }
        if self.pipeline.k < 1 {
            return Err("k must be >= 1".into());
        }
        if self.method == Method::CotSc && self.baseline.sc_paths < 1 {
            return Err("sc-paths must be >= 1".into());
        }
        if self.backend.retry.max_attempts < 1 {
            return Err("retry max attempts must be >= 1".into());
        }
        Ok(())
    }

    /// Deviations from the nominal decoding setup, recorded in manifests.
    pub fn deviation_notes(&self) -> Vec<String> {
        let mut notes = Vec::new();
        if self.method == Method::CotSc && self.baseline.sc_paths > 1 {
            notes.push(format!(
                "self-consistency paths sample at temperature {} (seeded per path), overriding the global temperature-0 decoding",
                self.baseline.sc_params.temperature
            ));
        }
        if self.sentinel_golds {
            notes.push("gold answers replaced by sentinels; metrics are not meaningful".into());
        }
        notes
    }
}

/// Optional config file; every field may be overridden on the CLI.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub method: Option<Method>,
    pub shots: Option<usize>,
    pub runs: Option<usize>,
    pub sample_size: Option<usize>,
    pub seed: Option<u64>,
    pub exemplars: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
    pub backend_url: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub k: Option<u32>,
    pub sc_paths: Option<usize>,
    pub sc_temperature: Option<f64>,
    pub no_case_generation: Option<bool>,
    pub parallelism: Option<usize>,
    pub max_attempts: Option<u32>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config file {}: {e}", path.display()))
    }
}

/// CLI-level options, all optional so file values can fill the gaps.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct EvalArgs {
    /// Config file (TOML); CLI flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file: line-delimited JSON records.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Evaluation method.
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Few-shot exemplar count; 0 means zero-shot.
    #[arg(long)]
    pub shots: Option<usize>,
    /// Number of independent sampled runs.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Items drawn per run.
    #[arg(long)]
    pub sample_size: Option<usize>,
    /// Base seed; run r uses seed + r.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exemplar file (dataset shape plus optional "reasoning").
    #[arg(long)]
    pub exemplars: Option<PathBuf>,
    /// Prompt catalog override (TOML).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Scripted mock backend (JSON script); replaces the HTTP backend.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Chat-completions base URL.
    #[arg(long)]
    pub backend_url: Option<String>,
    /// Model id sent with every request.
    #[arg(long)]
    pub model: Option<String>,
    /// Per-call timeout in seconds.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Response cache directory; enables replayable runs.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Output directory for manifest, results, traces.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Maximum voting iterations.
    #[arg(long)]
    pub k: Option<u32>,
    /// Self-consistency path count.
    #[arg(long)]
    pub sc_paths: Option<usize>,
    /// Disable the case-generation stage (ablation; method=ours only).
    #[arg(long)]
    pub no_case_generation: bool,
    /// Concurrent question pipelines.
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Retry budget per call.
    #[arg(long)]
    pub max_attempts: Option<u32>,
    /// Replace golds with unique sentinels (leakage audit mode).
    #[arg(long)]
    pub sentinel_golds: bool,
}

impl EvalArgs {
    /// Resolve CLI > file > defaults into a full `RunConfig`.
    pub fn resolve(&self) -> Result<RunConfig, String> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };

        let dataset_path =
            self.dataset.clone().or(file.dataset).ok_or_else(|| {
                "a dataset path is required (--dataset or config file)".to_string()
            })?;
        let method = self.method.or(file.method).unwrap_or(Method::Ours);
        let shots = self.shots.or(file.shots).unwrap_or(0);
        let runs = self.runs.or(file.runs).unwrap_or(3);
        let sample_size = self.sample_size.or(file.sample_size).unwrap_or(300);
        let seed = self.seed.or(file.seed).unwrap_or(1);

        let mut backend = BackendConfig::default();
        if let Some(url) = self.backend_url.clone().or(file.backend_url) {
            backend.base_url = url;
        }
        if let Some(model) = self.model.clone().or(file.model) {
            backend.model_id = model;
        }
        if let Some(secs) = self.timeout_secs.or(file.timeout_secs) {
            backend.timeout = Duration::from_secs(secs);
        }
        if let Some(attempts) = self.max_attempts.or(file.max_attempts) {
            backend.retry.max_attempts = attempts;
        }
        backend.cache_path = self.cache.clone().or(file.cache);

        let mut pipeline = PipelineConfig::default();
        if let Some(k) = self.k.or(file.k) {
            pipeline.k = k;
        }
        if self.no_case_generation || file.no_case_generation.unwrap_or(false) {
            pipeline.case_generation = false;
        }
        if let Some(par) = self.parallelism.or(file.parallelism) {
            pipeline.parallelism = par.max(1);
        }

        let mut baseline = BaselineConfig {
            method: method.baseline().unwrap_or(BaselineMethod::Direct),
            shots,
            ..BaselineConfig::default()
        };
        if let Some(paths) = self.sc_paths.or(file.sc_paths) {
            baseline.sc_paths = paths;
        }
        if let Some(t) = file.sc_temperature {
            baseline.sc_params.temperature = t;
        }
        baseline.sc_seed = seed;

        let config = RunConfig {
            method,
            shots,
            backend,
            pipeline,
            baseline,
            plan: SamplePlan::with_base_seed(sample_size, runs, seed),
            dataset_path,
            exemplar_path: self.exemplars.clone().or(file.exemplars),
            prompts_path: self.prompts.clone().or(file.prompts),
            mock_script: self.mock_script.clone().or(file.mock_script),
            out_dir: self
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("runs/latest")),
            sentinel_golds: self.sentinel_golds,
            exemplar_seed: seed ^ 0x5eed,
        };
        config.validate()?;
        Ok(config)
    }
}
