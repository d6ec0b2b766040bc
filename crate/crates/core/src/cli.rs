//! The `oa` command line.
//!
//! Every subcommand reads its inputs from flags, an optional JSON config file and defaults (in
//! that order of precedence), writes its artifacts under `--out`, echoes the effective config
//! there, and prints a one-line JSON summary on stdout. Failures print
//! `{"error": {"kind": ..., "message": ...}}` on stderr and exit with 2 for usage problems
//! (bad flags, malformed config, missing inputs) or 1 for runtime failures.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::annotation::{
    aggregate_judgments, generate_tasks, import_judgments_csv, load_definitions, load_gold_pool, load_tasks, save_tasks,
    task_directions, AggregationPolicy, AnnotationService, AnnotationTask, ErroneousFeatureSet, JudgmentStore, TaskConfig,
};
use crate::detector::{detect, write_explanations, DetectConfig, DetectionReport};
use crate::error::Error;
use crate::evaluation::{
    confidence_histogram, flagged_errors, least_confidence_rank, precision_at_k, tau_sweep, write_histogram_csv,
    write_precision_csv, write_sweep_csv, EvaluationRun, Method, SweepRow,
};
use crate::global::{rank_features, write_ranking_csv, FeatureFilter, GlobalConfig};
use crate::local::{explain_instance, ExplainerConfig};
use crate::model::{ExternalConfig, ExternalModel, LogisticModel, ModelHandle, PredictionCache, TrainConfig};
use crate::synth::{generate_benchmark, load_polarity, perfect_judgments, write_judgments_csv, SynthConfig};
use crate::text::{load_corpus, ClassConfig, Corpus};

pub const CACHE_ENV: &str = "OA_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalSettings {
    pub batch_size: usize,
    pub timeout_secs: f64,
    pub retries: usize,
}

impl Default for ExternalSettings {
    fn default() -> Self {
        let d = ExternalConfig::default();
        ExternalSettings {
            batch_size: d.batch_size,
            timeout_secs: d.timeout.as_secs_f64(),
            retries: d.retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSettings {
    pub ks: Vec<usize>,
    pub taus: Vec<f64>,
    pub bins: usize,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            ks: vec![10, 50, 100],
            taus: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            bins: 10,
        }
    }
}

/// Everything a pipeline run can be configured with; mirrors the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub definitions: Option<PathBuf>,
    pub gold_pool: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub out: PathBuf,
    /// `builtin`, `cmd:<argv>` or `http:<url>`.
    pub model: String,
    /// Weights for `builtin`; defaults to `<out>/model.json`.
    pub model_file: Option<PathBuf>,
    pub classes: ClassConfig,
    pub train: TrainConfig,
    pub external: ExternalSettings,
    pub explainer: ExplainerConfig,
    pub tau: f64,
    pub global: GlobalConfig,
    pub tasks: TaskConfig,
    pub aggregation: AggregationPolicy,
    pub evaluation: EvaluationSettings,
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            definitions: None,
            gold_pool: None,
            cache_dir: None,
            out: PathBuf::from("oa-out"),
            model: "builtin".into(),
            model_file: None,
            classes: ClassConfig::sentiment(),
            train: TrainConfig::default(),
            external: ExternalSettings::default(),
            explainer: ExplainerConfig::default(),
            tau: 0.0,
            global: GlobalConfig::default(),
            tasks: TaskConfig::default(),
            aggregation: AggregationPolicy::default(),
            evaluation: EvaluationSettings::default(),
            workers: None,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "oa", version, about = "Explainable error detection for black-box sentiment classifiers")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// JSON config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// builtin | cmd:<argv> | http:<url>
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    model_file: Option<PathBuf>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    top_n: Option<usize>,
    /// non-neutral | all
    #[arg(long, global = true)]
    filter: Option<FeatureFilter>,
    #[arg(long, global = true)]
    min_support: Option<usize>,
    #[arg(long, global = true)]
    n_samples: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    definitions: Option<PathBuf>,
    #[arg(long, global = true)]
    gold_pool: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the builtin logistic-regression model.
    Train,
    /// Write local explanations for documents of the corpus.
    Explain {
        /// Only these document ids (repeatable).
        #[arg(long = "doc")]
        docs: Vec<String>,
    },
    /// Rank global feature contributions and prepare annotation tasks.
    Globals,
    /// Serve the annotation API (and optionally a static UI).
    ServeAnnotation {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Append judgments from a CSV file to the judgment store.
    ImportJudgments {
        #[arg(long)]
        judgments: PathBuf,
    },
    /// Aggregate stored judgments into the erroneous feature set.
    AggregateJudgments,
    /// Score documents containing erroneous features.
    Detect {
        /// Erroneous feature set; defaults to `<out>/erroneous_features.json`.
        #[arg(long)]
        erroneous: Option<PathBuf>,
    },
    /// Compare detection with the least-confidence baseline.
    Evaluate {
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        taus: Option<Vec<f64>>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Precision of the flagged set over a range of thresholds.
    Sweep {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        taus: Option<Vec<f64>>,
    },
    /// Write the planted-error benchmark corpus.
    Synth,
    /// Answer every annotation task like an assessor who knows each word's true polarity.
    SimulateAssessors {
        #[arg(long)]
        polarity: PathBuf,
        #[arg(long, default_value_t = 5)]
        assessors: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Explain { .. } => "explain",
            Command::Globals => "globals",
            Command::ServeAnnotation { .. } => "serve-annotation",
            Command::ImportJudgments { .. } => "import-judgments",
            Command::AggregateJudgments => "aggregate-judgments",
            Command::Detect { .. } => "detect",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep { .. } => "sweep",
            Command::Synth => "synth",
            Command::SimulateAssessors { .. } => "simulate-assessors",
        }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(message: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(message.into()))
}

/// Runs the CLI on `args` (including the program name) and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report_error("usage", &e.to_string());
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            report_error("usage", &m);
            2
        }
        Err(CliError::Runtime(e)) => {
            report_error(e.kind(), &e.to_string());
            1
        }
    }
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({"error": {"kind": kind, "message": message.trim_end()}}));
}

fn warn(message: &str) {
    eprintln!("{}", json!({"warning": message}));
}

fn resolve_config(common: &CommonArgs) -> CliResult<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed config {}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    let c = common;
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = &$flag {
                $field = v.clone();
            }
        };
    }
    set!(c.out => cfg.out);
    set!(c.model => cfg.model);
    set!(c.tau => cfg.tau);
    set!(c.top_n => cfg.global.top_n);
    set!(c.filter => cfg.global.filter);
    set!(c.min_support => cfg.global.min_support);
    set!(c.n_samples => cfg.explainer.n_samples);
    if let Some(seed) = c.seed {
        cfg.explainer.seed = seed;
        cfg.train.seed = seed;
    }
    if c.corpus.is_some() {
        cfg.corpus = c.corpus.clone();
    }
    if c.model_file.is_some() {
        cfg.model_file = c.model_file.clone();
    }
    if c.definitions.is_some() {
        cfg.definitions = c.definitions.clone();
    }
    if c.gold_pool.is_some() {
        cfg.gold_pool = c.gold_pool.clone();
    }
    if c.workers.is_some() {
        cfg.workers = c.workers;
    }
    if let Ok(dir) = std::env::var(CACHE_ENV) {
        if !dir.is_empty() {
            cfg.cache_dir = Some(PathBuf::from(dir));
        }
    }
    cfg.global.workers = cfg.workers;
    cfg.classes = cfg.classes.clone().validated()?;
    if !cfg.tau.is_finite() {
        return usage(format!("tau must be finite, got {}", cfg.tau));
    }
    if cfg.workers == Some(0) {
        return usage("workers must be at least 1");
    }
    if cfg.explainer.n_samples == 0 {
        return usage("n-samples must be at least 1");
    }
    Ok(cfg)
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        usage(format!("{what} {} does not exist", path.display()))
    }
}

fn corpus_path(cfg: &PipelineConfig) -> CliResult<PathBuf> {
    let path = cfg.corpus.clone().ok_or_else(|| CliError::Usage("--corpus is required".into()))?;
    require_file(&path, "corpus")?;
    Ok(path)
}

fn load_input_corpus(cfg: &PipelineConfig) -> CliResult<Corpus> {
    Ok(load_corpus(&corpus_path(cfg)?, &cfg.classes)?)
}

fn model_file(cfg: &PipelineConfig) -> PathBuf {
    cfg.model_file.clone().unwrap_or_else(|| cfg.out.join("model.json"))
}

fn open_model(cfg: &PipelineConfig) -> CliResult<ModelHandle> {
    let external = ExternalConfig {
        batch_size: cfg.external.batch_size.max(1),
        timeout: Duration::from_secs_f64(cfg.external.timeout_secs.max(0.001)),
        retries: cfg.external.retries,
    };
    let handle = if cfg.model == "builtin" {
        let path = model_file(cfg);
        require_file(&path, "builtin model (run `oa train` first)")?;
        let model = LogisticModel::load(&path)?;
        if model.classes() != &cfg.classes {
            return usage(format!("model {} was trained for different classes", path.display()));
        }
        ModelHandle::builtin(model)
    } else if let Some(cmd) = cfg.model.strip_prefix("cmd:") {
        let argv = shell_words::split(cmd).map_err(|e| CliError::Usage(format!("bad model command: {e}")))?;
        if argv.is_empty() {
            return usage("model command is empty");
        }
        ModelHandle::new(Arc::new(ExternalModel::spawn(&argv, cfg.classes.clone(), external)?))
    } else if let Some(url) = cfg.model.strip_prefix("http:") {
        ModelHandle::new(Arc::new(ExternalModel::http(url, cfg.classes.clone(), external)?))
    } else {
        return usage(format!("unknown model spec `{}`; expected builtin, cmd:<argv> or http:<url>", cfg.model));
    };
    let dir = cfg.cache_dir.clone().unwrap_or_else(|| cfg.out.join("cache"));
    Ok(handle.with_cache(Arc::new(PredictionCache::open(&dir)?)))
}

fn persist_cache(model: &ModelHandle) -> CliResult<()> {
    if let Some(cache) = model.cache() {
        cache.persist()?;
    }
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).map_err(Error::from)? + "\n")?;
    Ok(())
}

fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match workers {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?
            .install(f)),
        None => Ok(f()),
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let cfg = resolve_config(&cli.common)?;
    std::fs::create_dir_all(&cfg.out)?;
    write_json(
        &cfg.out.join(format!("effective_config.{}.json", cli.command.name())),
        &cfg,
    )?;
    match cli.command {
        Command::Train => train(&cfg),
        Command::Explain { docs } => explain(&cfg, &docs),
        Command::Globals => globals(&cfg),
        Command::ServeAnnotation { addr, ui } => serve(&cfg, &addr, ui),
        Command::ImportJudgments { judgments } => import(&cfg, &judgments),
        Command::AggregateJudgments => aggregate(&cfg),
        Command::Detect { erroneous } => run_detect(&cfg, erroneous),
        Command::Evaluate { k, taus, bins } => evaluate(&cfg, k, taus, bins),
        Command::Sweep { taus } => sweep(&cfg, taus),
        Command::Synth => synth(&cfg),
        Command::SimulateAssessors { polarity, assessors } => simulate(&cfg, &polarity, assessors),
    }
}

fn train(cfg: &PipelineConfig) -> CliResult<()> {
    let corpus = load_input_corpus(cfg)?;
    let (model, report) = LogisticModel::train(&corpus, &cfg.classes, &cfg.train)?;
    let path = model_file(cfg);
    model.save(&path)?;
    write_json(&cfg.out.join("train_report.json"), &report)?;
    println!(
        "{}",
        json!({"model": path, "documents": corpus.len(), "vocabulary": model.vocabulary().len(),
               "final_loss": report.losses.last(), "train_accuracy": report.train_accuracy})
    );
    Ok(())
}

fn explain(cfg: &PipelineConfig, ids: &[String]) -> CliResult<()> {
    let corpus = load_input_corpus(cfg)?;
    let model = open_model(cfg)?;
    let docs = if ids.is_empty() {
        corpus.documents().iter().collect::<Vec<_>>()
    } else {
        ids.iter()
            .map(|id| corpus.get(id).ok_or_else(|| CliError::Usage(format!("document `{id}` is not in the corpus"))))
            .collect::<CliResult<Vec<_>>>()?
    };
    let explanations = in_pool(cfg.workers, || {
        docs.par_iter()
            .map(|d| explain_instance(&model, d, &cfg.explainer))
            .collect::<crate::Result<Vec<_>>>()
    })??;
    let path = cfg.out.join("explanations.jsonl");
    let mut out = create(&path)?;
    write_explanations(&mut out, &explanations)?;
    out.flush()?;
    persist_cache(&model)?;
    println!("{}", json!({"explanations": path, "count": explanations.len()}));
    Ok(())
}

fn tasks_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.out.join("tasks.json")
}

fn build_tasks(cfg: &PipelineConfig, ranking: &[crate::global::GlobalFeatureContribution]) -> CliResult<Vec<AnnotationTask>> {
    let definitions = match &cfg.definitions {
        Some(p) => {
            require_file(p, "definitions")?;
            load_definitions(p)?
        }
        None => HashMap::new(),
    };
    let gold_pool = match &cfg.gold_pool {
        Some(p) => {
            require_file(p, "gold pool")?;
            load_gold_pool(p)?
        }
        None => Vec::new(),
    };
    Ok(generate_tasks(ranking, &definitions, ranking.len(), &gold_pool, &cfg.classes, &cfg.tasks)?)
}

fn globals(cfg: &PipelineConfig) -> CliResult<()> {
    let corpus = load_input_corpus(cfg)?;
    let model = open_model(cfg)?;
    let ranking = rank_features(&model, &corpus, &cfg.global)?;
    let path = cfg.out.join("global_ranking.csv");
    let mut out = create(&path)?;
    write_ranking_csv(&mut out, &ranking, &cfg.classes)?;
    out.flush()?;
    persist_cache(&model)?;

    let tasks = tasks_path(cfg);
    let task_count = if cfg.gold_pool.is_some() || !cfg.tasks.inject_gold {
        let t = build_tasks(cfg, &ranking)?;
        save_tasks(&tasks, &t)?;
        Some(t.len())
    } else {
        if tasks.exists() {
            std::fs::remove_file(&tasks)?;
        }
        warn("no gold pool configured; annotation tasks were not written");
        None
    };
    println!("{}", json!({"ranking": path, "features": ranking.len(), "tasks": task_count}));
    Ok(())
}

fn load_task_file(cfg: &PipelineConfig) -> CliResult<Vec<AnnotationTask>> {
    let path = tasks_path(cfg);
    require_file(&path, "annotation tasks (run `oa globals --gold-pool ...` first)")?;
    Ok(load_tasks(&path)?)
}

fn open_store(cfg: &PipelineConfig) -> CliResult<Arc<JudgmentStore>> {
    Ok(Arc::new(JudgmentStore::open(
        &cfg.out.join("judgments.jsonl"),
        cfg.aggregation.trust.clone(),
    )?))
}

fn serve(cfg: &PipelineConfig, addr: &str, ui: Option<PathBuf>) -> CliResult<()> {
    let tasks = load_task_file(cfg)?;
    if let Some(dir) = &ui {
        if !dir.is_dir() {
            return usage(format!("ui directory {} does not exist", dir.display()));
        }
    }
    let service = AnnotationService::new(tasks, cfg.classes.clone(), open_store(cfg)?, cfg.aggregation.clone());
    let workers = cfg.workers.unwrap_or(4);
    let handle = service.serve(addr, workers, ui)?;
    println!("{}", json!({"listening": format!("http://{}", handle.addr())}));
    std::io::stdout().flush()?;
    handle.join();
    Ok(())
}

fn import(cfg: &PipelineConfig, judgments: &Path) -> CliResult<()> {
    require_file(judgments, "judgments CSV")?;
    let tasks = load_task_file(cfg)?;
    let store = open_store(cfg)?;
    let n = import_judgments_csv(File::open(judgments)?, &tasks, &cfg.classes, &store)?;
    println!("{}", json!({"imported": n, "store": cfg.out.join("judgments.jsonl")}));
    Ok(())
}

fn aggregate(cfg: &PipelineConfig) -> CliResult<()> {
    let tasks = load_task_file(cfg)?;
    let store = open_store(cfg)?;
    let set = aggregate_judgments(&store.log(), &task_directions(&tasks), &cfg.aggregation);
    let path = cfg.out.join("erroneous_features.json");
    set.save(&path)?;
    let undecided = set
        .decisions
        .values()
        .filter(|d| d.decision == crate::annotation::Decision::Undecided)
        .count();
    println!("{}", json!({"erroneous_features": path, "erroneous": set.len(), "undecided": undecided}));
    Ok(())
}

fn run_detect(cfg: &PipelineConfig, erroneous: Option<PathBuf>) -> CliResult<()> {
    let corpus = load_input_corpus(cfg)?;
    let set_path = erroneous.unwrap_or_else(|| cfg.out.join("erroneous_features.json"));
    require_file(&set_path, "erroneous feature set (run `oa aggregate-judgments` first)")?;
    let set = ErroneousFeatureSet::load(&set_path)?;
    let model = open_model(cfg)?;
    let detect_cfg = DetectConfig {
        tau: cfg.tau,
        explainer: cfg.explainer.clone(),
        workers: cfg.workers,
    };
    let (report, explanations) = detect(&corpus, &model, &set, &detect_cfg)?;
    for w in &report.warnings {
        warn(w);
    }
    let path = cfg.out.join("detection.csv");
    let mut out = create(&path)?;
    report.write_csv(&mut out)?;
    out.flush()?;
    write_json(&cfg.out.join("detection_summary.json"), &report.summary())?;
    let mut out = create(&cfg.out.join("detection_explanations.jsonl"))?;
    write_explanations(&mut out, &explanations)?;
    out.flush()?;
    persist_cache(&model)?;
    let s = report.summary();
    println!("{}", json!({"detection": path, "scored": s.scored, "flagged": s.flagged, "skipped": s.skipped}));
    Ok(())
}

fn load_detection(cfg: &PipelineConfig) -> CliResult<DetectionReport> {
    let path = cfg.out.join("detection.csv");
    require_file(&path, "detection report (run `oa detect` first)")?;
    Ok(DetectionReport::read_csv(File::open(&path)?, cfg.tau)?.with_threshold(cfg.tau))
}

fn write_sweep(cfg: &PipelineConfig, report: &DetectionReport, corpus: &Corpus, taus: &[f64]) -> CliResult<Vec<SweepRow>> {
    if taus.iter().any(|t| !t.is_finite()) {
        return usage("sweep thresholds must be finite");
    }
    let rows = tau_sweep(|t| Ok(report.with_threshold(t)), corpus, taus).map_err(|e| match e {
        Error::Validation(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    let mut out = create(&cfg.out.join("sweep.csv"))?;
    write_sweep_csv(&mut out, &rows)?;
    out.flush()?;
    Ok(rows)
}

fn sweep(cfg: &PipelineConfig, taus: Option<Vec<f64>>) -> CliResult<()> {
    let corpus = load_input_corpus(cfg)?;
    let report = load_detection(cfg)?;
    let taus = taus.unwrap_or_else(|| cfg.evaluation.taus.clone());
    let rows = write_sweep(cfg, &report, &corpus, &taus)?;
    println!("{}", json!({"sweep": cfg.out.join("sweep.csv"), "rows": rows.len()}));
    Ok(())
}

fn evaluate(cfg: &PipelineConfig, ks: Option<Vec<usize>>, taus: Option<Vec<f64>>, bins: Option<usize>) -> CliResult<()> {
    let corpus = load_input_corpus(cfg)?;
    let model = open_model(cfg)?;
    let mut report = load_detection(cfg)?;
    let ks = ks.unwrap_or_else(|| cfg.evaluation.ks.clone());
    let taus = taus.unwrap_or_else(|| cfg.evaluation.taus.clone());
    let bins = bins.unwrap_or(cfg.evaluation.bins);

    // The report CSV carries no probabilities; recover them from the (cached) model.
    let docs = report
        .scored
        .iter()
        .map(|s| {
            corpus
                .get(&s.document_id)
                .map(|d| (d, None))
                .ok_or_else(|| CliError::Usage(format!("detection report names `{}`, which is not in the corpus", s.document_id)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let predictions = model.predict_documents(&docs)?;
    for (s, p) in report.scored.iter_mut().zip(&predictions) {
        s.predicted_prob = p.max_prob();
    }

    let runs = [EvaluationRun::from_detection(&report, &corpus)?, least_confidence_rank(&model, &corpus)?];
    let mut precision = Vec::new();
    for run in &runs {
        for &k in &ks {
            if k == 0 || k > run.entries.len() {
                warn(&format!("{}: K={k} exceeds the {} ranked instances; skipped", run.method, run.entries.len()));
                continue;
            }
            let (_, p) = precision_at_k(run, &[k])?[0];
            precision.push((k, run.method, p));
        }
    }
    let mut out = create(&cfg.out.join("precision_at_k.csv"))?;
    write_precision_csv(&mut out, &precision)?;
    out.flush()?;

    let rows = write_sweep(cfg, &report, &corpus, &taus)?;

    let errors = flagged_errors(&report, &corpus)?;
    let probs: Vec<f64> = errors.iter().map(|s| s.predicted_prob).collect();
    let histogram = match confidence_histogram(&probs, cfg.classes.k(), bins.max(1)) {
        Ok(h) => {
            let mut out = create(&cfg.out.join("confidence_histogram.csv"))?;
            write_histogram_csv(&mut out, &h)?;
            out.flush()?;
            Some(h)
        }
        Err(Error::EmptyFlaggedSet) => {
            warn("no flagged instance is a true error; confidence histogram not written");
            None
        }
        Err(e) => return Err(e.into()),
    };
    persist_cache(&model)?;

    let summary = json!({
        "tau": cfg.tau,
        "precision_at_k": precision.iter().map(|(k, m, p)| json!({"k": k, "method": m, "precision": p})).collect::<Vec<_>>(),
        "sweep": rows,
        "flagged_errors": errors.len(),
        "fraction_above_0_7": histogram.as_ref().map(|h| h.above_0_7),
    });
    write_json(&cfg.out.join("evaluation_summary.json"), &summary)?;
    let framework_errors = runs[0].entries.iter().filter(|e| e.is_error() == Some(true)).count();
    println!(
        "{}",
        json!({"evaluation": cfg.out.join("evaluation_summary.json"), "scored": runs[0].entries.len(),
               "scored_errors": framework_errors, "methods": [Method::ErroneousScore, Method::LeastConfidence]})
    );
    Ok(())
}

fn synth(cfg: &PipelineConfig) -> CliResult<()> {
    let config = SynthConfig {
        seed: cfg.train.seed,
        ..SynthConfig::default()
    };
    let bench = generate_benchmark(&config)?;
    bench.save(&cfg.out)?;
    println!("{}", json!({"benchmark": cfg.out, "train": bench.train.len(), "test": bench.test.len(), "seed": config.seed}));
    Ok(())
}

fn simulate(cfg: &PipelineConfig, polarity: &Path, assessors: usize) -> CliResult<()> {
    require_file(polarity, "polarity file")?;
    let tasks = load_task_file(cfg)?;
    let polarity = load_polarity(polarity, &cfg.classes)?;
    let judgments = perfect_judgments(&tasks, &polarity, assessors);
    let path = cfg.out.join("simulated_judgments.csv");
    let mut out = create(&path)?;
    write_judgments_csv(&mut out, &judgments, &tasks, &cfg.classes)?;
    out.flush()?;
    println!("{}", json!({"judgments": path, "rows": judgments.len()}));
    Ok(())
}
