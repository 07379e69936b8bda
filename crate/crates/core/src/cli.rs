//! Command-line driver: `run`, `eval`, `build-demos`, `snapshot`.
//!
//! Runs persist to a directory holding `manifest.json`, one trace per
//! document under `traces/`, and the evaluation report. Rerunning over the
//! same directory skips documents that already have a successful trace.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{Ablation, Pipeline, PipelineConfig, PipelineTrace, MAX_AMBIGUOUS, MAX_QUERIES};
use crate::backend::{
    load_rules, ChatBackend, OpenAiBackend, OpenAiConfig, RecordingBackend, ReplayBackend, ScriptedBackend,
};
use crate::corpus::{self, Dataset, EntityType, TypeDefinition};
use crate::demobuild::{self, Demonstration, NegativeConfig, PairPolarity};
use crate::evalkit::{self, EvalReport};
use crate::prompting::{fingerprint, Templates, DEFAULT_TEMPLATES};
use crate::wiki::{HttpTransport, KnowledgeRetriever, MediaWikiClient, SnapshotCache, DEFAULT_API_URL};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACES_DIR: &str = "traces";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failure(_) => 3,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Jsonl,
    Conll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub format: DatasetFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Openai,
    /// OpenAI-compatible calls, each appended to `session`.
    Record,
    /// Responses from `session`, no network.
    Replay,
    /// Rules from `rules`, no network.
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<PathBuf>,
}

fn default_base_url() -> String {
    "https://api.openai.com".into()
}
fn default_model() -> String {
    PipelineConfig::default().model_name
}
fn default_max_tokens() -> u32 {
    PipelineConfig::default().max_output_tokens
}
fn default_in_flight() -> usize {
    4
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeConfig {
    pub snapshot: PathBuf,
    #[serde(default = "default_true")]
    pub offline: bool,
    #[serde(default = "default_api_url")]
    pub api_url: String,
}

fn default_api_url() -> String {
    DEFAULT_API_URL.into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    #[serde(default = "default_true")]
    pub reflection: bool,
    #[serde(default = "default_true")]
    pub retrieval: bool,
    #[serde(default = "default_true")]
    pub disambiguation: bool,
    #[serde(default = "default_true")]
    pub negatives: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            reflection: true,
            retrieval: true,
            disambiguation: true,
            negatives: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    #[serde(default = "max_q")]
    pub max_queries: usize,
    #[serde(default = "max_a")]
    pub max_ambiguous: usize,
    /// Defaults to 10 for inventories of more than ten types, else 5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demos: Option<usize>,
}

fn max_q() -> usize {
    MAX_QUERIES
}
fn max_a() -> usize {
    MAX_AMBIGUOUS
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_queries: MAX_QUERIES,
            max_ambiguous: MAX_AMBIGUOUS,
            demos: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub types: PathBuf,
    pub support_set: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    pub backend: BackendConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<KnowledgeConfig>,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_in_flight")]
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(source: &str) -> Result<Self, CliError> {
        toml::from_str(source).map_err(config_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let source = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&source)
    }

    /// Resolves relative paths against `base` instead of the working directory.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.path);
        fix(&mut self.types);
        fix(&mut self.support_set);
        fix(&mut self.out_dir);
        if let Some(t) = &mut self.template {
            fix(t);
        }
        if let Some(r) = &mut self.backend.rules {
            fix(r);
        }
        if let Some(s) = &mut self.backend.session {
            fix(s);
        }
        if let Some(k) = &mut self.knowledge {
            fix(&mut k.snapshot);
        }
    }

    /// Compact JSON with fields in declaration order.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        fingerprint(&self.canonical())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let must_exist = |what: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{what} file not found: {}", p.display())))
            }
        };
        must_exist("dataset", &self.dataset.path)?;
        must_exist("types", &self.types)?;
        must_exist("support set", &self.support_set)?;
        if let Some(t) = &self.template {
            must_exist("template", t)?;
        }
        if self.caps.max_queries == 0 || self.caps.max_ambiguous == 0 || self.caps.demos == Some(0) {
            return Err(CliError::Config("caps must be positive".into()));
        }
        if self.workers == 0 || self.backend.max_in_flight == 0 {
            return Err(CliError::Config("workers and max_in_flight must be positive".into()));
        }
        match self.backend.kind {
            BackendKind::Scripted => must_exist("rules", self.backend.rules.as_deref().unwrap_or(Path::new("")))?,
            BackendKind::Replay => must_exist("session", self.backend.session.as_deref().unwrap_or(Path::new("")))?,
            BackendKind::Record if self.backend.session.is_none() => {
                return Err(CliError::Config("record backend needs a session path".into()))
            }
            _ => {}
        }
        if self.ablation.retrieval {
            match &self.knowledge {
                None => return Err(CliError::Config("retrieval is enabled but [knowledge] is missing".into())),
                Some(k) if k.offline => must_exist("snapshot", &k.snapshot)?,
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            model_name: self.backend.model.clone(),
            temperature: self.backend.temperature,
            max_output_tokens: self.backend.max_output_tokens,
            max_queries: self.caps.max_queries,
            max_ambiguous: self.caps.max_ambiguous,
            ablation: Ablation {
                reflection: self.ablation.reflection,
                retrieval: self.ablation.retrieval,
                disambiguation: self.ablation.disambiguation,
            },
        }
    }
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| failure(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub template_hash: String,
    pub dataset_hash: String,
    pub types_hash: String,
    pub support_set_hash: String,
    pub snapshot_hash: Option<String>,
    pub documents: usize,
    pub failed: usize,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self, CliError> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| failure(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| failure(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub documents: usize,
    pub resumed: usize,
    pub executed: usize,
    pub failed: usize,
    pub backend_calls: usize,
    /// `None` when the dataset has unlabeled documents.
    pub report: Option<EvalReport>,
}

/// File name for a document's trace. Ids that are not plain get a hash
/// suffix so distinct ids never share a file.
pub fn trace_file_name(doc_id: &str) -> String {
    let safe: String = doc_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    if safe == doc_id && !doc_id.starts_with('.') {
        format!("{safe}.json")
    } else {
        format!("{safe}-{}.json", &fingerprint(doc_id)[..12])
    }
}

pub fn write_trace(dir: &Path, trace: &PipelineTrace) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(trace).expect("trace serializes") + "\n";
    fs::write(dir.join(trace_file_name(&trace.doc_id)), text)
}

fn read_trace(path: &Path) -> Option<PipelineTrace> {
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

fn load_dataset(config: &RunConfig, type_defs: &[TypeDefinition]) -> Result<Dataset, CliError> {
    let raw = match config.dataset.format {
        DatasetFormat::Jsonl => corpus::load_jsonl(&config.dataset.path),
        DatasetFormat::Conll => corpus::load_conll(&config.dataset.path),
    }
    .map_err(config_err)?;
    let types: Vec<EntityType> = type_defs.iter().map(|d| d.entity_type.clone()).collect();
    let mut dataset = Dataset::new(raw.documents, types).map_err(config_err)?;
    dataset.warnings = raw.warnings;
    Ok(dataset)
}

fn load_templates(config: &RunConfig) -> Result<(Templates, String), CliError> {
    match &config.template {
        Some(p) => {
            let source = fs::read_to_string(p).map_err(config_err)?;
            Ok((Templates::parse(&source).map_err(config_err)?, fingerprint(&source)))
        }
        None => Ok((Templates::default(), fingerprint(DEFAULT_TEMPLATES))),
    }
}

fn load_demos(config: &RunConfig, num_types: usize) -> Result<Vec<Demonstration>, CliError> {
    let mut demos = demobuild::load_support_set(&config.support_set).map_err(config_err)?;
    let wanted = config.caps.demos.unwrap_or_else(|| demobuild::default_demo_count(num_types));
    if demos.len() < wanted {
        log::warn!("support set has {} demonstrations, {wanted} requested", demos.len());
    }
    demos.truncate(wanted);
    if !config.ablation.negatives {
        for d in &mut demos {
            d.pairs.retain(|p| p.polarity == PairPolarity::Positive);
        }
    }
    Ok(demos)
}

fn make_backend(config: &BackendConfig) -> Result<Box<dyn ChatBackend>, CliError> {
    let openai = || {
        let mut c = OpenAiConfig::new(config.base_url.clone());
        c.max_in_flight = config.max_in_flight;
        OpenAiBackend::new(c).map_err(config_err)
    };
    Ok(match config.kind {
        BackendKind::Openai => Box::new(openai()?),
        BackendKind::Record => Box::new(
            RecordingBackend::new(openai()?, config.session.as_ref().expect("validated")).map_err(config_err)?,
        ),
        BackendKind::Replay => {
            Box::new(ReplayBackend::open(config.session.as_ref().expect("validated")).map_err(config_err)?)
        }
        BackendKind::Scripted => Box::new(ScriptedBackend::new(
            load_rules(config.rules.as_ref().expect("validated")).map_err(config_err)?,
        )),
    })
}

fn make_retriever(config: &KnowledgeConfig) -> Result<KnowledgeRetriever, CliError> {
    if config.offline {
        let cache = SnapshotCache::load(&config.snapshot).map_err(config_err)?;
        return Ok(KnowledgeRetriever::offline(cache));
    }
    let cache = if config.snapshot.is_file() {
        SnapshotCache::load(&config.snapshot).map_err(config_err)?
    } else {
        SnapshotCache::new(None)
    };
    let transport = HttpTransport::new(config.api_url.clone()).map_err(config_err)?;
    Ok(KnowledgeRetriever::online(cache, Box::new(MediaWikiClient::new(transport))))
}

/// Runs the pipeline over every document without a successful trace, then
/// writes the manifest and, for labeled data, the report.
pub fn cmd_run(config: &RunConfig) -> Result<RunSummary, CliError> {
    config.validate()?;
    let type_defs = corpus::load_type_definitions(&config.types).map_err(config_err)?;
    let dataset = load_dataset(config, &type_defs)?;
    let (templates, template_hash) = load_templates(config)?;
    let demos = load_demos(config, type_defs.len())?;
    let backend = make_backend(&config.backend)?;
    let retriever = match (&config.knowledge, config.ablation.retrieval) {
        (Some(k), true) => Some(make_retriever(k)?),
        _ => None,
    };

    let traces_dir = config.out_dir.join(TRACES_DIR);
    fs::create_dir_all(&traces_dir).map_err(failure)?;

    let mut done: BTreeMap<String, PipelineTrace> = BTreeMap::new();
    let mut pending = Vec::new();
    for doc in &dataset.documents {
        match read_trace(&traces_dir.join(trace_file_name(&doc.id))) {
            Some(t) if t.doc_id == doc.id && !t.is_failed() => {
                done.insert(doc.id.clone(), t);
            }
            _ => pending.push(doc),
        }
    }
    let resumed = done.len();
    log::info!("{} documents, {resumed} resumed, {} to run", dataset.documents.len(), pending.len());

    let pipeline = Pipeline::new(
        config.pipeline_config(),
        &templates,
        &type_defs,
        &demos,
        retriever.as_ref(),
        backend.as_ref(),
    )
    .map_err(config_err)?;
    let mut write_error = None;
    let fresh = pipeline.run_batch(&pending, config.workers, |t| {
        if let Some(reason) = &t.failed {
            log::warn!("{}: {reason}", t.doc_id);
        }
        if let Err(e) = write_trace(&traces_dir, t) {
            write_error.get_or_insert(e);
        }
    });
    if let Some(e) = write_error {
        return Err(failure(format!("writing traces: {e}")));
    }
    let executed = fresh.len();
    for t in fresh {
        done.insert(t.doc_id.clone(), t);
    }

    let snapshot_hash = match (&retriever, &config.knowledge) {
        (Some(r), Some(k)) => {
            let snap = r.snapshot();
            if !r.is_offline() {
                snap.save(&k.snapshot).map_err(failure)?;
            }
            Some(snap.content_hash())
        }
        _ => None,
    };

    let traces: Vec<PipelineTrace> = dataset
        .documents
        .iter()
        .map(|d| done.remove(&d.id).expect("every document traced"))
        .collect();
    let failed = traces.iter().filter(|t| t.is_failed()).count();
    let manifest = Manifest {
        tool_version: TOOL_VERSION.into(),
        config_hash: config.hash(),
        config: config.clone(),
        template_hash,
        dataset_hash: file_hash(&config.dataset.path)?,
        types_hash: file_hash(&config.types)?,
        support_set_hash: file_hash(&config.support_set)?,
        snapshot_hash,
        documents: traces.len(),
        failed,
    };
    fs::write(
        config.out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )
    .map_err(failure)?;

    let report = if !traces.is_empty() && dataset.documents.iter().all(|d| d.gold.is_some()) {
        let r = evalkit::emit_report(&traces, &dataset).map_err(failure)?;
        evalkit::write_report(&r, &config.out_dir).map_err(failure)?;
        Some(r)
    } else {
        None
    };

    let summary = RunSummary {
        run_dir: config.out_dir.clone(),
        documents: traces.len(),
        resumed,
        executed,
        failed,
        backend_calls: pipeline.total_calls(),
        report,
    };
    if summary.documents > 0 && failed == summary.documents {
        return Err(CliError::Failure(format!("all {failed} documents failed")));
    }
    Ok(summary)
}

/// Re-scores a run directory. The dataset must still hash to the value in
/// the manifest.
pub fn cmd_eval(run_dir: &Path) -> Result<EvalReport, CliError> {
    let manifest = Manifest::load(run_dir)?;
    let config = &manifest.config;
    let current = file_hash(&config.dataset.path)?;
    if current != manifest.dataset_hash {
        return Err(failure(format!(
            "dataset {} changed since the run (hash {} != {})",
            config.dataset.path.display(),
            &current[..12],
            &manifest.dataset_hash[..12]
        )));
    }
    let type_defs = corpus::load_type_definitions(&config.types).map_err(config_err)?;
    let dataset = load_dataset(config, &type_defs)?;
    let traces_dir = run_dir.join(TRACES_DIR);
    let mut traces = Vec::new();
    for doc in &dataset.documents {
        if let Some(t) = read_trace(&traces_dir.join(trace_file_name(&doc.id))) {
            traces.push(t);
        }
    }
    if traces.is_empty() {
        return Err(failure(format!("no traces in {}", traces_dir.display())));
    }
    let report = evalkit::emit_report(&traces, &dataset).map_err(failure)?;
    evalkit::write_report(&report, run_dir).map_err(failure)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct BuildDemosArgs {
    pub input: PathBuf,
    pub format: DatasetFormat,
    /// Type inventory; defaults to the types seen in the input.
    pub types: Option<PathBuf>,
    pub seed: u64,
    pub count: Option<usize>,
    pub negatives: bool,
    pub output: PathBuf,
}

pub fn cmd_build_demos(args: &BuildDemosArgs) -> Result<Vec<Demonstration>, CliError> {
    let raw = match args.format {
        DatasetFormat::Jsonl => corpus::load_jsonl(&args.input),
        DatasetFormat::Conll => corpus::load_conll(&args.input),
    }
    .map_err(config_err)?;
    let type_set = match &args.types {
        Some(p) => corpus::load_type_definitions(p)
            .map_err(config_err)?
            .into_iter()
            .map(|d| d.entity_type)
            .collect(),
        None => raw.type_set.clone(),
    };
    let count = args.count.unwrap_or_else(|| demobuild::default_demo_count(type_set.len()));
    let config = if args.negatives {
        NegativeConfig::default()
    } else {
        NegativeConfig::disabled()
    };
    let demos =
        demobuild::build_support_set(&raw.documents, &type_set, count, args.seed, &config).map_err(failure)?;
    demobuild::write_support_set(&demos, &args.output).map_err(failure)?;
    Ok(demos)
}

#[derive(Debug, Clone)]
pub struct SnapshotArgs {
    pub queries: PathBuf,
    pub cache: PathBuf,
    pub cutoff: Option<String>,
    pub api_url: String,
    pub offline: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub hits: usize,
    pub misses: usize,
    pub failures: Vec<(String, String)>,
}

/// Pre-fetches every query in `queries` (one per line, `#` comments) into
/// the cache file. Confirmed misses are cached too.
pub fn cmd_snapshot(args: &SnapshotArgs) -> Result<SnapshotSummary, CliError> {
    if args.offline {
        return Err(CliError::Config("snapshot needs online mode".into()));
    }
    let text = fs::read_to_string(&args.queries).map_err(config_err)?;
    let mut cache = if args.cache.is_file() {
        SnapshotCache::load(&args.cache).map_err(config_err)?
    } else {
        SnapshotCache::new(None)
    };
    if args.cutoff.is_some() {
        cache.header.cutoff = args.cutoff.clone();
    }
    let transport = HttpTransport::new(args.api_url.clone()).map_err(config_err)?;
    let retriever = KnowledgeRetriever::online(cache, Box::new(MediaWikiClient::new(transport)));
    let summary = snapshot_queries(&retriever, &text);
    retriever.snapshot().save(&args.cache).map_err(failure)?;
    if !summary.failures.is_empty() {
        let list: Vec<String> = summary.failures.iter().map(|(q, e)| format!("{q}: {e}")).collect();
        return Err(CliError::Failure(format!("unresolved queries:\n{}", list.join("\n"))));
    }
    Ok(summary)
}

pub fn snapshot_queries(retriever: &KnowledgeRetriever, queries: &str) -> SnapshotSummary {
    let mut summary = SnapshotSummary::default();
    for q in queries.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        match retriever.retrieve_cached(q) {
            Ok(Some(_)) => summary.hits += 1,
            Ok(None) => summary.misses += 1,
            Err(e) => summary.failures.push((q.to_owned(), e.to_string())),
        }
    }
    summary
}

#[derive(Debug, Parser)]
#[command(name = "kdr", version, about = "Knowledge-retrieval, disambiguation and reflection NER pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        base_url: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        offline: bool,
        #[arg(long)]
        online: bool,
        #[arg(long)]
        no_reflection: bool,
        #[arg(long)]
        no_retrieval: bool,
        #[arg(long)]
        no_disambiguation: bool,
        #[arg(long)]
        no_negatives: bool,
    },
    /// Score the traces in a run directory.
    Eval { run_dir: PathBuf },
    /// Build a contrastive support set from annotated documents.
    BuildDemos {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: DatasetFormat,
        #[arg(long)]
        types: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        no_negatives: bool,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Fetch Wikipedia summaries for a list of queries into a snapshot cache.
    Snapshot {
        queries: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        cutoff: Option<String>,
        #[arg(long, default_value = DEFAULT_API_URL)]
        api_url: String,
        #[arg(long)]
        offline: bool,
    },
}

fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Run {
            config,
            out_dir,
            model,
            base_url,
            seed,
            offline,
            online,
            no_reflection,
            no_retrieval,
            no_disambiguation,
            no_negatives,
        } => {
            let mut c = RunConfig::load(&config)?;
            if let Some(d) = out_dir {
                c.out_dir = d;
            }
            if let Some(m) = model {
                c.backend.model = m;
            }
            if let Some(u) = base_url {
                c.backend.base_url = u;
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(k) = &mut c.knowledge {
                if offline || online {
                    k.offline = offline;
                }
            }
            c.ablation.reflection &= !no_reflection;
            c.ablation.retrieval &= !no_retrieval;
            c.ablation.disambiguation &= !no_disambiguation;
            c.ablation.negatives &= !no_negatives;
            let s = cmd_run(&c)?;
            let mut out = format!(
                "{} documents ({} resumed, {} run, {} failed), {} backend calls\nrun directory: {}\n",
                s.documents,
                s.resumed,
                s.executed,
                s.failed,
                s.backend_calls,
                s.run_dir.display()
            );
            if let Some(r) = &s.report {
                out.push('\n');
                out.push_str(&evalkit::render_table(r));
            }
            Ok(out)
        }
        Command::Eval { run_dir } => Ok(evalkit::render_table(&cmd_eval(&run_dir)?)),
        Command::BuildDemos {
            input,
            format,
            types,
            seed,
            count,
            no_negatives,
            output,
        } => {
            let demos = cmd_build_demos(&BuildDemosArgs {
                input,
                format,
                types,
                seed,
                count,
                negatives: !no_negatives,
                output: output.clone(),
            })?;
            Ok(format!("wrote {} demonstrations to {}\n", demos.len(), output.display()))
        }
        Command::Snapshot {
            queries,
            cache,
            cutoff,
            api_url,
            offline,
        } => {
            let s = cmd_snapshot(&SnapshotArgs {
                queries,
                cache: cache.clone(),
                cutoff,
                api_url,
                offline,
            })?;
            Ok(format!("{} hits, {} confirmed misses -> {}\n", s.hits, s.misses, cache.display()))
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("kdr: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
types = "types.json"
support_set = "demos.jsonl"
out_dir = "run"

[dataset]
path = "data.jsonl"
format = "jsonl"

[backend]
kind = "scripted"
rules = "rules.json"

[ablation]
retrieval = false
"#;

    #[test]
    fn defaults_and_canonical_hash() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.caps.max_queries, 5);
        assert_eq!(c.caps.max_ambiguous, 5);
        assert_eq!(c.backend.temperature, 0.0);
        assert!(c.ablation.reflection && !c.ablation.retrieval);
        let reordered = MINIMAL.replace("out_dir = \"run\"\n", "") + "";
        let reordered = format!("out_dir = \"run\"\n{reordered}");
        assert_eq!(RunConfig::from_toml(&reordered).unwrap().hash(), c.hash());
        let mut other = c.clone();
        other.seed = 1;
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = RunConfig::from_toml(&format!("{MINIMAL}\n[caps]\nmax_querys = 3\n")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_files_fail_validation() {
        let mut c = RunConfig::from_toml(MINIMAL).unwrap();
        c.rebase(Path::new("/nonexistent"));
        let err = c.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("dataset"));
    }

    #[test]
    fn trace_names_are_distinct_and_safe() {
        assert_eq!(trace_file_name("doc-1"), "doc-1.json");
        let a = trace_file_name("a/b");
        let b = trace_file_name("a_b");
        assert_ne!(a, b);
        assert!(!a.contains('/'));
        assert_ne!(trace_file_name(".."), "...json");
    }

    #[test]
    fn parse_errors_exit_two() {
        assert_eq!(main(["kdr", "run"]), 2);
        assert_eq!(main(["kdr", "frobnicate"]), 2);
    }
}
