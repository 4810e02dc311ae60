//! The `index`, `generate`, `eval`, `report` and `cache` commands.
//!
//! Every command takes the run directory's lock, is safe to rerun after an
//! interruption, and never rewrites existing records.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, EmbeddingProviderKind, RunConfig};
use crate::corpus::{load_benchmark, CodeWindow, Corpus, CorpusError, GenerationTask};
use crate::eval::{
    api_count_comparison, check_interpreter, check_task_sets, count_table, evaluate_records, intersection_report,
    intersection_tables, length_table, outcomes_from_verdicts, pass_at_k_rows, pass_at_k_table, pass_set,
    prompt_length_analysis, recall_metrics, recall_table, CountComparisonReport, CountEntry, EvalError,
    IntersectionReport, LengthReport, PassAtKMethod, PassAtKRow, RecallEntry, RecallReport, RunOutcomes, Table,
    VerdictRecord,
};
use crate::gateway::{
    template_version, CacheRecord, ChatTransport, Gateway, GatewayCounters, GatewayError, Mode, OpenAiTransport,
    ReplayCache, StageTag,
};
use crate::jsonl;
use crate::pipeline::{
    describe_repository_apis, index_items, run_condition, ApiDescription, ConditionName, GenerationRecord,
    PipelineContext, PipelineError, Resources, TOKEN_ESTIMATOR,
};
use crate::retrieval::{EmbeddingProvider, HashProjection, HttpEmbedder, RetrievalError, SourceMode, VectorIndex};
use crate::run::{corpus_hash, read_json, write_json_atomic, RunDir};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Fatal(String),
}

impl CommandError {
    /// 2 for configuration and usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) | CommandError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CommandError> = std::result::Result<T, E>;

/// Chat gateway for the configured mode. Replay never builds a transport;
/// the other modes use `transport` when given, else the environment's
/// provider.
pub fn build_gateway(cfg: &RunConfig, run: &RunDir, transport: Option<Arc<dyn ChatTransport>>) -> Result<Gateway> {
    let transport = || -> Result<Arc<dyn ChatTransport>> {
        if let Some(t) = &transport {
            return Ok(t.clone());
        }
        let t = OpenAiTransport::from_env(cfg.llm_timeout()).map_err(ConfigError::Invalid)?;
        Ok(Arc::new(t))
    };
    let cache_path = || {
        cfg.paths.cache.clone().ok_or_else(|| ConfigError::Invalid(format!("{:?} mode requires paths.cache", cfg.mode)))
    };
    let gateway = match cfg.mode {
        Mode::Replay => Gateway::replay(Arc::new(ReplayCache::open(&cache_path()?)?)),
        Mode::Record => {
            let cache = ReplayCache::open(&cache_path()?)?.with_delta(&run.cache_delta())?;
            Gateway::new(Mode::Record, Some(transport()?), Some(Arc::new(cache)))
        }
        Mode::Live => Gateway::new(Mode::Live, Some(transport()?), None),
    };
    Ok(gateway.with_concurrency(cfg.llm.concurrency))
}

pub fn build_provider(cfg: &RunConfig) -> Result<Box<dyn EmbeddingProvider>> {
    match cfg.embedding.provider {
        EmbeddingProviderKind::HashProjection => {
            Ok(Box::new(HashProjection::new(cfg.embedding.dim, cfg.embedding.seed)))
        }
        EmbeddingProviderKind::Http => {
            if cfg.mode == Mode::Replay {
                return Err(ConfigError::Invalid(
                    "replay mode runs offline; embedding.provider must be hash_projection".into(),
                )
                .into());
            }
            let e =
                HttpEmbedder::from_env(cfg.embedding.model.clone(), cfg.embedding.dim).map_err(ConfigError::Invalid)?;
            Ok(Box::new(e))
        }
    }
}

fn sha(parts: &[&str]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

/// Files inside `<run>/index`.
#[derive(Debug, Clone)]
pub struct IndexLayout {
    dir: PathBuf,
}

impl IndexLayout {
    pub fn new(run: &RunDir) -> Self {
        IndexLayout { dir: run.index_dir() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.dir.join("corpus")
    }

    pub fn descriptions(&self) -> PathBuf {
        self.dir.join("descriptions.jsonl")
    }

    pub fn api_index(&self, mode: SourceMode) -> PathBuf {
        self.dir.join(format!("api_index.{mode}.bin"))
    }

    pub fn windows(&self) -> PathBuf {
        self.dir.join("windows.jsonl")
    }

    pub fn window_index(&self) -> PathBuf {
        self.dir.join("window_index.bin")
    }

    fn markers(&self) -> PathBuf {
        self.dir.join("stages.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexOutcome {
    pub up_to_date: bool,
    /// Stages rebuilt by this invocation.
    pub rebuilt: Vec<String>,
    pub files: usize,
    pub units: usize,
    pub descriptions: usize,
    pub degraded_descriptions: usize,
    pub windows: usize,
    pub counters: GatewayCounters,
}

/// Scans the corpus, describes and embeds every API, and indexes code
/// windows. Stages whose inputs are unchanged are skipped.
pub fn cmd_index(cfg: &RunConfig) -> Result<IndexOutcome> {
    cmd_index_with(cfg, None)
}

/// [`cmd_index`] with an explicit chat transport.
pub fn cmd_index_with(cfg: &RunConfig, transport: Option<Arc<dyn ChatTransport>>) -> Result<IndexOutcome> {
    cfg.validate()?;
    let run = RunDir::new(&cfg.paths.run_dir);
    let _lock = run.lock()?;
    let mut manifest = run.begin(cfg)?;
    let layout = IndexLayout::new(&run);
    let provider = build_provider(cfg)?;

    let corpus = Corpus::load(&cfg.paths.corpus_root, &cfg.paths.include, &cfg.paths.exclude)?;
    let hash = corpus_hash(&corpus);
    manifest.corpus_hash = Some(hash.clone());
    let mut markers: BTreeMap<String, String> = read_json(&layout.markers()).unwrap_or_default();
    let mut rebuilt = Vec::new();
    let fresh = |markers: &BTreeMap<String, String>, stage: &str, fp: &str, files: &[PathBuf]| {
        markers.get(stage).map(String::as_str) == Some(fp) && files.iter().all(|f| f.exists())
    };

    let corpus_fp = sha(&[&hash, &cfg.paths.include.join(","), &cfg.paths.exclude.join(",")]);
    if !fresh(&markers, "corpus", &corpus_fp, &[layout.corpus_dir().join("apis.jsonl")]) {
        corpus.write_tables(&layout.corpus_dir())?;
        markers.insert("corpus".into(), corpus_fp.clone());
        write_json_atomic(&layout.markers(), &markers)?;
        rebuilt.push("corpus".to_string());
    }

    let mut counters = GatewayCounters::default();
    let desc_fp = sha(&[
        &corpus_fp,
        template_version(StageTag::ApiDescribe),
        &cfg.llm.model,
        &format!("{:.4}", cfg.llm.temperature),
        &provider.id(),
    ]);
    let text_index = layout.api_index(SourceMode::TextDescription);
    let descriptions: Vec<ApiDescription> =
        if fresh(&markers, "descriptions", &desc_fp, &[layout.descriptions(), text_index.clone()]) {
            jsonl::read_all(&layout.descriptions())?
        } else {
            let gateway = build_gateway(cfg, &run, transport)?;
            let settings = cfg.pipeline_settings()?;
            let out = describe_repository_apis(&corpus, &gateway, provider.as_ref(), &settings)?;
            counters = gateway.counters();
            jsonl::write_all(&layout.descriptions(), &out.descriptions)?;
            out.index.save(&text_index)?;
            markers.insert("descriptions".into(), desc_fp.clone());
            write_json_atomic(&layout.markers(), &markers)?;
            rebuilt.push("descriptions".to_string());
            out.descriptions
        };

    if cfg.generation.source_mode == SourceMode::RawCode {
        let raw_fp = sha(&[&corpus_fp, &provider.id()]);
        let path = layout.api_index(SourceMode::RawCode);
        if !fresh(&markers, "api_index.raw_code", &raw_fp, std::slice::from_ref(&path)) {
            let items = index_items(&corpus, &descriptions, SourceMode::RawCode);
            VectorIndex::build(&items, provider.as_ref(), SourceMode::RawCode)?.save(&path)?;
            markers.insert("api_index.raw_code".into(), raw_fp);
            write_json_atomic(&layout.markers(), &markers)?;
            rebuilt.push("api_index.raw_code".to_string());
        }
    }

    let win_fp =
        sha(&[&corpus_fp, &cfg.generation.window_size.to_string(), &cfg.generation.stride.to_string(), &provider.id()]);
    let windows: Vec<CodeWindow> = if fresh(&markers, "windows", &win_fp, &[layout.windows(), layout.window_index()]) {
        jsonl::read_all(&layout.windows())?
    } else {
        let windows = corpus.windows(cfg.generation.window_size, cfg.generation.stride)?;
        let items: Vec<(String, String)> = windows.iter().map(|w| (w.id(), w.text.clone())).collect();
        VectorIndex::build(&items, provider.as_ref(), SourceMode::RawCode)?.save(&layout.window_index())?;
        jsonl::write_all(&layout.windows(), &windows)?;
        markers.insert("windows".into(), win_fp);
        write_json_atomic(&layout.markers(), &markers)?;
        rebuilt.push("windows".to_string());
        windows
    };

    let outcome = IndexOutcome {
        up_to_date: rebuilt.is_empty(),
        rebuilt,
        files: corpus.files.len(),
        units: corpus.units.len(),
        descriptions: descriptions.len(),
        degraded_descriptions: descriptions.iter().filter(|d| d.degraded).count(),
        windows: windows.len(),
        counters,
    };
    manifest.stages.entry("index".into()).or_default().add(outcome.units as u64, counters);
    run.finish(&mut manifest)?;
    Ok(outcome)
}

/// Index artifacts loaded back for generation and evaluation.
pub struct LoadedIndex {
    pub corpus: Corpus,
    pub api_index: Option<VectorIndex>,
    pub window_index: Option<VectorIndex>,
    pub windows: Vec<CodeWindow>,
}

fn load_index(
    cfg: &RunConfig,
    run: &RunDir,
    provider: &dyn EmbeddingProvider,
    need_api: bool,
    need_windows: bool,
) -> Result<LoadedIndex> {
    let layout = IndexLayout::new(run);
    if !layout.corpus_dir().join("apis.jsonl").is_file() {
        return Err(CommandError::Usage(format!("no index in {}; run `repogen index` first", run.root().display())));
    }
    let corpus = Corpus::read_tables(&cfg.paths.corpus_root, &layout.corpus_dir())?;
    let rescanned = Corpus::load(&cfg.paths.corpus_root, &cfg.paths.include, &cfg.paths.exclude)?;
    if corpus_hash(&rescanned) != corpus_hash(&corpus) {
        return Err(CommandError::Fatal("the corpus changed since it was indexed; rerun `repogen index`".into()));
    }
    let check = |index: VectorIndex| -> Result<VectorIndex> {
        if index.provider_id() != provider.id() {
            return Err(CommandError::Fatal(format!(
                "index was built with embedding provider {} but the config uses {}; rerun `repogen index`",
                index.provider_id(),
                provider.id()
            )));
        }
        Ok(index)
    };
    let api_index = if need_api {
        let path = layout.api_index(cfg.generation.source_mode);
        if !path.is_file() {
            return Err(CommandError::Usage(format!(
                "no {} API index; run `repogen index` with this source mode",
                cfg.generation.source_mode
            )));
        }
        Some(check(VectorIndex::load(&path)?)?)
    } else {
        None
    };
    let (window_index, windows) = if need_windows {
        (Some(check(VectorIndex::load(&layout.window_index())?)?), jsonl::read_all(&layout.windows())?)
    } else {
        (None, Vec::new())
    };
    Ok(LoadedIndex { corpus, api_index, window_index, windows })
}

/// Picks the tasks named in `selector` (all when empty); an unknown id is
/// an error that lists the available ones.
pub fn select_tasks(tasks: Vec<GenerationTask>, selector: &[String]) -> Result<Vec<GenerationTask>> {
    if selector.is_empty() {
        return Ok(tasks);
    }
    let known: BTreeSet<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
    let unknown: Vec<&String> = selector.iter().filter(|s| !known.contains(s.as_str())).collect();
    if !unknown.is_empty() {
        return Err(CommandError::Usage(format!(
            "unknown task id(s) {}; available: {}",
            unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
            known.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let wanted: HashSet<&str> = selector.iter().map(String::as_str).collect();
    Ok(tasks.into_iter().filter(|t| wanted.contains(t.task_id.as_str())).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutcome {
    pub tasks: usize,
    pub written: usize,
    /// Records already present and left alone.
    pub existing: usize,
    pub counters: GatewayCounters,
}

/// Generates `k_samples` records per selected task and configured
/// condition, appending only the records not already present.
pub fn cmd_generate(cfg: &RunConfig, task_selector: &[String]) -> Result<GenerateOutcome> {
    cmd_generate_with(cfg, task_selector, None)
}

/// [`cmd_generate`] with an explicit chat transport.
pub fn cmd_generate_with(
    cfg: &RunConfig,
    task_selector: &[String],
    transport: Option<Arc<dyn ChatTransport>>,
) -> Result<GenerateOutcome> {
    cfg.validate()?;
    let run = RunDir::new(&cfg.paths.run_dir);
    let _lock = run.lock()?;
    let mut manifest = run.begin(cfg)?;
    let provider = build_provider(cfg)?;
    let conditions = &cfg.conditions;
    let need_api = conditions.contains(&ConditionName::AllianceCoder);
    let need_windows = conditions.iter().any(|c| crate::pipeline::Condition::new(*c).use_similar);
    let loaded = load_index(cfg, &run, provider.as_ref(), need_api, need_windows)?;
    let tasks = select_tasks(load_benchmark(&cfg.paths.benchmark_dir, &loaded.corpus)?, task_selector)?;
    let gateway = build_gateway(cfg, &run, transport)?;
    let settings = cfg.pipeline_settings()?;
    let ctx = PipelineContext {
        gateway: &gateway,
        settings: &settings,
        resources: Resources {
            corpus: &loaded.corpus,
            provider: provider.as_ref(),
            api_index: loaded.api_index.as_ref(),
            window_index: loaded.window_index.as_ref(),
            windows: &loaded.windows,
        },
    };
    let k = cfg.generation.k_samples;
    let per_task: Vec<Result<(usize, usize)>> = tasks
        .par_iter()
        .map(|task| {
            let path = run.record_file(&task.task_id);
            let present: HashSet<(String, ConditionName, u32)> =
                jsonl::read_or_empty::<GenerationRecord>(&path)?.iter().map(GenerationRecord::key).collect();
            let (mut written, mut existing) = (0, 0);
            for &name in conditions {
                let have = (1..=k).filter(|i| present.contains(&(task.task_id.clone(), name, *i))).count();
                existing += have;
                if have == k as usize {
                    continue;
                }
                let new: Vec<GenerationRecord> =
                    run_condition(&ctx, task, name)?.into_iter().filter(|r| !present.contains(&r.key())).collect();
                written += new.len();
                jsonl::append(&path, &new)?;
            }
            Ok((written, existing))
        })
        .collect();
    let mut outcome = GenerateOutcome { tasks: tasks.len(), written: 0, existing: 0, counters: gateway.counters() };
    for r in per_task {
        let (w, e) = r?;
        outcome.written += w;
        outcome.existing += e;
    }
    manifest.stages.entry("generate".into()).or_default().add(outcome.written as u64, outcome.counters);
    run.finish(&mut manifest)?;
    Ok(outcome)
}

/// Every analysis over one evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub k_samples: u32,
    pub pass_at_k: Vec<PassAtKRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersection: Option<IntersectionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<CountComparisonReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<RecallReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<LengthReport>,
    pub token_estimator: String,
    pub notes: Vec<String>,
}

impl StudyReport {
    pub fn tables(&self) -> Vec<Table> {
        let mut out = vec![
            pass_at_k_table(&self.pass_at_k, PassAtKMethod::Estimator),
            pass_at_k_table(&self.pass_at_k, PassAtKMethod::Empirical),
        ];
        if let Some(i) = &self.intersection {
            out.extend(intersection_tables(i));
        }
        if let Some(c) = &self.counts {
            out.push(count_table(c));
        }
        if let Some(r) = &self.recall {
            out.push(recall_table("AllianceCoder", r));
        }
        if let Some(l) = &self.lengths {
            out.push(length_table(l, &self.token_estimator));
        }
        out
    }

    pub fn render(&self) -> String {
        let mut text: Vec<String> = self.tables().iter().map(Table::render).collect();
        if !self.notes.is_empty() {
            text.push(self.notes.iter().map(|n| format!("note: {n}\n")).collect());
        }
        text.join("\n")
    }
}

fn first_sample(records: &[GenerationRecord], condition: ConditionName) -> BTreeMap<&str, &GenerationRecord> {
    let mut out: BTreeMap<&str, &GenerationRecord> = BTreeMap::new();
    for r in records.iter().filter(|r| r.condition == condition) {
        let slot = out.entry(r.task_id.as_str()).or_insert(r);
        if r.sample_index < slot.sample_index {
            *slot = r;
        }
    }
    out
}

/// Builds the Pass@k table and whichever analyses the run's conditions
/// support.
pub fn build_study_report(
    records: &[GenerationRecord],
    verdicts: &[VerdictRecord],
    tasks: &[GenerationTask],
    corpus: &Corpus,
    k_samples: u32,
) -> Result<StudyReport> {
    let outcomes: RunOutcomes = outcomes_from_verdicts(verdicts);
    let ks: Vec<u32> = [1, 3, 5].into_iter().filter(|k| *k <= k_samples).collect();
    let pass_at_k = pass_at_k_rows(&outcomes, &ks)?;
    let k = k_samples as usize;
    let mut notes = Vec::new();
    let task_map: BTreeMap<&str, &GenerationTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();

    let study: Vec<ConditionName> = [ConditionName::Context, ConditionName::Api, ConditionName::ConApi]
        .into_iter()
        .filter(|c| outcomes.contains_key(c))
        .collect();
    let intersection = if study.len() >= 2 {
        let containment = tasks.iter().map(|t| (t.task_id.clone(), t.containment(corpus))).collect();
        match intersection_report(&outcomes, &study, &containment, k) {
            Ok(r) => Some(r),
            Err(EvalError::TaskSetMismatch { left, right, difference }) => {
                notes.push(format!(
                    "intersection analysis skipped: {left} and {right} cover different tasks ({})",
                    difference.join(", ")
                ));
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };

    let (mut counts, mut recall) = (None, None);
    if let Some(ac) = outcomes.get(&ConditionName::AllianceCoder) {
        let firsts = first_sample(records, ConditionName::AllianceCoder);
        let ac_pass = pass_set(ac, k);
        let oracle_pass = outcomes.get(&ConditionName::ConApi).map(|m| pass_set(m, k));
        if oracle_pass.is_none() {
            notes.push("BRecall needs a ConAPI run in the same directory".into());
        }
        let mut count_entries = Vec::new();
        let mut recall_entries = Vec::new();
        for (task_id, record) in firsts {
            let Some(task) = task_map.get(task_id) else { continue };
            let retrieved: BTreeSet<_> =
                record.retrieved_apis.as_ref().map(|r| r.unique_apis().into_iter().collect()).unwrap_or_default();
            let oracle_ok = task.diagnostics.iter().all(|d| !d.contains("oracle API set is empty"));
            count_entries.push(CountEntry {
                task_id: task_id.to_string(),
                retrieved: retrieved.len(),
                oracle: oracle_ok.then_some(task.oracle_apis.len()),
            });
            recall_entries.push(RecallEntry {
                task_id: task_id.to_string(),
                oracle: task.oracle_apis.clone(),
                retrieved,
                context: task.context_apis.clone(),
                passed_by_run: ac_pass.contains(task_id),
                passed_by_oracle_run: oracle_pass.as_ref().is_some_and(|p| p.contains(task_id)),
            });
        }
        counts = Some(api_count_comparison(&count_entries));
        let mut r = recall_metrics(&recall_entries);
        if oracle_pass.is_none() {
            r.brecall = None;
        }
        recall = Some(r);
    }

    let lengths = match (outcomes.get(&ConditionName::Api), outcomes.get(&ConditionName::ConApi)) {
        (Some(api), Some(con_api)) => {
            if check_task_sets(&outcomes, &[ConditionName::Api, ConditionName::ConApi]).is_err() {
                notes.push("prompt-length analysis skipped: API and ConAPI cover different tasks".into());
                None
            } else {
                let lengths: BTreeMap<String, usize> = first_sample(records, ConditionName::ConApi)
                    .into_iter()
                    .map(|(t, r)| (t.to_string(), r.prompt.token_estimate))
                    .collect();
                Some(prompt_length_analysis(&lengths, &pass_set(api, k), &pass_set(con_api, k)))
            }
        }
        _ => None,
    };

    Ok(StudyReport {
        k_samples,
        pass_at_k,
        intersection,
        counts,
        recall,
        lengths,
        token_estimator: TOKEN_ESTIMATOR.to_string(),
        notes,
    })
}

pub fn read_records(run: &RunDir) -> Result<Vec<GenerationRecord>> {
    let mut all = Vec::new();
    for f in run.record_files()? {
        all.extend(jsonl::read_all::<GenerationRecord>(&f)?);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub records: usize,
    pub executed: usize,
    pub reused: usize,
    pub report: StudyReport,
}

/// Executes every record without a verdict, then writes
/// `reports/report.json` and `reports/tables.txt`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalOutcome> {
    let run = RunDir::new(&cfg.paths.run_dir);
    if !run.root().is_dir() {
        return Err(CommandError::Usage(format!("run directory {} does not exist", run.root().display())));
    }
    let _lock = run.lock()?;
    let records = read_records(&run)?;
    if records.is_empty() {
        return Err(CommandError::Usage(format!(
            "no generation records in {}; run `repogen generate` first",
            run.root().display()
        )));
    }
    check_interpreter(&cfg.sandbox)?;
    let mut manifest = run.begin(cfg)?;
    let corpus = Corpus::read_tables(&cfg.paths.corpus_root, &IndexLayout::new(&run).corpus_dir())?;
    let tasks = load_benchmark(&cfg.paths.benchmark_dir, &corpus)?;

    let mut verdicts: Vec<VerdictRecord> = jsonl::read_or_empty(&run.verdicts_path())?;
    let done: HashSet<_> = verdicts.iter().map(VerdictRecord::key).collect();
    let pending: Vec<GenerationRecord> = records.iter().filter(|r| !done.contains(&r.key())).cloned().collect();
    let started = Instant::now();
    let mut fresh = evaluate_records(&pending, &tasks, &cfg.paths.corpus_root, &cfg.sandbox)?;
    fresh.sort_by_key(|v| v.key());
    jsonl::append(&run.verdicts_path(), &fresh)?;
    tracing::info!(executed = fresh.len(), secs = started.elapsed().as_secs_f64(), "evaluation finished");
    let executed = fresh.len();
    verdicts.extend(fresh);
    let current: HashSet<_> = records.iter().map(GenerationRecord::key).collect();
    verdicts.retain(|v| current.contains(&v.key()));

    let report = build_study_report(&records, &verdicts, &tasks, &corpus, cfg.generation.k_samples)?;
    let reports = run.reports_dir();
    write_json_atomic(&reports.join("report.json"), &report)?;
    std::fs::write(reports.join("tables.txt"), report.render())?;
    manifest.stages.entry("eval".into()).or_default().add(executed as u64, GatewayCounters::default());
    run.finish(&mut manifest)?;
    Ok(EvalOutcome { records: records.len(), executed, reused: records.len() - executed, report })
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub table: Table,
    pub warnings: Vec<String>,
}

/// Side-by-side Pass@k (estimator) for every condition of every run, best
/// value per column marked. Runs covering different tasks are compared on
/// their common tasks only.
pub fn cmd_report(run_dirs: &[PathBuf]) -> Result<ReportOutcome> {
    if run_dirs.is_empty() {
        return Err(CommandError::Usage("report needs at least one run directory".into()));
    }
    let mut runs: Vec<(String, RunOutcomes, u32)> = Vec::new();
    for dir in run_dirs {
        let run = RunDir::new(dir);
        let verdicts: Vec<VerdictRecord> = jsonl::read_or_empty(&run.verdicts_path())?;
        if verdicts.is_empty() {
            return Err(CommandError::Usage(format!("{} has no verdicts; run `repogen eval` first", dir.display())));
        }
        let k = run.read_manifest()?.map(|m| m.config.generation.k_samples).unwrap_or(5);
        let name =
            dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
        runs.push((name, outcomes_from_verdicts(&verdicts), k));
    }

    let task_sets: Vec<BTreeSet<String>> =
        runs.iter().map(|(_, o, _)| o.values().flat_map(|m| m.keys().cloned()).collect::<BTreeSet<_>>()).collect();
    let mut common = task_sets[0].clone();
    for s in &task_sets[1..] {
        common = common.intersection(s).cloned().collect();
    }
    let mut warnings = Vec::new();
    if task_sets.iter().any(|s| *s != common) {
        let all: BTreeSet<String> = task_sets.iter().flatten().cloned().collect();
        let dropped: Vec<String> = all.difference(&common).cloned().collect();
        warnings.push(format!(
            "runs cover different tasks; comparing on the {} common task(s), leaving out {}",
            common.len(),
            dropped.join(", ")
        ));
    }

    let k_min = runs.iter().map(|(_, _, k)| *k).min().unwrap_or(5);
    let ks: Vec<u32> = [1, 3, 5].into_iter().filter(|k| *k <= k_min).collect();
    let mut headers = vec!["Approach".to_string()];
    headers.extend(ks.iter().map(|k| format!("Pass@{k}")));
    headers.push("Tasks".into());
    let mut table = Table { title: "Pass@k (estimator, %)".into(), headers, ..Default::default() };
    let multi = runs.len() > 1;
    for (name, outcomes, _) in &runs {
        let trimmed: RunOutcomes = outcomes
            .iter()
            .map(|(c, m)| {
                (*c, m.iter().filter(|(t, _)| common.contains(*t)).map(|(t, s)| (t.clone(), s.clone())).collect())
            })
            .collect();
        for row in pass_at_k_rows(&trimmed, &ks)? {
            let label = if multi { format!("{} ({name})", row.condition) } else { row.condition.to_string() };
            let mut cells = vec![label];
            cells.extend(row.estimator.iter().map(|(_, v)| format!("{v:.2}")));
            cells.push(row.tasks.to_string());
            table.row(cells);
        }
    }
    table.mark_best(&(1..=ks.len()).collect::<Vec<_>>());
    Ok(ReportOutcome { table, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub path: PathBuf,
    pub records: usize,
    pub by_stage: BTreeMap<String, usize>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub fn cmd_cache_inspect(path: &Path) -> Result<CacheSummary> {
    if !path.is_file() {
        return Err(CommandError::Usage(format!("no cache at {}", path.display())));
    }
    let cache = ReplayCache::open(path)?;
    let records = cache.records();
    let mut by_stage = BTreeMap::new();
    for r in &records {
        *by_stage.entry(r.stage_tag.to_string()).or_insert(0) += 1;
    }
    Ok(CacheSummary {
        path: path.to_path_buf(),
        records: records.len(),
        by_stage,
        prompt_tokens: records.iter().map(|r| r.prompt_token_count).sum(),
        completion_tokens: records.iter().map(|r| r.completion_token_count).sum(),
    })
}

/// Writes the cache's records (optionally one stage only), deduplicated and
/// in first-insertion order, to `out`. Returns the number written.
pub fn cmd_cache_export(path: &Path, stage: Option<StageTag>, out: &Path) -> Result<usize> {
    if !path.is_file() {
        return Err(CommandError::Usage(format!("no cache at {}", path.display())));
    }
    let records: Vec<CacheRecord> =
        ReplayCache::open(path)?.records().into_iter().filter(|r| stage.is_none_or(|s| r.stage_tag == s)).collect();
    jsonl::write_all(out, &records)?;
    Ok(records.len())
}
