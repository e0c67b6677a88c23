//! Datasets, metrics, batch runs and replay.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, GoldOracle};
use crate::db::{load_database, load_database_dir, Database};
use crate::kg::{load_kg, KnowledgeGraph};
use crate::orchestrator::{
    script_from_traces, Orchestrator, OrchestratorConfig, Outcome, ReasoningTrace,
};
use crate::prompt::TemplateRegistry;
use crate::sql::{execute_sql, results_equal, ResultSet, SqlError};
use crate::table::{format_number, load_table, load_table_csv, parse_numeric, Table};
use crate::Task;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("example `{id}`: artifact {path} does not exist")]
    MissingArtifact { id: String, path: PathBuf },
    #[error("artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("example `{id}`: gold SQL fails: {message}")]
    GoldSql { id: String, message: String },
    #[error("report: {0}")]
    Report(String),
    #[error("run manifest: {0}")]
    Manifest(String),
}

impl EvalError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        EvalError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sql: Option<String>,
    pub data_ref: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gold_intermediates: BTreeMap<String, Vec<String>>,
    /// Statement verification (entailed/refuted) instead of free-form answers.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub verification: bool,
}

impl QaExample {
    pub fn validate(&self) -> Result<(), String> {
        match (self.task, &self.gold_answers, &self.gold_sql) {
            (Task::Text2sql, None, Some(_)) => Ok(()),
            (Task::Text2sql, _, _) => {
                Err("text2sql examples need gold_sql and no gold_answers".into())
            }
            (_, Some(_), None) => Ok(()),
            _ => Err(format!(
                "{} examples need gold_answers and no gold_sql",
                self.task
            )),
        }
    }

    pub fn gold_oracle(&self) -> GoldOracle {
        GoldOracle::new(
            self.gold_intermediates.clone(),
            self.gold_answers.clone().unwrap_or_default(),
            self.gold_sql.clone(),
        )
    }
}

/// Reads one example per non-blank line.
pub fn load_dataset(path: &Path) -> Result<Vec<QaExample>, EvalError> {
    let file = File::open(path).map_err(|e| EvalError::io(path, e))?;
    parse_dataset(BufReader::new(file))
}

pub fn parse_dataset<R: BufRead>(source: R) -> Result<Vec<QaExample>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Dataset {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: QaExample = serde_json::from_str(&line).map_err(|e| EvalError::Dataset {
            line: i + 1,
            message: e.to_string(),
        })?;
        ex.validate().map_err(|message| EvalError::Dataset {
            line: i + 1,
            message,
        })?;
        out.push(ex);
    }
    Ok(out)
}

fn normalize_once(s: &str) -> String {
    let lowered = s.to_lowercase();
    let stripped = lowered
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`'))
        .trim_end_matches(['.', ',', ';', ':', '!', '?'])
        .trim();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(|w| parse_numeric(w).map_or_else(|| w.to_string(), format_number))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Case-folds, trims quotes and trailing punctuation, collapses whitespace,
/// drops the articles a/an/the and canonicalizes numbers. Idempotent.
pub fn normalize_answer(s: &str) -> String {
    let mut current = normalize_once(s);
    loop {
        let next = normalize_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// 1 when the first prediction matches any gold answer after normalization.
pub fn hits_at_1<S: AsRef<str>, G: AsRef<str>>(predicted: &[S], gold: &[G]) -> f64 {
    let Some(first) = predicted.first() else {
        return 0.0;
    };
    let first = normalize_answer(first.as_ref());
    if gold.iter().any(|g| normalize_answer(g.as_ref()) == first) {
        1.0
    } else {
        0.0
    }
}

/// 1 when the normalized predicted and gold answer sets are equal.
pub fn denotation_accuracy<S: AsRef<str>, G: AsRef<str>>(predicted: &[S], gold: &[G]) -> f64 {
    let p: std::collections::BTreeSet<String> = predicted
        .iter()
        .map(|s| normalize_answer(s.as_ref()))
        .collect();
    let g: std::collections::BTreeSet<String> =
        gold.iter().map(|s| normalize_answer(s.as_ref())).collect();
    if p == g {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Execution {
    Scored {
        score: f64,
        category: Option<&'static str>,
    },
    /// The gold query uses SQL outside the supported subset.
    GoldUnsupported,
}

fn predicted_category(e: &SqlError) -> &'static str {
    if e.is_unsupported() {
        "unsupported-sql"
    } else {
        "predicted-sql-error"
    }
}

fn score_against(db: &Database, predicted_sql: &str, gold: &ResultSet) -> Execution {
    match execute_sql(db, predicted_sql) {
        Ok(p) if results_equal(&p, gold) => Execution::Scored {
            score: 1.0,
            category: None,
        },
        Ok(_) => Execution::Scored {
            score: 0.0,
            category: Some("incorrect"),
        },
        Err(e) => Execution::Scored {
            score: 0.0,
            category: Some(predicted_category(&e)),
        },
    }
}

/// Compares execution results of the predicted and gold queries.
///
/// Gold SQL that fails for any reason other than an unsupported construct is
/// a data error and returned as `Err`.
pub fn execution_accuracy(
    db: &Database,
    predicted_sql: &str,
    gold_sql: &str,
) -> Result<Execution, SqlError> {
    match execute_sql(db, gold_sql) {
        Ok(gold) => Ok(score_against(db, predicted_sql, &gold)),
        Err(e) if e.is_unsupported() => Ok(Execution::GoldUnsupported),
        Err(e) => Err(e),
    }
}

/// Loaded data behind an example's `data_ref`.
#[derive(Debug)]
pub enum Artifact {
    Kg(KnowledgeGraph),
    Table(Table),
    Db(Database),
}

pub fn load_artifact(task: Task, path: &Path) -> Result<Artifact, EvalError> {
    let bad = |message: String| EvalError::Artifact {
        path: path.to_path_buf(),
        message,
    };
    let open = || File::open(path).map_err(|e| EvalError::io(path, e));
    match task {
        Task::Kgqa => load_kg(BufReader::new(open()?))
            .map(Artifact::Kg)
            .map_err(|e| bad(e.to_string())),
        Task::Tableqa => {
            let is_csv = path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            let table = if is_csv {
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
                load_table_csv(open()?, name)
            } else {
                load_table(BufReader::new(open()?))
            };
            table.map(Artifact::Table).map_err(|e| bad(e.to_string()))
        }
        Task::Text2sql => {
            let db = if path.is_dir() {
                load_database_dir(path)
            } else {
                load_database(BufReader::new(open()?))
            };
            db.map(Artifact::Db).map_err(|e| bad(e.to_string()))
        }
    }
}

/// Per-example result. `score` is `None` when the example is excluded
/// from the metric (unsupported gold SQL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub index: usize,
    pub id: String,
    pub score: Option<f64>,
    pub category: Option<String>,
    pub multi_answer: bool,
    pub llm_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub task: Task,
    pub metric: String,
    pub examples: Vec<ExampleScore>,
    pub scored: usize,
    pub excluded: usize,
    pub aggregate: f64,
    pub categories: BTreeMap<String, usize>,
    pub multi_answer_flagged: usize,
    pub total_llm_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Kgqa => "hits@1",
        Task::Tableqa => "denotation-accuracy",
        Task::Text2sql => "execution-accuracy",
    }
}

impl EvalReport {
    fn assemble(
        dataset_id: &str,
        task: Task,
        examples: Vec<ExampleScore>,
        wall_time_ms: Option<u64>,
    ) -> Self {
        let scores: Vec<f64> = examples.iter().filter_map(|e| e.score).collect();
        let mut categories = BTreeMap::new();
        for e in &examples {
            if let Some(c) = &e.category {
                *categories.entry(c.clone()).or_insert(0) += 1;
            }
        }
        Self {
            dataset_id: dataset_id.to_string(),
            task,
            metric: metric_name(task).to_string(),
            scored: scores.len(),
            excluded: examples.len() - scores.len(),
            aggregate: mean(&scores),
            categories,
            multi_answer_flagged: examples.iter().filter(|e| e.multi_answer).count(),
            total_llm_calls: examples.iter().map(|e| e.llm_calls).sum(),
            examples,
            wall_time_ms,
        }
    }

    /// Recomputes every derived field from the per-example scores.
    pub fn verify(&self) -> Result<(), EvalError> {
        let again = Self::assemble(
            &self.dataset_id,
            self.task,
            self.examples.clone(),
            self.wall_time_ms,
        );
        if (again.aggregate - self.aggregate).abs() > 1e-9 {
            return Err(EvalError::Report(format!(
                "aggregate {} does not match the mean of per-example scores ({})",
                self.aggregate, again.aggregate
            )));
        }
        if again.scored != self.scored
            || again.excluded != self.excluded
            || again.categories != self.categories
            || again.multi_answer_flagged != self.multi_answer_flagged
            || again.total_llm_calls != self.total_llm_calls
            || again.metric != self.metric
        {
            return Err(EvalError::Report(
                "counts do not match the per-example records".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Parses and verifies a persisted report.
    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let report: Self =
            serde_json::from_str(text).map_err(|e| EvalError::Report(e.to_string()))?;
        report.verify()?;
        Ok(report)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Which backend answers each example.
#[derive(Clone, Copy)]
pub enum BackendChoice<'a> {
    Shared(&'a dyn Backend),
    /// A [`GoldOracle`] built from each example's annotations.
    Oracle,
}

pub struct EvalRun {
    pub report: EvalReport,
    pub traces: Vec<ReasoningTrace>,
}

struct Prepared<'d> {
    example: &'d QaExample,
    artifact: Arc<Artifact>,
    gold: Option<ResultSet>,
}

fn prepare<'d>(
    examples: &'d [QaExample],
    artifacts_dir: &Path,
) -> Result<Vec<Prepared<'d>>, EvalError> {
    let mut cache: HashMap<(Task, PathBuf), Arc<Artifact>> = HashMap::new();
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let path = artifacts_dir.join(&ex.data_ref);
        if !path.exists() {
            return Err(EvalError::MissingArtifact {
                id: ex.id.clone(),
                path,
            });
        }
        let artifact = match cache.get(&(ex.task, path.clone())) {
            Some(a) => Arc::clone(a),
            None => {
                let a = Arc::new(load_artifact(ex.task, &path)?);
                cache.insert((ex.task, path), Arc::clone(&a));
                a
            }
        };
        let gold = match (&*artifact, &ex.gold_sql) {
            (Artifact::Db(db), Some(sql)) => match execute_sql(db, sql) {
                Ok(rs) => Some(rs),
                Err(e) if e.is_unsupported() => None,
                Err(e) => {
                    return Err(EvalError::GoldSql {
                        id: ex.id.clone(),
                        message: e.to_string(),
                    })
                }
            },
            _ => None,
        };
        out.push(Prepared {
            example: ex,
            artifact,
            gold,
        });
    }
    Ok(out)
}

fn run_one(orch: &Orchestrator<'_>, p: &Prepared<'_>) -> ReasoningTrace {
    let ex = p.example;
    match &*p.artifact {
        Artifact::Kg(kg) => orch.answer_kgqa(
            &ex.id,
            kg,
            &ex.question,
            ex.topic_entity.as_deref().unwrap_or(""),
        ),
        Artifact::Table(t) => orch.answer_tableqa(&ex.id, t, &ex.question, ex.verification),
        Artifact::Db(db) => orch.generate_sql(&ex.id, db, &ex.question),
    }
}

fn score_one(index: usize, p: &Prepared<'_>, trace: &ReasoningTrace) -> ExampleScore {
    let ex = p.example;
    let mut record = ExampleScore {
        index,
        id: ex.id.clone(),
        score: Some(0.0),
        category: None,
        multi_answer: false,
        llm_calls: trace.llm_calls(),
    };
    if let (Artifact::Db(_), None) = (&*p.artifact, &p.gold) {
        record.score = None;
        record.category = Some("unsupported-gold".into());
        return record;
    }
    let gold_answers = ex.gold_answers.as_deref().unwrap_or_default();
    let (score, category) = match (&trace.outcome, &*p.artifact) {
        (Outcome::Failure { category, .. }, _) => (0.0, Some(category.as_str())),
        (Outcome::Answers { answers }, Artifact::Kg(_)) => {
            record.multi_answer = answers.len() > 1;
            let s = hits_at_1(answers, gold_answers);
            (s, (s == 0.0).then_some("incorrect"))
        }
        (Outcome::Answers { answers }, _) => {
            let s = denotation_accuracy(answers, gold_answers);
            (s, (s == 0.0).then_some("incorrect"))
        }
        (Outcome::Sql { sql }, Artifact::Db(db)) => {
            match score_against(db, sql, p.gold.as_ref().expect("checked above")) {
                Execution::Scored { score, category } => (score, category),
                Execution::GoldUnsupported => unreachable!("gold results are precomputed"),
            }
        }
        (Outcome::Sql { .. }, _) => (0.0, Some("incorrect")),
    };
    record.score = Some(score);
    record.category = category.map(str::to_string);
    record
}

/// Runs every example, scoring as it goes. All artifacts are loaded and all
/// gold SQL executed before the first backend call.
pub fn run_eval(
    dataset_id: &str,
    examples: &[QaExample],
    artifacts_dir: &Path,
    backend: BackendChoice<'_>,
    templates: &TemplateRegistry,
    config: &OrchestratorConfig,
    workers: usize,
) -> Result<EvalRun, EvalError> {
    let started = Instant::now();
    let prepared = prepare(examples, artifacts_dir)?;
    let slots: Mutex<Vec<Option<(ReasoningTrace, ExampleScore)>>> =
        Mutex::new(vec![None; prepared.len()]);
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(p) = prepared.get(i) else {
            break;
        };
        let oracle;
        let b: &dyn Backend = match backend {
            BackendChoice::Shared(b) => b,
            BackendChoice::Oracle => {
                oracle = p.example.gold_oracle();
                &oracle
            }
        };
        let orch = Orchestrator::new(b, templates, config.clone());
        let trace = run_one(&orch, p);
        let score = score_one(i, p, &trace);
        log::debug!("{} {}: {:?}", dataset_id, p.example.id, score.score);
        slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some((trace, score));
    };
    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            s.spawn(work);
        }
    });
    let (traces, scores): (Vec<_>, Vec<_>) = slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|slot| slot.expect("every example is processed"))
        .unzip();
    let task = examples.first().map_or(Task::Kgqa, |e| e.task);
    let wall = config
        .record_timings
        .then(|| started.elapsed().as_millis() as u64);
    Ok(EvalRun {
        report: EvalReport::assemble(dataset_id, task, scores, wall),
        traces,
    })
}

pub fn trace_file_name(dataset_id: &str, index: usize) -> String {
    format!("{dataset_id}-{index:04}.json")
}

pub const MANIFEST_FILE: &str = "run.json";
pub const REPORT_FILE: &str = "report.json";

/// Everything needed to repeat a run from its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset_id: String,
    pub data: PathBuf,
    pub artifacts: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub config: OrchestratorConfig,
    pub backend: String,
}

fn write(path: &Path, text: &str) -> Result<(), EvalError> {
    std::fs::write(path, text).map_err(|e| EvalError::io(path, e))
}

fn read(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))
}

/// Writes one trace file per example, `report.json` and `run.json`.
pub fn persist_run(out_dir: &Path, run: &EvalRun, manifest: &RunManifest) -> Result<(), EvalError> {
    std::fs::create_dir_all(out_dir).map_err(|e| EvalError::io(out_dir, e))?;
    for (i, t) in run.traces.iter().enumerate() {
        write(
            &out_dir.join(trace_file_name(&manifest.dataset_id, i)),
            &t.to_json(),
        )?;
    }
    write(&out_dir.join(REPORT_FILE), &run.report.to_json())?;
    let m = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write(&out_dir.join(MANIFEST_FILE), &m)
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest, EvalError> {
    let text = read(&dir.join(MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(|e| EvalError::Manifest(e.to_string()))
}

/// Reads the traces of a run directory in example order.
pub fn load_traces(
    dir: &Path,
    dataset_id: &str,
    count: usize,
) -> Result<Vec<(String, ReasoningTrace)>, EvalError> {
    (0..count)
        .map(|i| {
            let path = dir.join(trace_file_name(dataset_id, i));
            let text = read(&path)?;
            let trace = ReasoningTrace::from_json(&text).map_err(|e| EvalError::io(&path, e))?;
            Ok((text, trace))
        })
        .collect()
}

#[derive(Debug)]
pub struct ReplayResult {
    pub report: EvalReport,
    /// Files whose replayed content differs from what was stored.
    pub mismatches: Vec<String>,
}

/// Re-runs a stored run with a scripted backend built from its own traces
/// and compares traces and report byte for byte.
pub fn replay(dir: &Path, workers: usize) -> Result<ReplayResult, EvalError> {
    let manifest = load_manifest(dir)?;
    let examples = load_dataset(&manifest.data)?;
    let templates = match &manifest.templates {
        Some(p) => {
            TemplateRegistry::from_file(p).map_err(|e| EvalError::Manifest(e.to_string()))?
        }
        None => TemplateRegistry::builtin(),
    };
    let stored = load_traces(dir, &manifest.dataset_id, examples.len())?;
    let stored_report = read(&dir.join(REPORT_FILE))?;
    EvalReport::from_json(&stored_report)?;
    for (i, (_, t)) in stored.iter().enumerate() {
        t.validate(&templates).map_err(|e| {
            EvalError::Report(format!("{}: {e}", trace_file_name(&manifest.dataset_id, i)))
        })?;
    }
    let script = script_from_traces(stored.iter().map(|(_, t)| t));
    let run = run_eval(
        &manifest.dataset_id,
        &examples,
        &manifest.artifacts,
        BackendChoice::Shared(&script),
        &templates,
        &manifest.config,
        workers,
    )?;
    let mut mismatches = Vec::new();
    for (i, ((text, _), t)) in stored.iter().zip(&run.traces).enumerate() {
        if *text != t.to_json() {
            mismatches.push(trace_file_name(&manifest.dataset_id, i));
        }
    }
    if manifest.config.record_timings {
        log::info!("timings are recorded; report comparison skipped");
    } else if stored_report != run.report.to_json() {
        mismatches.push(REPORT_FILE.to_string());
    }
    Ok(ReplayResult {
        report: run.report,
        mismatches,
    })
}
