//! The three reading-then-reasoning loops and their traces.
//!
//! Each loop alternates interface calls with backend calls. Every backend
//! call becomes one [`TraceStep`] holding the interface input, the evidence
//! text, the rendered prompt, the raw response and the parsed decision, so a
//! trace can be re-validated against the templates and replayed through a
//! [`Scripted`] backend.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backend::{
    parse_answer, parse_selection, parse_sql, parse_sufficiency, Backend, BackendError,
    GenerationRequest, Scripted, Sufficiency,
};
use crate::db::{Database, SchemaSummary};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::linearize::{
    linearize_list, linearize_list_within, linearize_rows_within, linearize_schema_within,
    linearize_triple, linearize_triples_within, Linearized,
};
use crate::prompt::{stage, PromptError, PromptKind, TemplateRegistry};
use crate::table::Table;
use crate::Task;

/// How KGQA turns the gathered triples into answers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerMode {
    /// One generation call over the selected triples.
    #[default]
    Generate,
    /// The tail entities of the last selected triples, without a generation call.
    TailEntities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub max_hops: usize,
    pub max_candidates_per_prompt: usize,
    /// Character budget for the evidence of one prompt; `None` is unlimited.
    pub max_evidence_chars: Option<usize>,
    pub frontier_width: usize,
    pub answer_mode: AnswerMode,
    pub max_output_chars: usize,
    pub temperature: f64,
    pub record_timings: bool,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            max_hops: 3,
            max_candidates_per_prompt: 50,
            max_evidence_chars: Some(12_000),
            frontier_width: 10,
            answer_mode: AnswerMode::Generate,
            max_output_chars: 2048,
            temperature: 0.0,
            record_timings: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    TopicNotFound,
    NoAnswer,
    ExtractionError,
    TransportFailure,
    ScriptMiss,
    Template,
    Interface,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::TopicNotFound => "topic-not-found",
            FailureKind::NoAnswer => "no-answer",
            FailureKind::ExtractionError => "extraction-error",
            FailureKind::TransportFailure => "transport-failure",
            FailureKind::ScriptMiss => "script-miss",
            FailureKind::Template => "template",
            FailureKind::Interface => "interface",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Outcome {
    Answers {
        answers: Vec<String>,
    },
    Sql {
        sql: String,
    },
    Failure {
        category: FailureKind,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step_index: usize,
    pub stage_tag: String,
    pub stage: String,
    pub interface_invoked: String,
    pub interface_input: String,
    pub linearized_evidence: String,
    pub slot_kind: String,
    pub candidates: Vec<String>,
    pub prompt: String,
    pub raw_response: String,
    pub parsed_decision: String,
    pub truncated: bool,
    #[serde(default)]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub example_id: String,
    pub task: Task,
    pub question: String,
    pub steps: Vec<TraceStep>,
    pub outcome: Outcome,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("step {step}: expected step_index {step}, found {found}")]
    StepIndex { step: usize, found: usize },
    #[error("step {step}: {source}")]
    Template { step: usize, source: PromptError },
    #[error("step {step}: prompt does not match the template rendering of the recorded evidence")]
    PromptMismatch { step: usize },
    #[error("step {step}: evidence does not match the recorded candidates")]
    EvidenceMismatch { step: usize },
    #[error("step {step}: recorded decision `{recorded}` differs from re-parsed `{reparsed}`")]
    DecisionMismatch {
        step: usize,
        recorded: String,
        reparsed: String,
    },
    #[error("successful outcome with no steps")]
    EmptySuccess,
}

impl ReasoningTrace {
    pub fn llm_calls(&self) -> usize {
        self.steps.len()
    }

    pub fn answers(&self) -> Option<&[String]> {
        match &self.outcome {
            Outcome::Answers { answers } => Some(answers),
            _ => None,
        }
    }

    pub fn sql(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Sql { sql } => Some(sql),
            _ => None,
        }
    }

    pub fn failure(&self) -> Option<FailureKind> {
        match &self.outcome {
            Outcome::Failure { category, .. } => Some(*category),
            _ => None,
        }
    }

    /// Largest hop number seen in the stage tags (0 when none carry a hop).
    pub fn hops(&self) -> usize {
        self.steps
            .iter()
            .filter_map(|s| {
                s.stage_tag
                    .split('/')
                    .next()?
                    .split_once('@')?
                    .1
                    .parse()
                    .ok()
            })
            .max()
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Checks that every prompt re-renders from its recorded evidence, that
    /// name and triple evidence re-linearizes from the recorded candidates,
    /// and that every decision re-parses from the raw response.
    pub fn validate(&self, templates: &TemplateRegistry) -> Result<(), TraceError> {
        if self.steps.is_empty() && !matches!(self.outcome, Outcome::Failure { .. }) {
            return Err(TraceError::EmptySuccess);
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.step_index != i {
                return Err(TraceError::StepIndex {
                    step: i,
                    found: s.step_index,
                });
            }
            let template = templates
                .get(self.task, &s.stage)
                .map_err(|source| TraceError::Template { step: i, source })?;
            let rendered = template
                .render(&s.linearized_evidence, &s.slot_kind, &self.question)
                .map_err(|source| TraceError::Template { step: i, source })?;
            if rendered != s.prompt {
                return Err(TraceError::PromptMismatch { step: i });
            }
            if !s.truncated {
                let expected = match s.stage.as_str() {
                    stage::RELATION_SELECT | stage::COLUMN_SELECT => {
                        Some(linearize_list(&s.candidates))
                    }
                    stage::TRIPLE_SELECT => Some(s.candidates.join("; ")),
                    _ => None,
                };
                if expected.is_some_and(|e| e != s.linearized_evidence) {
                    return Err(TraceError::EvidenceMismatch { step: i });
                }
            }
            let reparsed = match (template.kind, s.stage.as_str()) {
                (PromptKind::Selection, _) => {
                    encode(&parse_selection(&s.raw_response, &s.candidates))
                }
                (_, stage::SUFFICIENCY) => {
                    sufficiency_name(parse_sufficiency(&s.raw_response)).to_string()
                }
                (_, stage::SQL_GENERATE) => sql_decision(&s.raw_response),
                _ => encode(&parse_answer(&s.raw_response)),
            };
            if reparsed != s.parsed_decision {
                return Err(TraceError::DecisionMismatch {
                    step: i,
                    recorded: s.parsed_decision.clone(),
                    reparsed,
                });
            }
        }
        Ok(())
    }
}

/// A script that answers every recorded prompt with its recorded response.
pub fn script_from_traces<'a>(traces: impl IntoIterator<Item = &'a ReasoningTrace>) -> Scripted {
    let mut script = Scripted::new();
    for t in traces {
        for s in &t.steps {
            script.insert(&s.stage_tag, &s.prompt, s.raw_response.clone());
        }
    }
    script
}

fn encode(items: &[String]) -> String {
    serde_json::to_string(items).expect("string list serializes")
}

fn sufficiency_name(s: Sufficiency) -> &'static str {
    match s {
        Sufficiency::Sufficient => "sufficient",
        Sufficiency::Insufficient => "insufficient",
    }
}

fn sql_decision(raw: &str) -> String {
    parse_sql(raw).unwrap_or_else(|_| "<extraction-error>".to_string())
}

const NULL_ANSWERS: [&str; 10] = [
    "none",
    "unknown",
    "n/a",
    "na",
    "null",
    "nothing",
    "no answer",
    "not found",
    "i don't know",
    "cannot be determined",
];

fn is_null_answer(a: &str) -> bool {
    let folded = a.trim().to_lowercase();
    NULL_ANSWERS.contains(&folded.as_str())
}

#[derive(Debug)]
struct Failure {
    category: FailureKind,
    detail: String,
}

impl Failure {
    fn new(category: FailureKind, detail: impl Into<String>) -> Self {
        Self {
            category,
            detail: detail.into(),
        }
    }
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        let category = match e {
            BackendError::ScriptMiss { .. } => FailureKind::ScriptMiss,
            _ => FailureKind::TransportFailure,
        };
        Failure::new(category, e.to_string())
    }
}

impl From<PromptError> for Failure {
    fn from(e: PromptError) -> Self {
        Failure::new(FailureKind::Template, e.to_string())
    }
}

struct Call<'c> {
    stage: &'static str,
    tag: String,
    interface: &'static str,
    interface_input: String,
    evidence: Linearized,
    slot: &'c str,
    candidates: Vec<String>,
}

/// Drives one question through a backend.
pub struct Orchestrator<'a> {
    pub backend: &'a dyn Backend,
    pub templates: &'a TemplateRegistry,
    pub config: OrchestratorConfig,
}

struct Run<'o, 'a> {
    orch: &'o Orchestrator<'a>,
    task: Task,
    question: &'o str,
    steps: Vec<TraceStep>,
}

type Render<'r> = dyn Fn(&[usize], Option<usize>) -> Linearized + 'r;

/// Candidates of one selection stage and how to present them.
struct Pool<'p> {
    stage: &'static str,
    interface: &'static str,
    input: &'p str,
    labels: &'p [String],
    slot: &'p str,
    render: &'p Render<'p>,
}

impl Run<'_, '_> {
    fn invoke(&mut self, call: Call<'_>) -> Result<String, Failure> {
        let template = self.orch.templates.get(self.task, call.stage)?;
        let prompt = template.render(&call.evidence.text, call.slot, self.question)?;
        let request = GenerationRequest {
            prompt: prompt.clone(),
            max_output_chars: self.orch.config.max_output_chars,
            temperature: self.orch.config.temperature,
            stage_tag: call.tag.clone(),
        };
        let started = self.orch.config.record_timings.then(Instant::now);
        let raw = self.orch.backend.complete(&request)?;
        let wall_time_ms = started.map(|s| s.elapsed().as_millis() as u64);
        self.steps.push(TraceStep {
            step_index: self.steps.len(),
            stage_tag: call.tag,
            stage: call.stage.to_string(),
            interface_invoked: call.interface.to_string(),
            interface_input: call.interface_input,
            linearized_evidence: call.evidence.text,
            slot_kind: call.slot.to_string(),
            candidates: call.candidates,
            prompt,
            raw_response: raw.clone(),
            parsed_decision: String::new(),
            truncated: call.evidence.truncated,
            fallback: false,
            wall_time_ms,
        });
        Ok(raw)
    }

    fn decide(&mut self, decision: String) {
        if let Some(last) = self.steps.last_mut() {
            last.parsed_decision = decision;
        }
    }

    fn mark_fallback(&mut self) {
        if let Some(last) = self.steps.last_mut() {
            last.fallback = true;
        }
    }

    /// Splits candidate indices into prompts that respect the count limit
    /// and, where possible, the evidence budget.
    fn chunks(&self, n: usize, render: &Render<'_>) -> Vec<Vec<usize>> {
        let cfg = &self.orch.config;
        let max = cfg.max_candidates_per_prompt.max(1);
        let mut out = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        for i in 0..n {
            let full = current.len() >= max;
            let over = !current.is_empty()
                && cfg.max_evidence_chars.is_some_and(|b| {
                    let mut probe = current.clone();
                    probe.push(i);
                    render(&probe, None).text.chars().count() > b
                });
            if full || over {
                out.push(std::mem::take(&mut current));
            }
            current.push(i);
        }
        if !current.is_empty() || out.is_empty() {
            out.push(current);
        }
        out
    }

    fn select_once(
        &mut self,
        pool: &Pool<'_>,
        tag: String,
        subset: &[usize],
    ) -> Result<Vec<usize>, Failure> {
        let candidates: Vec<String> = subset.iter().map(|&i| pool.labels[i].clone()).collect();
        let evidence = (pool.render)(subset, self.orch.config.max_evidence_chars);
        let raw = self.invoke(Call {
            stage: pool.stage,
            tag,
            interface: pool.interface,
            interface_input: pool.input.to_string(),
            evidence,
            slot: pool.slot,
            candidates: candidates.clone(),
        })?;
        let chosen = parse_selection(&raw, &candidates);
        self.decide(encode(&chosen));
        Ok(subset
            .iter()
            .copied()
            .filter(|&i| chosen.iter().any(|c| c == &pool.labels[i]))
            .collect())
    }

    /// One selection stage; oversized candidate sets are split into chunk
    /// prompts followed by a merge prompt over the chunk winners.
    fn select(&mut self, pool: &Pool<'_>, tag: &str) -> Result<Vec<usize>, Failure> {
        let chunks = self.chunks(pool.labels.len(), pool.render);
        if chunks.len() == 1 {
            return self.select_once(pool, tag.to_string(), &chunks[0]);
        }
        let mut winners = Vec::new();
        for (k, chunk) in chunks.iter().enumerate() {
            winners.extend(self.select_once(pool, format!("{tag}/chunk{k}"), chunk)?);
        }
        if winners.is_empty() {
            return Ok(winners);
        }
        self.select_once(pool, format!("{tag}/merge"), &winners)
    }

    fn finish(self, result: Result<Outcome, Failure>, id: &str) -> ReasoningTrace {
        let outcome = result.unwrap_or_else(|f| Outcome::Failure {
            category: f.category,
            detail: f.detail,
        });
        ReasoningTrace {
            example_id: id.to_string(),
            task: self.task,
            question: self.question.to_string(),
            steps: self.steps,
            outcome,
        }
    }
}

fn answers_outcome(answers: Vec<String>) -> Result<Outcome, Failure> {
    let kept: Vec<String> = answers.into_iter().filter(|a| !is_null_answer(a)).collect();
    if kept.is_empty() {
        return Err(Failure::new(
            FailureKind::NoAnswer,
            "response contained no answer",
        ));
    }
    Ok(Outcome::Answers { answers: kept })
}

fn names_json<S: AsRef<str>>(items: &[S]) -> serde_json::Value {
    items.iter().map(|s| s.as_ref().to_string()).collect()
}

impl<'a> Orchestrator<'a> {
    pub fn new(
        backend: &'a dyn Backend,
        templates: &'a TemplateRegistry,
        config: OrchestratorConfig,
    ) -> Self {
        Self {
            backend,
            templates,
            config,
        }
    }

    fn run<'o>(&'o self, task: Task, question: &'o str) -> Run<'o, 'a> {
        Run {
            orch: self,
            task,
            question,
            steps: Vec::new(),
        }
    }

    /// Multi-hop KGQA starting from a linked topic entity.
    pub fn answer_kgqa(
        &self,
        id: &str,
        kg: &KnowledgeGraph,
        question: &str,
        topic: &str,
    ) -> ReasoningTrace {
        let mut run = self.run(Task::Kgqa, question);
        let result = self.kgqa_loop(&mut run, kg, topic);
        run.finish(result, id)
    }

    fn kgqa_loop(
        &self,
        run: &mut Run<'_, '_>,
        kg: &KnowledgeGraph,
        topic: &str,
    ) -> Result<Outcome, Failure> {
        let topic = EntityId::new(topic)
            .ok()
            .filter(|e| kg.contains_entity(e))
            .ok_or_else(|| {
                Failure::new(
                    FailureKind::TopicNotFound,
                    format!("topic entity `{topic}` is not in the graph"),
                )
            })?;
        let max_hops = self.config.max_hops.max(1);
        let mut frontier = vec![topic];
        let mut gathered: Vec<Triple> = Vec::new();
        let mut last_selected: Vec<Triple> = Vec::new();
        let mut fallback_used = false;

        for hop in 1..=max_hops {
            let rels: Vec<RelationId> = frontier
                .iter()
                .flat_map(|e| kg.extract_neighbor_relations(e))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if rels.is_empty() {
                break;
            }
            let labels: Vec<String> = rels.iter().map(|r| r.to_string()).collect();
            let input = json!({ "entities": names_json(&frontier) }).to_string();
            let render = |idx: &[usize], budget: Option<usize>| {
                let subset: Vec<&String> = idx.iter().map(|&i| &labels[i]).collect();
                linearize_list_within(&subset, budget)
            };
            let mut picked = run.select(
                &Pool {
                    stage: stage::RELATION_SELECT,
                    interface: "extract_neighbor_relations",
                    input: &input,
                    labels: &labels,
                    slot: "relations",
                    render: &render,
                },
                &format!("{}@{hop}", stage::RELATION_SELECT),
            )?;
            if picked.is_empty() {
                if fallback_used {
                    break;
                }
                fallback_used = true;
                run.mark_fallback();
                picked = (0..rels.len()).collect();
            }
            let chosen: BTreeSet<RelationId> = picked.iter().map(|&i| rels[i].clone()).collect();

            let triples: Vec<Triple> = frontier
                .iter()
                .flat_map(|e| kg.extract_triples(e, &chosen))
                .collect();
            if triples.is_empty() {
                break;
            }
            let labels: Vec<String> = triples.iter().map(linearize_triple).collect();
            let input = json!({ "entities": names_json(&frontier), "relations": names_json(&chosen.iter().collect::<Vec<_>>()) })
                .to_string();
            let render = |idx: &[usize], budget: Option<usize>| {
                let subset: Vec<Triple> = idx.iter().map(|&i| triples[i].clone()).collect();
                linearize_triples_within(&subset, budget)
            };
            let mut picked = run.select(
                &Pool {
                    stage: stage::TRIPLE_SELECT,
                    interface: "extract_triples",
                    input: &input,
                    labels: &labels,
                    slot: "triples",
                    render: &render,
                },
                &format!("{}@{hop}", stage::TRIPLE_SELECT),
            )?;
            if picked.is_empty() {
                if fallback_used {
                    break;
                }
                fallback_used = true;
                run.mark_fallback();
                picked = (0..triples.len()).collect();
            }
            last_selected = picked.iter().map(|&i| triples[i].clone()).collect();
            gathered.extend(last_selected.iter().cloned());

            if fallback_used || hop == max_hops {
                break;
            }
            let evidence = linearize_triples_within(&gathered, self.config.max_evidence_chars);
            let raw = run.invoke(Call {
                stage: stage::SUFFICIENCY,
                tag: format!("{}@{hop}", stage::SUFFICIENCY),
                interface: "none",
                interface_input: String::new(),
                evidence,
                slot: "a judgement of whether these triples are sufficient",
                candidates: Vec::new(),
            })?;
            let verdict = parse_sufficiency(&raw);
            run.decide(sufficiency_name(verdict).to_string());
            if verdict == Sufficiency::Sufficient {
                break;
            }
            let next: BTreeSet<EntityId> = last_selected.iter().map(|t| t.tail.clone()).collect();
            frontier = next
                .into_iter()
                .take(self.config.frontier_width.max(1))
                .collect();
        }

        match self.config.answer_mode {
            AnswerMode::TailEntities => {
                let mut seen = BTreeSet::new();
                let tails = last_selected
                    .iter()
                    .filter(|t| seen.insert(t.tail.clone()))
                    .map(|t| t.tail.to_string())
                    .collect();
                answers_outcome(tails)
            }
            AnswerMode::Generate => {
                let evidence = linearize_triples_within(&gathered, self.config.max_evidence_chars);
                let raw = run.invoke(Call {
                    stage: stage::ANSWER_GENERATE,
                    tag: stage::ANSWER_GENERATE.to_string(),
                    interface: "none",
                    interface_input: String::new(),
                    evidence,
                    slot: "the answer entity",
                    candidates: Vec::new(),
                })?;
                let answers = parse_answer(&raw);
                run.decide(encode(&answers));
                answers_outcome(answers)
            }
        }
    }

    /// Table question answering, or statement verification when `verify` is set.
    pub fn answer_tableqa(
        &self,
        id: &str,
        table: &Table,
        question: &str,
        verify: bool,
    ) -> ReasoningTrace {
        let mut run = self.run(Task::Tableqa, question);
        let result = self.tableqa_flow(&mut run, table, verify);
        run.finish(result, id)
    }

    fn tableqa_flow(
        &self,
        run: &mut Run<'_, '_>,
        table: &Table,
        verify: bool,
    ) -> Result<Outcome, Failure> {
        let interface_err =
            |e: crate::table::TableError| Failure::new(FailureKind::Interface, e.to_string());
        let names = table.extract_column_names();
        let input = json!({ "table": table.name }).to_string();
        let render = |idx: &[usize], budget: Option<usize>| {
            let subset: Vec<&String> = idx.iter().map(|&i| &names[i]).collect();
            linearize_list_within(&subset, budget)
        };
        let mut cols = run.select(
            &Pool {
                stage: stage::COLUMN_SELECT,
                interface: "extract_column_names",
                input: &input,
                labels: &names,
                slot: "columns",
                render: &render,
            },
            stage::COLUMN_SELECT,
        )?;
        if cols.is_empty() {
            run.mark_fallback();
            cols = (0..names.len()).collect();
        }

        let projected = table.extract_columns(&cols).map_err(interface_err)?;
        let labels: Vec<String> = (1..=table.row_count())
            .map(|k| format!("item {k}"))
            .collect();
        let chosen_names: Vec<&String> = cols.iter().map(|&c| &names[c]).collect();
        let input = json!({ "columns": names_json(&chosen_names) }).to_string();
        let render = |idx: &[usize], budget: Option<usize>| {
            linearize_rows_within(&projected.filter_rows(idx), budget)
        };
        let mut rows = if table.row_count() == 0 {
            Vec::new()
        } else {
            let picked = run.select(
                &Pool {
                    stage: stage::ROW_SELECT,
                    interface: "extract_columns",
                    input: &input,
                    labels: &labels,
                    slot: "rows",
                    render: &render,
                },
                stage::ROW_SELECT,
            )?;
            if picked.is_empty() {
                run.mark_fallback();
            }
            picked
        };
        if rows.is_empty() {
            rows = (0..table.row_count()).collect();
        }

        let sub = table
            .extract_subtable(&cols, &rows)
            .map_err(interface_err)?;
        let row_numbers: Vec<usize> = rows.iter().map(|r| r + 1).collect();
        let input =
            json!({ "columns": names_json(&chosen_names), "rows": row_numbers }).to_string();
        let (gen_stage, slot) = if verify {
            (
                stage::VERIFY_GENERATE,
                "a verdict (entailed or refuted) on the statement",
            )
        } else {
            (stage::ANSWER_GENERATE, "the answer")
        };
        let raw = run.invoke(Call {
            stage: gen_stage,
            tag: gen_stage.to_string(),
            interface: "extract_subtable",
            interface_input: input,
            evidence: linearize_rows_within(&sub, self.config.max_evidence_chars),
            slot,
            candidates: Vec::new(),
        })?;
        let answers = parse_answer(&raw);
        run.decide(encode(&answers));
        answers_outcome(answers)
    }

    /// Text-to-SQL: table selection, then SQL generation over the selected tables.
    pub fn generate_sql(&self, id: &str, db: &Database, question: &str) -> ReasoningTrace {
        let mut run = self.run(Task::Text2sql, question);
        let result = self.text2sql_flow(&mut run, db);
        run.finish(result, id)
    }

    fn text2sql_flow(&self, run: &mut Run<'_, '_>, db: &Database) -> Result<Outcome, Failure> {
        let summary = db.extract_table_and_column_names();
        let names: Vec<String> = summary.tables.iter().map(|t| t.name.clone()).collect();
        let input = json!({ "database": db.name }).to_string();
        let render = |idx: &[usize], budget: Option<usize>| {
            let part = SchemaSummary {
                tables: idx.iter().map(|&i| summary.tables[i].clone()).collect(),
                foreign_keys: None,
            };
            linearize_schema_within(&part, budget)
        };
        let mut picked = run.select(
            &Pool {
                stage: stage::TABLE_SELECT,
                interface: "extract_table_and_column_names",
                input: &input,
                labels: &names,
                slot: "tables",
                render: &render,
            },
            stage::TABLE_SELECT,
        )?;
        if picked.is_empty() {
            run.mark_fallback();
            picked = (0..names.len()).collect();
        }
        let chosen: Vec<&String> = picked.iter().map(|&i| &names[i]).collect();
        let info = db
            .extract_tables_information(&chosen)
            .map_err(|e| Failure::new(FailureKind::Interface, e.to_string()))?;
        let raw = run.invoke(Call {
            stage: stage::SQL_GENERATE,
            tag: stage::SQL_GENERATE.to_string(),
            interface: "extract_tables_information",
            interface_input: json!({ "tables": names_json(&chosen) }).to_string(),
            evidence: linearize_schema_within(&info, self.config.max_evidence_chars),
            slot: "an executable SQLite SQL query",
            candidates: Vec::new(),
        })?;
        let decision = sql_decision(&raw);
        run.decide(decision);
        match parse_sql(&raw) {
            Ok(sql) => Ok(Outcome::Sql { sql }),
            Err(e) => Err(Failure::new(FailureKind::ExtractionError, e.to_string())),
        }
    }
}
