//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function takes plain strings (JSON or TSV documents) and
//! returns text, so the page needs no bundler or generated typings beyond
//! what `wasm-bindgen --target web` emits.

use std::collections::BTreeMap;

use structreason::backend::{base_stage_tag, Backend, BackendError, GenerationRequest};
use structreason::db::load_database;
use structreason::kg::load_kg;
use structreason::linearize::linearize_rows;
use structreason::orchestrator::{Orchestrator, OrchestratorConfig};
use structreason::prompt::TemplateRegistry;
use structreason::sql::execute_sql;
use structreason::table::load_table;
use wasm_bindgen::prelude::*;

/// Linearizes the named columns (comma-separated; empty for all) of a JSON table.
pub fn table_view(table_json: &str, columns: &str) -> Result<String, String> {
    let table = load_table(table_json.as_bytes()).map_err(|e| e.to_string())?;
    let wanted: Vec<&str> = columns
        .split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .collect();
    if wanted.is_empty() {
        return Ok(linearize_rows(&table));
    }
    let mut idx = Vec::with_capacity(wanted.len());
    for name in wanted {
        idx.push(
            table
                .resolve_column(name)
                .ok_or_else(|| format!("no column `{name}`"))?,
        );
    }
    let sub = table.extract_columns(&idx).map_err(|e| e.to_string())?;
    Ok(linearize_rows(&sub))
}

/// Runs a query against a JSON database document and returns TSV.
pub fn sql_tsv(db_json: &str, query: &str) -> Result<String, String> {
    let db = load_database(db_json.as_bytes()).map_err(|e| e.to_string())?;
    let result = execute_sql(&db, query).map_err(|e| e.to_string())?;
    Ok(result.to_tsv())
}

/// Replies by stage name (`relation-select`, `triple-select`, `sufficiency`,
/// `answer-generate`), ignoring hop numbers and prompt text.
struct StageReplies(BTreeMap<String, String>);

impl Backend for StageReplies {
    fn identity(&self) -> String {
        "stage-replies".into()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let tag = base_stage_tag(&request.stage_tag);
        let stage = tag.split('@').next().unwrap_or(tag);
        self.0
            .get(stage)
            .cloned()
            .ok_or_else(|| BackendError::ScriptMiss {
                stage_tag: request.stage_tag.clone(),
            })
    }
}

/// Answers a question over a TSV knowledge graph with per-stage replies
/// standing in for the model; returns the full reasoning trace as JSON.
pub fn kg_walk(
    kg_tsv: &str,
    question: &str,
    topic: &str,
    replies_json: &str,
    max_hops: usize,
) -> Result<String, String> {
    let kg = load_kg(kg_tsv.as_bytes()).map_err(|e| e.to_string())?;
    let replies: BTreeMap<String, String> =
        serde_json::from_str(replies_json).map_err(|e| format!("replies: {e}"))?;
    let backend = StageReplies(replies);
    let templates = TemplateRegistry::builtin();
    let config = OrchestratorConfig {
        max_hops: max_hops.max(1),
        ..OrchestratorConfig::default()
    };
    let trace =
        Orchestrator::new(&backend, &templates, config).answer_kgqa("demo", &kg, question, topic);
    Ok(trace.to_json())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = tableView)]
pub fn table_view_js(table_json: &str, columns: &str) -> Result<String, JsError> {
    js(table_view(table_json, columns))
}

#[wasm_bindgen(js_name = sqlExec)]
pub fn sql_exec_js(db_json: &str, query: &str) -> Result<String, JsError> {
    js(sql_tsv(db_json, query))
}

#[wasm_bindgen(js_name = kgWalk)]
pub fn kg_walk_js(
    kg_tsv: &str,
    question: &str,
    topic: &str,
    replies_json: &str,
    max_hops: usize,
) -> Result<String, JsError> {
    js(kg_walk(kg_tsv, question, topic, replies_json, max_hops))
}
