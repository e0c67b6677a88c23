//! Interface-driven question answering over structured data.
//!
//! Large language models are kept away from raw structured data. Instead,
//! small read interfaces pull evidence out of a knowledge graph, a table or
//! a relational database, the evidence is linearized into prompt text, and a
//! pluggable [`backend::Backend`] decides what to read next or produces the
//! final answer. The loop is repeated until an answer (or an executable SQL
//! query) comes out.
//!
//! Module map:
//!
//! - [`kg`]: triple store with `extract_neighbor_relations` / `extract_triples`
//! - [`table`]: single tables with column and sub-table extraction
//! - [`db`]: multi-table databases, schema summaries, foreign keys
//! - [`sql`]: parser and evaluator for the SQL subset used for execution accuracy
//! - [`linearize`]: deterministic evidence-to-text serialization
//! - [`prompt`]: selection / generation prompt templates
//! - [`backend`]: model backends and response parsers
//! - [`orchestrator`]: the per-task reasoning loops and their traces
//! - [`eval`]: datasets, metrics and batch runs

pub mod backend;
pub mod db;
pub mod eval;
pub mod kg;
pub mod linearize;
pub mod orchestrator;
pub mod prompt;
pub mod sql;
pub mod table;

/// Which kind of structured data a question is asked against.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Kgqa,
    Tableqa,
    Text2sql,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Kgqa => "kgqa",
            Task::Tableqa => "tableqa",
            Task::Text2sql => "text2sql",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kgqa" => Ok(Task::Kgqa),
            "tableqa" => Ok(Task::Tableqa),
            "text2sql" | "text-to-sql" => Ok(Task::Text2sql),
            other => Err(format!(
                "unknown task `{other}` (expected kgqa, tableqa or text2sql)"
            )),
        }
    }
}
