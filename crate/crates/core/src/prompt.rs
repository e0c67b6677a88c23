//! Selection and generation prompt templates.
//!
//! Bodies use four placeholders: `{Y}` for linearized evidence, `{X}` for
//! what to select, `{Z}` for what to generate and `{Q}` for the question.
//! Selection bodies need `{Y}`, `{X}` and `{Q}`; generation bodies need
//! `{Y}`, `{Z}` and `{Q}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Task;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template `{key}` is missing placeholder {placeholder}")]
    MissingPlaceholder {
        key: String,
        placeholder: &'static str,
    },
    #[error("template `{key}`: placeholder {placeholder} cannot be resolved in a {kind} prompt")]
    Unresolved {
        key: String,
        placeholder: &'static str,
        kind: &'static str,
    },
    #[error("template `{key}` is a {actual} prompt, not {expected}")]
    WrongKind {
        key: String,
        actual: &'static str,
        expected: &'static str,
    },
    #[error("no template for stage `{0}`")]
    UnknownStage(String),
    #[error("bad stage key `{0}` (expected `<task>.<stage>`)")]
    BadKey(String),
    #[error("template file: {0}")]
    File(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Selection,
    Generation,
}

impl PromptKind {
    fn name(self) -> &'static str {
        match self {
            PromptKind::Selection => "selection",
            PromptKind::Generation => "generation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub task: Task,
    pub stage: String,
    pub body: String,
}

const PLACEHOLDERS: [(&str, char); 4] = [("{Y}", 'Y'), ("{X}", 'X'), ("{Z}", 'Z'), ("{Q}", 'Q')];

fn required(kind: PromptKind) -> [&'static str; 3] {
    match kind {
        PromptKind::Selection => ["{Y}", "{X}", "{Q}"],
        PromptKind::Generation => ["{Y}", "{Z}", "{Q}"],
    }
}

impl PromptTemplate {
    pub fn new(
        kind: PromptKind,
        task: Task,
        stage: impl Into<String>,
        body: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let t = Self {
            kind,
            task,
            stage: stage.into(),
            body: body.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn key(&self) -> String {
        format!("{}.{}", self.task, self.stage)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for p in required(self.kind) {
            if !self.body.contains(p) {
                return Err(PromptError::MissingPlaceholder {
                    key: self.key(),
                    placeholder: p,
                });
            }
        }
        let foreign = match self.kind {
            PromptKind::Selection => "{Z}",
            PromptKind::Generation => "{X}",
        };
        if self.body.contains(foreign) {
            return Err(PromptError::Unresolved {
                key: self.key(),
                placeholder: foreign,
                kind: self.kind.name(),
            });
        }
        Ok(())
    }

    /// Single-pass substitution: argument text is never re-scanned.
    fn substitute(&self, y: &str, slot: &str, q: &str) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len() + y.len() + q.len() + slot.len());
        let mut rest = self.body.as_str();
        'outer: while !rest.is_empty() {
            for (p, which) in PLACEHOLDERS {
                if let Some(after) = rest.strip_prefix(p) {
                    let value = match (which, self.kind) {
                        ('Y', _) => y,
                        ('Q', _) => q,
                        ('X', PromptKind::Selection) | ('Z', PromptKind::Generation) => slot,
                        _ => {
                            return Err(PromptError::Unresolved {
                                key: self.key(),
                                placeholder: p,
                                kind: self.kind.name(),
                            })
                        }
                    };
                    out.push_str(value);
                    rest = after;
                    continue 'outer;
                }
            }
            let c = rest.chars().next().unwrap();
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
        Ok(out)
    }

    fn expect_kind(&self, kind: PromptKind) -> Result<(), PromptError> {
        if self.kind != kind {
            return Err(PromptError::WrongKind {
                key: self.key(),
                actual: self.kind.name(),
                expected: kind.name(),
            });
        }
        Ok(())
    }

    pub fn render_selection(&self, y: &str, x_kind: &str, q: &str) -> Result<String, PromptError> {
        self.expect_kind(PromptKind::Selection)?;
        self.substitute(y, x_kind, q)
    }

    pub fn render_generation(&self, y: &str, z_kind: &str, q: &str) -> Result<String, PromptError> {
        self.expect_kind(PromptKind::Generation)?;
        self.substitute(y, z_kind, q)
    }

    /// Renders with whichever slot the template kind uses.
    pub fn render(&self, y: &str, slot: &str, q: &str) -> Result<String, PromptError> {
        self.substitute(y, slot, q)
    }
}

pub const SELECTION_PATTERN: &str =
    "Here are {Y}. Which {X} are most relevant to answer the question {Q}";
pub const GENERATION_PATTERN: &str = "Based on {Y}, please generate {Z} for the question {Q}";

/// Stage names used by the orchestrator.
pub mod stage {
    pub const RELATION_SELECT: &str = "relation-select";
    pub const TRIPLE_SELECT: &str = "triple-select";
    pub const SUFFICIENCY: &str = "sufficiency";
    pub const ANSWER_GENERATE: &str = "answer-generate";
    pub const COLUMN_SELECT: &str = "column-select";
    pub const ROW_SELECT: &str = "row-select";
    pub const VERIFY_GENERATE: &str = "verify-generate";
    pub const TABLE_SELECT: &str = "table-select";
    pub const SQL_GENERATE: &str = "sql-generate";
}

fn builtin_specs() -> Vec<(Task, &'static str, PromptKind, String)> {
    use PromptKind::*;
    use Task::*;
    vec![
        (
            Kgqa,
            stage::RELATION_SELECT,
            Selection,
            format!("{SELECTION_PATTERN}\nPlease provide only one relevant relation that's present in the candidate."),
        ),
        (
            Kgqa,
            stage::TRIPLE_SELECT,
            Selection,
            format!("{SELECTION_PATTERN}\nPlease copy the relevant triples exactly, one per line."),
        ),
        (
            Kgqa,
            stage::SUFFICIENCY,
            Generation,
            format!("{GENERATION_PATTERN}\nAnswer \"Yes\" if these triples are sufficient to answer the question, otherwise answer \"No\"."),
        ),
        (
            Kgqa,
            stage::ANSWER_GENERATE,
            Generation,
            format!("{GENERATION_PATTERN}\nYou just need to provide only one answer entity."),
        ),
        (Tableqa, stage::COLUMN_SELECT, Selection, format!("{SELECTION_PATTERN}\nPlease list the column names.")),
        (
            Tableqa,
            stage::ROW_SELECT,
            Selection,
            format!("{SELECTION_PATTERN}\nEach row is an item; please list the useful ones as \"item N\"."),
        ),
        (
            Tableqa,
            stage::ANSWER_GENERATE,
            Generation,
            format!("{GENERATION_PATTERN}\nPlease provide only the answer, one per line if there are several."),
        ),
        (
            Tableqa,
            stage::VERIFY_GENERATE,
            Generation,
            format!("{GENERATION_PATTERN}\nAnswer with exactly one word: \"entailed\" or \"refuted\"."),
        ),
        (
            Text2sql,
            stage::TABLE_SELECT,
            Selection,
            format!("{SELECTION_PATTERN}\nWhich tables do you need to complete the SQLite SQL query?"),
        ),
        (
            Text2sql,
            stage::SQL_GENERATE,
            Generation,
            format!("{GENERATION_PATTERN}\nComplete sqlite SQL query only with no explanation."),
        ),
    ]
}

#[derive(Deserialize)]
struct TemplateEntry {
    kind: PromptKind,
    body: String,
}

/// Templates keyed by `<task>.<stage>`; read-only once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        for (task, stage, kind, body) in builtin_specs() {
            let t =
                PromptTemplate::new(kind, task, stage, body).expect("built-in template is valid");
            templates.insert(t.key(), t);
        }
        Self { templates }
    }

    /// Built-ins overridden by a JSON map `"<task>.<stage>" -> {kind, body}`.
    pub fn with_overrides_json(json: &str) -> Result<Self, PromptError> {
        let entries: BTreeMap<String, TemplateEntry> =
            serde_json::from_str(json).map_err(|e| PromptError::File(e.to_string()))?;
        let mut reg = Self::builtin();
        for (key, entry) in entries {
            let (task, stage) = key
                .split_once('.')
                .ok_or_else(|| PromptError::BadKey(key.clone()))?;
            let task: Task = task.parse().map_err(|_| PromptError::BadKey(key.clone()))?;
            let t = PromptTemplate::new(entry.kind, task, stage, entry.body)?;
            reg.templates.insert(t.key(), t);
        }
        Ok(reg)
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::File(format!("{}: {e}", path.display())))?;
        Self::with_overrides_json(&text)
    }

    pub fn get(&self, task: Task, stage: &str) -> Result<&PromptTemplate, PromptError> {
        let key = format!("{task}.{stage}");
        self.templates
            .get(&key)
            .ok_or(PromptError::UnknownStage(key))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }
}
