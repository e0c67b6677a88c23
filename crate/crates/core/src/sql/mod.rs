//! A small SQL dialect, enough to score generated queries by execution.
//!
//! Supported: `SELECT [DISTINCT]` over columns, literals and
//! `COUNT/SUM/AVG/MIN/MAX` (with optional `DISTINCT`), `FROM` with inner
//! equi-`JOIN ... ON a = b`, `WHERE` with `= != < <= > >= LIKE` under
//! `AND/OR/NOT`, `GROUP BY`, `HAVING`, `ORDER BY ... ASC|DESC` and `LIMIT`.
//! Subqueries, set operations, outer joins, arithmetic and window functions
//! are rejected with [`SqlError::Unsupported`] so callers can count them.
//!
//! Every cell is text; there is no NULL. Comparisons are numeric when both
//! sides parse as numbers and byte-lexicographic otherwise. Sorting (and
//! `MIN`/`MAX`) uses a total order that puts numbers before text.

mod ast;
mod exec;
mod parser;

use std::cmp::Ordering;
use std::fmt;

pub use ast::*;
pub use parser::parse_sql;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::Database;
use crate::table::CellValue;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SqlError {
    #[error("syntax error at offset {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unsupported construct at offset {position}: {construct}")]
    Unsupported { position: usize, construct: String },
    #[error("analysis error: {0}")]
    Analysis(String),
}

impl SqlError {
    pub fn is_unsupported(&self) -> bool {
        matches!(self, SqlError::Unsupported { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<CellValue>>,
    /// True iff the query had `ORDER BY`.
    pub ordered: bool,
    /// Non-fatal notes, e.g. non-numeric cells skipped by `SUM`/`AVG`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ResultSet {
    /// Tab-separated header plus one line per row.
    pub fn to_tsv(&self) -> String {
        let mut out = self.columns.join("\t");
        out.push('\n');
        for r in &self.rows {
            let line: Vec<&str> = r.iter().map(|c| c.raw.as_str()).collect();
            out.push_str(&line.join("\t"));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for ResultSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_tsv())
    }
}

/// Parses and runs `sql` against `db`.
pub fn execute_sql(db: &Database, sql: &str) -> Result<ResultSet, SqlError> {
    execute(db, &parse_sql(sql)?)
}

pub fn execute(db: &Database, query: &SqlQuery) -> Result<ResultSet, SqlError> {
    exec::run(db, query)
}

/// Normalized value identity used for grouping, `DISTINCT` and result
/// comparison. Numbers are rounded to 9 decimals so that differently
/// accumulated averages still compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValueKey {
    Num(i128),
    Text(String),
}

pub fn value_key(v: &CellValue) -> ValueKey {
    match v.numeric {
        Some(x) => ValueKey::Num((x * 1e9).round() as i128),
        None => ValueKey::Text(v.raw.clone()),
    }
}

/// The comparison used by `WHERE`/`HAVING` operators.
pub fn compare_values(a: &CellValue, b: &CellValue) -> Ordering {
    match (a.numeric, b.numeric) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        _ => a.raw.as_bytes().cmp(b.raw.as_bytes()),
    }
}

/// Total order for sorting: numbers (by value) before text (by bytes).
pub fn total_order(a: &CellValue, b: &CellValue) -> Ordering {
    match (a.numeric, b.numeric) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.raw.as_bytes().cmp(b.raw.as_bytes()),
    }
}

/// `LIKE` with `%` and `_`, ASCII case-insensitive.
pub fn like_match(text: &str, pattern: &str) -> bool {
    let t: Vec<char> = text.chars().map(|c| c.to_ascii_lowercase()).collect();
    let p: Vec<char> = pattern.chars().map(|c| c.to_ascii_lowercase()).collect();
    // Iterative wildcard match with single-star backtracking.
    let (mut ti, mut pi) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '_' || (p[pi] != '%' && p[pi] == t[ti])) {
            ti += 1;
            pi += 1;
        } else if pi < p.len() && p[pi] == '%' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '%' {
        pi += 1;
    }
    pi == p.len()
}

/// Execution-result equality: column names are ignored; if either side is
/// ordered the rows must match in sequence, otherwise as multisets.
pub fn results_equal(a: &ResultSet, b: &ResultSet) -> bool {
    if a.rows.len() != b.rows.len() {
        return false;
    }
    let keys = |rs: &ResultSet| -> Vec<Vec<ValueKey>> {
        rs.rows
            .iter()
            .map(|r| r.iter().map(value_key).collect())
            .collect()
    };
    let (mut ka, mut kb) = (keys(a), keys(b));
    if a.ordered || b.ordered {
        return ka == kb;
    }
    ka.sort();
    kb.sort();
    ka == kb
}
