//! Single-table data model with the three table read interfaces.
//!
//! Indices are 0-based internally. Anything shown to a model uses 1-based
//! row numbers.

use std::collections::HashSet;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("table needs at least one column")]
    NoColumns,
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("ragged row {row}: expected {expected} cells, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("column index {index} out of range (table has {len} columns)")]
    ColumnOutOfRange { index: usize, len: usize },
    #[error("row index {index} out of range (table has {len} rows)")]
    RowOutOfRange { index: usize, len: usize },
    #[error("unsupported cell value in row {row}: {value}")]
    BadCell { row: usize, value: String },
    #[error("malformed table document: {0}")]
    Format(String),
}

/// One cell. `numeric` is derived from `raw` and never alters it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct CellValue {
    pub raw: String,
    pub numeric: Option<f64>,
}

impl CellValue {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let numeric = parse_numeric(&raw);
        Self { raw, numeric }
    }

    pub fn from_number(x: f64) -> Self {
        Self {
            raw: format_number(x),
            numeric: Some(x),
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.numeric.is_some()
    }
}

impl From<String> for CellValue {
    fn from(raw: String) -> Self {
        CellValue::new(raw)
    }
}

impl From<&str> for CellValue {
    fn from(raw: &str) -> Self {
        CellValue::new(raw)
    }
}

impl From<CellValue> for String {
    fn from(c: CellValue) -> String {
        c.raw
    }
}

/// Decimal parse after stripping `,`, `$` and `%`: optional sign, digits,
/// optional fraction. Exponents, `inf` and `nan` are not numbers here.
pub fn parse_numeric(raw: &str) -> Option<f64> {
    let cleaned: String = raw
        .chars()
        .filter(|c| !matches!(c, ',' | '$' | '%'))
        .collect();
    let s = cleaned.trim();
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    let ok = match frac_part {
        None => !int_part.is_empty() && digits(int_part),
        Some(f) => (!int_part.is_empty() || !f.is_empty()) && digits(int_part) && digits(f),
    };
    if !ok {
        return None;
    }
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Canonical text for a number: integral values print without a fraction.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    columns: Vec<String>,
    rows: Vec<Vec<CellValue>>,
}

impl Table {
    pub fn new(
        name: Option<String>,
        columns: Vec<String>,
        rows: Vec<Vec<String>>,
    ) -> Result<Self, TableError> {
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(CellValue::new).collect())
            .collect();
        Self::from_cells(name, columns, rows)
    }

    pub fn from_cells(
        name: Option<String>,
        columns: Vec<String>,
        rows: Vec<Vec<CellValue>>,
    ) -> Result<Self, TableError> {
        if columns.is_empty() {
            return Err(TableError::NoColumns);
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.trim().to_string()) {
                return Err(TableError::DuplicateColumn(c.clone()));
            }
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != columns.len() {
                return Err(TableError::RaggedRow {
                    row: i + 1,
                    expected: columns.len(),
                    found: r.len(),
                });
            }
        }
        Ok(Self {
            name,
            columns,
            rows,
        })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<CellValue>] {
        &self.rows
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn cell(&self, column: usize, row: usize) -> Option<&CellValue> {
        self.rows.get(row).and_then(|r| r.get(column))
    }

    /// Trimmed, case-insensitive lookup; the first match in table order wins.
    pub fn resolve_column(&self, name: &str) -> Option<usize> {
        let needle = name.trim().to_lowercase();
        self.columns
            .iter()
            .position(|c| c.trim().to_lowercase() == needle)
    }

    pub fn extract_column_names(&self) -> Vec<String> {
        self.columns.clone()
    }

    /// Selected columns (in table order) over every row.
    pub fn extract_columns(&self, cols: &[usize]) -> Result<SubTable, TableError> {
        let all_rows: Vec<usize> = (0..self.rows.len()).collect();
        self.extract_subtable(cols, &all_rows)
    }

    /// Selected columns × selected rows, both in source order; duplicates ignored.
    pub fn extract_subtable(&self, cols: &[usize], rows: &[usize]) -> Result<SubTable, TableError> {
        let cols = sorted_unique(cols);
        let rows = sorted_unique(rows);
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.columns.len()) {
            return Err(TableError::ColumnOutOfRange {
                index: bad,
                len: self.columns.len(),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.rows.len()) {
            return Err(TableError::RowOutOfRange {
                index: bad,
                len: self.rows.len(),
            });
        }
        let columns = cols.iter().map(|&c| self.columns[c].clone()).collect();
        let cells = rows
            .iter()
            .map(|&r| cols.iter().map(|&c| self.rows[r][c].clone()).collect())
            .collect();
        Ok(SubTable {
            columns,
            rows: cells,
            origin_columns: cols,
            origin_rows: rows,
        })
    }

    pub fn as_subtable(&self) -> SubTable {
        SubTable {
            columns: self.columns.clone(),
            rows: self.rows.clone(),
            origin_columns: (0..self.columns.len()).collect(),
            origin_rows: (0..self.rows.len()).collect(),
        }
    }
}

fn sorted_unique(idx: &[usize]) -> Vec<usize> {
    let mut v = idx.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// A projection of a [`Table`] that remembers where each cell came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<CellValue>>,
    pub origin_columns: Vec<usize>,
    pub origin_rows: Vec<usize>,
}

impl SubTable {
    /// Keeps the rows whose source index is in `source_rows`.
    pub fn filter_rows(&self, source_rows: &[usize]) -> SubTable {
        let keep: HashSet<usize> = source_rows.iter().copied().collect();
        let mut out = SubTable {
            columns: self.columns.clone(),
            rows: Vec::new(),
            origin_columns: self.origin_columns.clone(),
            origin_rows: Vec::new(),
        };
        for (row, &origin) in self.rows.iter().zip(&self.origin_rows) {
            if keep.contains(&origin) {
                out.rows.push(row.clone());
                out.origin_rows.push(origin);
            }
        }
        out
    }
}

/// Row-oriented read access shared by tables and sub-tables.
pub trait TableView {
    fn column_names(&self) -> &[String];
    fn row_cells(&self) -> &[Vec<CellValue>];
    /// 1-based number shown for the `k`-th stored row.
    fn row_number(&self, k: usize) -> usize;
}

impl TableView for Table {
    fn column_names(&self) -> &[String] {
        &self.columns
    }
    fn row_cells(&self) -> &[Vec<CellValue>] {
        &self.rows
    }
    fn row_number(&self, k: usize) -> usize {
        k + 1
    }
}

impl TableView for SubTable {
    fn column_names(&self) -> &[String] {
        &self.columns
    }
    fn row_cells(&self) -> &[Vec<CellValue>] {
        &self.rows
    }
    fn row_number(&self, k: usize) -> usize {
        self.origin_rows[k] + 1
    }
}

#[derive(Deserialize)]
pub(crate) struct TableDoc {
    #[serde(default)]
    pub name: Option<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<serde_json::Value>>,
}

impl TableDoc {
    pub(crate) fn into_table(self) -> Result<Table, TableError> {
        let mut rows = Vec::with_capacity(self.rows.len());
        for (i, r) in self.rows.into_iter().enumerate() {
            let mut cells = Vec::with_capacity(r.len());
            for v in r {
                let raw = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Number(n) => n.to_string(),
                    serde_json::Value::Bool(b) => b.to_string(),
                    serde_json::Value::Null => String::new(),
                    other => {
                        return Err(TableError::BadCell {
                            row: i + 1,
                            value: other.to_string(),
                        })
                    }
                };
                cells.push(raw);
            }
            rows.push(cells);
        }
        Table::new(self.name, self.columns, rows)
    }
}

/// Reads `{"name"?: .., "columns": [..], "rows": [[..], ..]}`.
pub fn load_table<R: Read>(source: R) -> Result<Table, TableError> {
    let doc: TableDoc =
        serde_json::from_reader(source).map_err(|e| TableError::Format(e.to_string()))?;
    doc.into_table()
}

/// Reads a CSV whose first record is the header.
pub fn load_table_csv<R: Read>(source: R, name: Option<String>) -> Result<Table, TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| TableError::Format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| TableError::Format(e.to_string()))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Table::new(name, columns, rows)
}
