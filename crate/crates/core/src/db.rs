//! Multi-table databases and the two schema read interfaces.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{load_table_csv, Table, TableDoc, TableError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DbError {
    #[error("database has no tables")]
    Empty,
    #[error("table {table}: {source}")]
    Table { table: String, source: TableError },
    #[error("table without a name at position {0}")]
    UnnamedTable(usize),
    #[error("duplicate table name `{0}`")]
    DuplicateTable(String),
    #[error("dangling foreign key {key}: {reason}")]
    DanglingForeignKey { key: String, reason: String },
    #[error("unknown table `{name}` (valid tables: {valid})")]
    UnknownTable { name: String, valid: String },
    #[error("malformed database document: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

impl fmt::Display for ForeignKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{} = {}.{}",
            self.from_table, self.from_column, self.to_table, self.to_column
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub name: String,
    tables: Vec<Table>,
    foreign_keys: Vec<ForeignKey>,
}

/// Table and column names of (part of) a database; never carries rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaSummary {
    pub tables: Vec<TableSchema>,
    /// `None` for the plain name listing, `Some` (possibly empty) when
    /// foreign keys were requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreign_keys: Option<Vec<ForeignKey>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<String>,
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

impl Database {
    /// Validates table names and canonicalizes foreign key endpoints to the
    /// stored spelling.
    pub fn new(
        name: String,
        tables: Vec<Table>,
        foreign_keys: Vec<ForeignKey>,
    ) -> Result<Self, DbError> {
        if tables.is_empty() {
            return Err(DbError::Empty);
        }
        let mut seen = HashSet::new();
        for (i, t) in tables.iter().enumerate() {
            let n = t.name.as_deref().ok_or(DbError::UnnamedTable(i))?;
            if !seen.insert(fold(n)) {
                return Err(DbError::DuplicateTable(n.to_string()));
            }
        }
        let mut db = Database {
            name,
            tables,
            foreign_keys: Vec::new(),
        };
        let mut canonical = Vec::with_capacity(foreign_keys.len());
        for fk in foreign_keys {
            let key = fk.to_string();
            let (ft, fc) = db.resolve_endpoint(&fk.from_table, &fk.from_column, &key)?;
            let (tt, tc) = db.resolve_endpoint(&fk.to_table, &fk.to_column, &key)?;
            canonical.push(ForeignKey {
                from_table: ft,
                from_column: fc,
                to_table: tt,
                to_column: tc,
            });
        }
        db.foreign_keys = canonical;
        Ok(db)
    }

    fn resolve_endpoint(
        &self,
        table: &str,
        column: &str,
        key: &str,
    ) -> Result<(String, String), DbError> {
        let dangling = |reason: String| DbError::DanglingForeignKey {
            key: key.to_string(),
            reason,
        };
        let t = self
            .table(table)
            .ok_or_else(|| dangling(format!("no table `{table}`")))?;
        let c = t.resolve_column(column).ok_or_else(|| {
            dangling(format!(
                "table `{}` has no column `{column}`",
                table_name(t)
            ))
        })?;
        Ok((table_name(t).to_string(), t.columns()[c].clone()))
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn foreign_keys(&self) -> &[ForeignKey] {
        &self.foreign_keys
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables
            .iter()
            .map(|t| table_name(t).to_string())
            .collect()
    }

    /// Trimmed, case-insensitive table lookup.
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.table_index(name).map(|i| &self.tables[i])
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        let needle = fold(name);
        self.tables
            .iter()
            .position(|t| fold(table_name(t)) == needle)
    }

    pub fn extract_table_and_column_names(&self) -> SchemaSummary {
        SchemaSummary {
            tables: self.tables.iter().map(schema_of).collect(),
            foreign_keys: None,
        }
    }

    /// Schemas of the named tables (storage order) plus every foreign key
    /// whose two endpoints are both among them.
    pub fn extract_tables_information<S: AsRef<str>>(
        &self,
        names: &[S],
    ) -> Result<SchemaSummary, DbError> {
        let mut selected = vec![false; self.tables.len()];
        for n in names {
            let i = self
                .table_index(n.as_ref())
                .ok_or_else(|| DbError::UnknownTable {
                    name: n.as_ref().to_string(),
                    valid: self.table_names().join(", "),
                })?;
            selected[i] = true;
        }
        let chosen: HashSet<String> = self
            .tables
            .iter()
            .zip(&selected)
            .filter(|(_, &s)| s)
            .map(|(t, _)| table_name(t).to_string())
            .collect();
        let tables = self
            .tables
            .iter()
            .zip(&selected)
            .filter(|(_, &s)| s)
            .map(|(t, _)| schema_of(t))
            .collect();
        let foreign_keys = self
            .foreign_keys
            .iter()
            .filter(|fk| chosen.contains(&fk.from_table) && chosen.contains(&fk.to_table))
            .cloned()
            .collect();
        Ok(SchemaSummary {
            tables,
            foreign_keys: Some(foreign_keys),
        })
    }
}

fn table_name(t: &Table) -> &str {
    t.name.as_deref().unwrap_or_default()
}

fn schema_of(t: &Table) -> TableSchema {
    TableSchema {
        name: table_name(t).to_string(),
        columns: t.columns().to_vec(),
    }
}

#[derive(Deserialize)]
struct DatabaseDoc {
    #[serde(default)]
    name: Option<String>,
    tables: Vec<TableDoc>,
    #[serde(default)]
    foreign_keys: Vec<ForeignKey>,
}

/// Reads `{"name"?, "tables": [table docs], "foreign_keys": [..]}`.
pub fn load_database<R: Read>(source: R) -> Result<Database, DbError> {
    let doc: DatabaseDoc =
        serde_json::from_reader(source).map_err(|e| DbError::Format(e.to_string()))?;
    let mut tables = Vec::with_capacity(doc.tables.len());
    for (i, td) in doc.tables.into_iter().enumerate() {
        let label = td.name.clone().unwrap_or_else(|| format!("#{i}"));
        tables.push(td.into_table().map_err(|source| DbError::Table {
            table: label,
            source,
        })?);
    }
    Database::new(doc.name.unwrap_or_default(), tables, doc.foreign_keys)
}

#[derive(Deserialize, Default)]
struct SchemaSidecar {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    tables: Option<Vec<String>>,
    #[serde(default)]
    foreign_keys: Vec<ForeignKey>,
}

/// Reads a directory of `<table>.csv` files and an optional `schema.json`
/// declaring the foreign keys (and optionally the table order).
pub fn load_database_dir(dir: &Path) -> Result<Database, DbError> {
    let io = |e: std::io::Error| DbError::Io(format!("{}: {e}", dir.display()));
    let sidecar_path = dir.join("schema.json");
    let sidecar: SchemaSidecar = if sidecar_path.exists() {
        let f = std::fs::File::open(&sidecar_path).map_err(io)?;
        serde_json::from_reader(f).map_err(|e| DbError::Format(format!("schema.json: {e}")))?
    } else {
        SchemaSidecar::default()
    };
    let mut csvs: Vec<(String, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            csvs.push((stem, path));
        }
    }
    csvs.sort();
    if let Some(order) = &sidecar.tables {
        let rank = |n: &str| {
            order
                .iter()
                .position(|o| fold(o) == fold(n))
                .unwrap_or(usize::MAX)
        };
        csvs.sort_by_key(|(n, _)| rank(n));
    }
    let mut tables = Vec::with_capacity(csvs.len());
    for (name, path) in csvs {
        let f = std::fs::File::open(&path).map_err(io)?;
        let t = load_table_csv(f, Some(name.clone())).map_err(|source| DbError::Table {
            table: name,
            source,
        })?;
        tables.push(t);
    }
    let name = sidecar
        .name
        .or_else(|| dir.file_name().and_then(|n| n.to_str()).map(str::to_string))
        .unwrap_or_default();
    Database::new(name, tables, sidecar.foreign_keys)
}
