//! Evidence-to-text serialization.
//!
//! Formats:
//!
//! | evidence  | text                                                   |
//! |-----------|--------------------------------------------------------|
//! | names     | `[a, b, c]`                                            |
//! | triples   | `(h, r, t); (h, r, t)`                                 |
//! | rows      | `row 1: (col, v), (col, v); row 2: ...`                |
//! | schema    | `table T: columns [a, b]; ...; foreign keys: [T.a = U.b]` |
//!
//! Inside values, `\`, `,`, `(`, `)` and `;` are escaped with a backslash.
//! Row numbers are 1-based and refer to the source table.

use crate::db::SchemaSummary;
use crate::kg::{RelationId, Triple};
use crate::table::TableView;

/// Text plus whether items were dropped to respect a character budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linearized {
    pub text: String,
    pub truncated: bool,
}

pub fn escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        if matches!(c, '\\' | ',' | '(' | ')' | ';') {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

/// Joins whole parts while the result stays within `max_chars`.
fn join_within(
    prefix: &str,
    parts: &[String],
    sep: &str,
    suffix: &str,
    max_chars: Option<usize>,
) -> Linearized {
    let Some(max) = max_chars else {
        return Linearized {
            text: format!("{prefix}{}{suffix}", parts.join(sep)),
            truncated: false,
        };
    };
    let mut text = String::from(prefix);
    let mut used = prefix.chars().count() + suffix.chars().count();
    let sep_len = sep.chars().count();
    let mut truncated = false;
    for (i, part) in parts.iter().enumerate() {
        let extra = part.chars().count() + if i > 0 { sep_len } else { 0 };
        if used + extra > max {
            truncated = true;
            break;
        }
        if i > 0 {
            text.push_str(sep);
        }
        text.push_str(part);
        used += extra;
    }
    text.push_str(suffix);
    Linearized { text, truncated }
}

pub fn linearize_list_within<S: AsRef<str>>(items: &[S], max_chars: Option<usize>) -> Linearized {
    let parts: Vec<String> = items.iter().map(|s| escape(s.as_ref())).collect();
    join_within("[", &parts, ", ", "]", max_chars)
}

/// `[a, b]`; also used for column and table names.
pub fn linearize_list<S: AsRef<str>>(items: &[S]) -> String {
    linearize_list_within(items, None).text
}

pub fn linearize_relations(rels: &[RelationId]) -> String {
    linearize_list(rels)
}

pub fn linearize_triple(t: &Triple) -> String {
    format!(
        "({}, {}, {})",
        escape(t.head.as_str()),
        escape(t.relation.as_str()),
        escape(t.tail.as_str())
    )
}

pub fn linearize_triples_within(triples: &[Triple], max_chars: Option<usize>) -> Linearized {
    let parts: Vec<String> = triples.iter().map(linearize_triple).collect();
    join_within("", &parts, "; ", "", max_chars)
}

pub fn linearize_triples(triples: &[Triple]) -> String {
    linearize_triples_within(triples, None).text
}

fn render_row<T: TableView + ?Sized>(t: &T, k: usize) -> String {
    let cells: Vec<String> = t
        .column_names()
        .iter()
        .zip(&t.row_cells()[k])
        .map(|(c, v)| format!("({}, {})", escape(c), escape(&v.raw)))
        .collect();
    format!("row {}: {}", t.row_number(k), cells.join(", "))
}

pub fn linearize_rows_within<T: TableView + ?Sized>(t: &T, max_chars: Option<usize>) -> Linearized {
    let parts: Vec<String> = (0..t.row_cells().len()).map(|k| render_row(t, k)).collect();
    join_within("", &parts, "; ", "", max_chars)
}

pub fn linearize_rows<T: TableView + ?Sized>(t: &T) -> String {
    linearize_rows_within(t, None).text
}

pub fn linearize_schema_within(s: &SchemaSummary, max_chars: Option<usize>) -> Linearized {
    let mut parts: Vec<String> = s
        .tables
        .iter()
        .map(|t| {
            assert!(!t.columns.is_empty(), "table `{}` has no columns", t.name);
            format!(
                "table {}: columns {}",
                escape(&t.name),
                linearize_list(&t.columns)
            )
        })
        .collect();
    if let Some(fks) = s.foreign_keys.as_ref().filter(|f| !f.is_empty()) {
        let keys: Vec<String> = fks
            .iter()
            .map(|fk| {
                format!(
                    "{}.{} = {}.{}",
                    escape(&fk.from_table),
                    escape(&fk.from_column),
                    escape(&fk.to_table),
                    escape(&fk.to_column)
                )
            })
            .collect();
        parts.push(format!("foreign keys: [{}]", keys.join(", ")));
    }
    join_within("", &parts, "; ", "", max_chars)
}

pub fn linearize_schema(s: &SchemaSummary) -> String {
    linearize_schema_within(s, None).text
}
