//! Random knowledge graphs, tables and databases checked against
//! linear-scan and positional oracles.

use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::Rng;
use structreason::db::ForeignKey;
use structreason::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use structreason::linearize::{escape, linearize_rows};
use structreason::table::Table;

use super::sql_ref::RefDb;

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

pub fn random_triples(rng: &mut StdRng, max: usize) -> Vec<(String, String, String)> {
    let n_entities = rng.random_range(1..=40);
    let n_relations = rng.random_range(1..=8);
    let n = rng.random_range(0..=max);
    (0..n)
        .map(|_| {
            (
                format!("entity {}", rng.random_range(0..n_entities)),
                format!("rel_{}", rng.random_range(0..n_relations)),
                format!("entity {}", rng.random_range(0..n_entities)),
            )
        })
        .collect()
}

/// Compares both KG read interfaces with a scan of the raw triple list.
pub fn check_kg(rng: &mut StdRng) -> Result<(), String> {
    let raw = random_triples(rng, 500);
    let kg =
        KnowledgeGraph::from_triples(raw.iter().map(|(h, r, t)| Triple::parse(h, r, t).unwrap()));

    let distinct: BTreeSet<&(String, String, String)> = raw.iter().collect();
    ensure(kg.len() == distinct.len(), || {
        format!("len {} != {}", kg.len(), distinct.len())
    })?;

    let mut probes: Vec<String> = raw.iter().map(|t| t.0.clone()).collect();
    probes.push("entity 999".into());
    probes.sort();
    probes.dedup();
    for head in probes {
        let e = EntityId::new(&head).unwrap();
        let expected: Vec<String> = raw
            .iter()
            .filter(|t| t.0 == head)
            .map(|t| t.1.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let got: Vec<String> = kg
            .extract_neighbor_relations(&e)
            .iter()
            .map(|r| r.to_string())
            .collect();
        ensure(got == expected, || {
            format!("relations of {head}: {got:?} != {expected:?}")
        })?;

        let mut pool = expected.clone();
        pool.push("rel_absent".into());
        let k = rng.random_range(0..=pool.len());
        let chosen: BTreeSet<String> = pool.choose_multiple(rng, k).cloned().collect();
        let rels: BTreeSet<RelationId> =
            chosen.iter().map(|r| RelationId::new(r).unwrap()).collect();
        let mut want: Vec<(String, String, String)> = raw
            .iter()
            .filter(|t| t.0 == head && chosen.contains(&t.1))
            .cloned()
            .collect();
        want.sort_by(|a, b| (&a.1, &a.2).cmp(&(&b.1, &b.2)));
        want.dedup();
        let got: Vec<(String, String, String)> = kg
            .extract_triples(&e, &rels)
            .into_iter()
            .map(|t| {
                (
                    t.head.to_string(),
                    t.relation.to_string(),
                    t.tail.to_string(),
                )
            })
            .collect();
        ensure(got == want, || {
            format!("triples of {head} over {chosen:?}: {got:?} != {want:?}")
        })?;
    }
    Ok(())
}

const CELLS: [&str; 10] = [
    "1896",
    "Athens",
    "a, b",
    "(x)",
    "x;y",
    "back\\slash",
    "",
    "42",
    "Paris",
    "-3.5",
];

pub fn random_table(rng: &mut StdRng) -> (Vec<String>, Vec<Vec<String>>) {
    let n_cols = rng.random_range(1..=6);
    let n_rows = rng.random_range(0..=15);
    let columns = (0..n_cols).map(|c| format!("col {c}")).collect();
    let rows = (0..n_rows)
        .map(|_| {
            (0..n_cols)
                .map(|_| CELLS[rng.random_range(0..CELLS.len())].to_string())
                .collect()
        })
        .collect();
    (columns, rows)
}

fn random_indices(rng: &mut StdRng, len: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let n = rng.random_range(0..=len + 2);
    (0..n).map(|_| rng.random_range(0..len)).collect()
}

/// Compares the table interfaces (and row linearization) with positional indexing.
pub fn check_table(rng: &mut StdRng) -> Result<(), String> {
    let (columns, rows) = random_table(rng);
    let table =
        Table::new(Some("t".into()), columns.clone(), rows.clone()).map_err(|e| e.to_string())?;
    ensure(table.extract_column_names() == columns, || {
        "column names differ".into()
    })?;

    let cols = random_indices(rng, columns.len());
    let row_sel = random_indices(rng, rows.len());
    let uniq = |v: &[usize]| {
        v.iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect::<Vec<_>>()
    };
    let (ucols, urows) = (uniq(&cols), uniq(&row_sel));

    let whole = table.extract_columns(&cols).map_err(|e| e.to_string())?;
    let want_cols: Vec<String> = ucols.iter().map(|&c| columns[c].clone()).collect();
    ensure(whole.columns == want_cols, || {
        "extract_columns header".into()
    })?;
    for (r, row) in rows.iter().enumerate() {
        let got: Vec<&str> = whole.rows[r].iter().map(|c| c.raw.as_str()).collect();
        let want: Vec<&str> = ucols.iter().map(|&c| row[c].as_str()).collect();
        ensure(got == want, || format!("extract_columns row {r}"))?;
    }

    let sub = table
        .extract_subtable(&cols, &row_sel)
        .map_err(|e| e.to_string())?;
    ensure(
        sub.origin_rows == urows && sub.origin_columns == ucols,
        || "subtable origins".into(),
    )?;
    let mut expected_text = Vec::new();
    for (k, &r) in urows.iter().enumerate() {
        let got: Vec<&str> = sub.rows[k].iter().map(|c| c.raw.as_str()).collect();
        let want: Vec<&str> = ucols.iter().map(|&c| rows[r][c].as_str()).collect();
        ensure(got == want, || format!("extract_subtable row {r}"))?;
        let cells: Vec<String> = ucols
            .iter()
            .map(|&c| format!("({}, {})", escape(&columns[c]), escape(&rows[r][c])))
            .collect();
        expected_text.push(format!("row {}: {}", r + 1, cells.join(", ")));
    }
    let text = linearize_rows(&sub);
    ensure(text == expected_text.join("; "), || {
        format!("linearization {text:?}")
    })?;

    ensure(
        table.extract_subtable(&[columns.len()], &[]).is_err(),
        || "column out of range accepted".into(),
    )?;
    ensure(table.extract_subtable(&[], &[rows.len()]).is_err(), || {
        "row out of range accepted".into()
    })?;
    Ok(())
}

/// Compares the two schema interfaces with a scan of the generated schema.
pub fn check_schema(rng: &mut StdRng) -> Result<(), String> {
    let refdb = RefDb::random(rng);
    let db = refdb.to_database();
    let summary = db.extract_table_and_column_names();
    ensure(summary.foreign_keys.is_none(), || {
        "names listing carries keys".into()
    })?;
    ensure(summary.tables.len() == refdb.tables.len(), || {
        "table count".into()
    })?;
    for (s, t) in summary.tables.iter().zip(&refdb.tables) {
        ensure(s.name == t.name && s.columns == t.columns, || {
            format!("schema of {}", t.name)
        })?;
    }

    let mut picks: Vec<usize> = (0..refdb.tables.len())
        .filter(|_| rng.random_bool(0.6))
        .collect();
    let names: Vec<String> = picks
        .iter()
        .map(|&i| refdb.tables[i].name.to_uppercase())
        .collect();
    picks.sort();
    let info = db
        .extract_tables_information(&names)
        .map_err(|e| e.to_string())?;
    let got: Vec<&str> = info.tables.iter().map(|t| t.name.as_str()).collect();
    let want: Vec<&str> = picks
        .iter()
        .map(|&i| refdb.tables[i].name.as_str())
        .collect();
    ensure(got == want, || {
        format!("selected tables {got:?} != {want:?}")
    })?;
    let want_fks: Vec<ForeignKey> = refdb
        .foreign_keys
        .iter()
        .filter(|(a, _, b, _)| picks.contains(a) && picks.contains(b))
        .map(|&(a, ac, b, bc)| ForeignKey {
            from_table: refdb.tables[a].name.clone(),
            from_column: refdb.tables[a].columns[ac].clone(),
            to_table: refdb.tables[b].name.clone(),
            to_column: refdb.tables[b].columns[bc].clone(),
        })
        .collect();
    ensure(info.foreign_keys.as_deref() == Some(&want_fks[..]), || {
        "foreign keys".into()
    })?;
    ensure(db.extract_tables_information(&["missing"]).is_err(), || {
        "unknown table accepted".into()
    })?;
    Ok(())
}
