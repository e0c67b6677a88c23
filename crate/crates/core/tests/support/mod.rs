#![allow(dead_code)]

pub mod cases;
pub mod interfaces;
pub mod sql_ref;

use rand::rngs::StdRng;
use structreason::sql::execute_sql;

/// Generates one database and query, runs both evaluators and compares.
pub fn check_random_query(rng: &mut StdRng) -> Result<(), String> {
    let db = sql_ref::RefDb::random(rng);
    let query = sql_ref::RefQuery::random(&db, rng);
    let sql = query.to_sql(&db);
    let expected = sql_ref::canonical_rows(&query.evaluate(&db));
    let result =
        execute_sql(&db.to_database(), &sql).map_err(|e| format!("{sql}\n  engine error: {e}"))?;
    let raw: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| r.iter().map(|c| c.raw.clone()).collect())
        .collect();
    let got = sql_ref::canonical_rows(&raw);
    if got != expected {
        return Err(format!(
            "{sql}\n  engine:    {got:?}\n  reference: {expected:?}\n  db: {db:?}"
        ));
    }
    Ok(())
}
