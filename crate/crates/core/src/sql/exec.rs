use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use super::ast::*;
use super::{compare_values, like_match, total_order, value_key, ResultSet, SqlError, ValueKey};
use crate::db::Database;
use crate::table::{CellValue, Table};

type Col = (usize, usize);
type Tuple = Vec<usize>;

struct ScopeEntry<'a> {
    table: &'a Table,
    label: String,
}

#[derive(Debug, Clone)]
enum RScalar {
    Col(Col),
    Lit(CellValue),
    Agg {
        func: AggFunc,
        distinct: bool,
        arg: Option<Col>,
        text: String,
    },
    Output(usize),
}

#[derive(Debug, Clone)]
enum RExpr {
    Cmp(RScalar, CmpOp, RScalar),
    And(Box<RExpr>, Box<RExpr>),
    Or(Box<RExpr>, Box<RExpr>),
    Not(Box<RExpr>),
}

struct Plan<'a> {
    scope: Vec<ScopeEntry<'a>>,
    joins: Vec<(Col, Col)>,
    filter: Option<RExpr>,
    grouped: bool,
    group_by: Vec<Col>,
    having: Option<RExpr>,
    projection: Vec<RScalar>,
    columns: Vec<String>,
    order_by: Vec<(RScalar, bool)>,
    distinct: bool,
    limit: Option<u64>,
}

fn analysis<T>(msg: impl Into<String>) -> Result<T, SqlError> {
    Err(SqlError::Analysis(msg.into()))
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

impl<'a> Plan<'a> {
    fn resolve(&self, c: &ColumnRef) -> Result<Col, SqlError> {
        let want = fold(&c.column);
        match &c.qualifier {
            Some(q) => {
                let q = fold(q);
                let Some(pos) = self.scope.iter().position(|e| fold(&e.label) == q) else {
                    return analysis(format!(
                        "unknown table or alias `{}` in `{c}`",
                        c.qualifier.as_deref().unwrap_or_default()
                    ));
                };
                match self.scope[pos]
                    .table
                    .columns()
                    .iter()
                    .position(|n| fold(n) == want)
                {
                    Some(i) => Ok((pos, i)),
                    None => analysis(format!(
                        "no column `{}` in `{}`",
                        c.column, self.scope[pos].label
                    )),
                }
            }
            None => {
                let hits: Vec<Col> = self
                    .scope
                    .iter()
                    .enumerate()
                    .filter_map(|(pos, e)| {
                        e.table
                            .columns()
                            .iter()
                            .position(|n| fold(n) == want)
                            .map(|i| (pos, i))
                    })
                    .collect();
                match hits.as_slice() {
                    [one] => Ok(*one),
                    [] => analysis(format!("unknown column `{}`", c.column)),
                    _ => analysis(format!("ambiguous column `{}`", c.column)),
                }
            }
        }
    }

    fn scalar(&self, s: &Scalar) -> Result<RScalar, SqlError> {
        Ok(match s {
            Scalar::Column(c) => RScalar::Col(self.resolve(c)?),
            Scalar::Literal(Literal::Number(n)) => RScalar::Lit(CellValue::new(n.clone())),
            Scalar::Literal(Literal::Text(t)) => RScalar::Lit(CellValue::new(t.clone())),
            Scalar::Aggregate {
                func,
                distinct,
                arg,
            } => RScalar::Agg {
                func: *func,
                distinct: *distinct,
                arg: match arg {
                    AggArg::Star => None,
                    AggArg::Column(c) => Some(self.resolve(c)?),
                },
                text: s.to_string(),
            },
        })
    }

    fn expr(&self, e: &Expr) -> Result<RExpr, SqlError> {
        Ok(match e {
            Expr::Compare { left, op, right } => {
                RExpr::Cmp(self.scalar(left)?, *op, self.scalar(right)?)
            }
            Expr::And(a, b) => RExpr::And(Box::new(self.expr(a)?), Box::new(self.expr(b)?)),
            Expr::Or(a, b) => RExpr::Or(Box::new(self.expr(a)?), Box::new(self.expr(b)?)),
            Expr::Not(a) => RExpr::Not(Box::new(self.expr(a)?)),
        })
    }

    fn check_grouped(&self, s: &RScalar, clause: &str) -> Result<(), SqlError> {
        if let RScalar::Col(c) = s {
            if !self.group_by.contains(c) {
                let (pos, i) = *c;
                return analysis(format!(
                    "column `{}.{}` in {clause} must appear in GROUP BY or inside an aggregate",
                    self.scope[pos].label,
                    self.scope[pos].table.columns()[i]
                ));
            }
        }
        Ok(())
    }
}

fn visit_rexpr<'e>(e: &'e RExpr, f: &mut impl FnMut(&'e RScalar)) {
    match e {
        RExpr::Cmp(a, _, b) => {
            f(a);
            f(b);
        }
        RExpr::And(a, b) | RExpr::Or(a, b) => {
            visit_rexpr(a, f);
            visit_rexpr(b, f);
        }
        RExpr::Not(a) => visit_rexpr(a, f),
    }
}

fn plan<'a>(db: &'a Database, q: &SqlQuery) -> Result<Plan<'a>, SqlError> {
    let mut p = Plan {
        scope: Vec::new(),
        joins: Vec::new(),
        filter: None,
        grouped: false,
        group_by: Vec::new(),
        having: None,
        projection: Vec::new(),
        columns: Vec::new(),
        order_by: Vec::new(),
        distinct: q.distinct,
        limit: q.limit,
    };
    for tr in std::iter::once(&q.from).chain(q.joins.iter().map(|j| &j.table)) {
        let Some(table) = db.table(&tr.name) else {
            return analysis(format!(
                "unknown table `{}` (valid tables: {})",
                tr.name,
                db.table_names().join(", ")
            ));
        };
        let label = tr
            .alias
            .clone()
            .unwrap_or_else(|| table.name.clone().unwrap_or_default());
        if p.scope.iter().any(|e| fold(&e.label) == fold(&label)) {
            return analysis(format!("duplicate table reference `{label}`; use an alias"));
        }
        p.scope.push(ScopeEntry { table, label });
    }
    for j in &q.joins {
        let l = p.resolve(&j.left)?;
        let r = p.resolve(&j.right)?;
        p.joins.push((l, r));
    }
    // Join conditions may only look at tables already joined.
    for (k, &(l, r)) in p.joins.iter().enumerate() {
        if l.0 > k + 1 || r.0 > k + 1 {
            return analysis(format!(
                "join condition #{} references a table joined later",
                k + 1
            ));
        }
    }
    if let Some(w) = &q.filter {
        if w.has_aggregate() {
            return analysis("aggregate functions are not allowed in WHERE");
        }
        p.filter = Some(p.expr(w)?);
    }
    for g in &q.group_by {
        let c = p.resolve(g)?;
        if !p.group_by.contains(&c) {
            p.group_by.push(c);
        }
    }
    let mut item_start = Vec::with_capacity(q.select.len());
    for item in &q.select {
        item_start.push(p.projection.len());
        match item {
            SelectItem::Wildcard => {
                for (pos, e) in p.scope.iter().enumerate() {
                    for (i, name) in e.table.columns().iter().enumerate() {
                        p.projection.push(RScalar::Col((pos, i)));
                        p.columns.push(name.clone());
                    }
                }
            }
            SelectItem::Value { value, alias } => {
                p.projection.push(p.scalar(value)?);
                p.columns.push(match (alias, value) {
                    (Some(a), _) => a.clone(),
                    (None, Scalar::Column(c)) => c.column.clone(),
                    (None, other) => other.to_string(),
                });
            }
        }
    }
    for o in &q.order_by {
        let alias_hit = match &o.key {
            Scalar::Column(ColumnRef {
                qualifier: None,
                column,
            }) => q.select.iter().enumerate().find_map(|(i, it)| match it {
                SelectItem::Value { alias: Some(a), .. } if fold(a) == fold(column) => Some(i),
                _ => None,
            }),
            _ => None,
        };
        let key = match alias_hit {
            Some(i) => RScalar::Output(item_start[i]),
            None => p.scalar(&o.key)?,
        };
        p.order_by.push((key, o.descending));
    }
    if let Some(h) = &q.having {
        p.having = Some(p.expr(h)?);
    }
    let any_agg = p
        .projection
        .iter()
        .any(|s| matches!(s, RScalar::Agg { .. }))
        || p.order_by
            .iter()
            .any(|(s, _)| matches!(s, RScalar::Agg { .. }))
        || p.having.is_some();
    p.grouped = !p.group_by.is_empty() || any_agg;
    if q.having.is_some()
        && q.group_by.is_empty()
        && !q.having.as_ref().is_some_and(Expr::has_aggregate)
    {
        return analysis("HAVING requires GROUP BY or an aggregate");
    }
    if p.grouped {
        if q.select.iter().any(|i| matches!(i, SelectItem::Wildcard)) {
            return analysis("`*` cannot be selected in an aggregate query");
        }
        for s in &p.projection {
            p.check_grouped(s, "SELECT")?;
        }
        for (s, _) in &p.order_by {
            p.check_grouped(s, "ORDER BY")?;
        }
        if let Some(h) = &p.having {
            let mut err = Ok(());
            visit_rexpr(h, &mut |s| {
                if err.is_ok() {
                    err = p.check_grouped(s, "HAVING");
                }
            });
            err?;
        }
    }
    Ok(p)
}

enum Record {
    Row(Tuple),
    Group(Vec<Tuple>),
}

struct Runner<'p, 'a> {
    plan: &'p Plan<'a>,
    warnings: BTreeSet<String>,
}

impl Runner<'_, '_> {
    fn cell(&self, tuple: &Tuple, (pos, i): Col) -> CellValue {
        self.plan.scope[pos].table.rows()[tuple[pos]][i].clone()
    }

    fn eval(&mut self, s: &RScalar, rec: &Record, projected: Option<&[CellValue]>) -> CellValue {
        match s {
            RScalar::Lit(v) => v.clone(),
            RScalar::Output(i) => projected
                .map(|p| p[*i].clone())
                .unwrap_or_else(|| CellValue::new("")),
            RScalar::Col(c) => match rec {
                Record::Row(t) => self.cell(t, *c),
                Record::Group(g) => g
                    .first()
                    .map(|t| self.cell(t, *c))
                    .unwrap_or_else(|| CellValue::new("")),
            },
            RScalar::Agg {
                func,
                distinct,
                arg,
                text,
            } => {
                let rows: &[Tuple] = match rec {
                    Record::Group(g) => g,
                    Record::Row(t) => std::slice::from_ref(t),
                };
                self.aggregate(*func, *distinct, *arg, text, rows)
            }
        }
    }

    fn aggregate(
        &mut self,
        func: AggFunc,
        distinct: bool,
        arg: Option<Col>,
        text: &str,
        rows: &[Tuple],
    ) -> CellValue {
        let Some(col) = arg else {
            return CellValue::from_number(rows.len() as f64);
        };
        let mut values: Vec<CellValue> = rows.iter().map(|t| self.cell(t, col)).collect();
        if distinct {
            let mut seen = std::collections::HashSet::new();
            values.retain(|v| seen.insert(value_key(v)));
        }
        match func {
            AggFunc::Count => CellValue::from_number(values.len() as f64),
            AggFunc::Sum | AggFunc::Avg => {
                let nums: Vec<f64> = values.iter().filter_map(|v| v.numeric).collect();
                let skipped = values.len() - nums.len();
                if skipped > 0 {
                    self.warnings
                        .insert(format!("{text}: skipped {skipped} non-numeric value(s)"));
                }
                if nums.is_empty() {
                    return CellValue::new("");
                }
                let sum: f64 = nums.iter().sum();
                if func == AggFunc::Sum {
                    CellValue::from_number(sum)
                } else {
                    CellValue::from_number(sum / nums.len() as f64)
                }
            }
            AggFunc::Min => values
                .into_iter()
                .min_by(total_order)
                .unwrap_or_else(|| CellValue::new("")),
            AggFunc::Max => values
                .into_iter()
                .max_by(total_order)
                .unwrap_or_else(|| CellValue::new("")),
        }
    }

    fn test(&mut self, e: &RExpr, rec: &Record) -> bool {
        match e {
            RExpr::Cmp(a, op, b) => {
                let l = self.eval(a, rec, None);
                let r = self.eval(b, rec, None);
                if *op == CmpOp::Like {
                    return like_match(&l.raw, &r.raw);
                }
                let ord = compare_values(&l, &r);
                match op {
                    CmpOp::Eq => ord == Ordering::Equal,
                    CmpOp::Ne => ord != Ordering::Equal,
                    CmpOp::Lt => ord == Ordering::Less,
                    CmpOp::Le => ord != Ordering::Greater,
                    CmpOp::Gt => ord == Ordering::Greater,
                    CmpOp::Ge => ord != Ordering::Less,
                    CmpOp::Like => unreachable!(),
                }
            }
            RExpr::And(a, b) => self.test(a, rec) && self.test(b, rec),
            RExpr::Or(a, b) => self.test(a, rec) || self.test(b, rec),
            RExpr::Not(a) => !self.test(a, rec),
        }
    }
}

/// Equality key consistent with `=`: numeric cells by value, others by text.
#[derive(PartialEq, Eq, Hash)]
enum JoinKey {
    Num(u64),
    Text(String),
}

fn join_key(v: &CellValue) -> JoinKey {
    match v.numeric {
        Some(x) => JoinKey::Num(if x == 0.0 { 0 } else { x.to_bits() }),
        None => JoinKey::Text(v.raw.clone()),
    }
}

pub(super) fn run(db: &Database, q: &SqlQuery) -> Result<ResultSet, SqlError> {
    let plan = plan(db, q)?;
    let mut runner = Runner {
        plan: &plan,
        warnings: BTreeSet::new(),
    };

    let mut tuples: Vec<Tuple> = (0..plan.scope[0].table.row_count())
        .map(|r| vec![r])
        .collect();
    for (k, &(l, r)) in plan.joins.iter().enumerate() {
        let new_pos = k + 1;
        let right = plan.scope[new_pos].table;
        let (probe, build) = match (l.0 == new_pos, r.0 == new_pos) {
            (false, true) => (Some(l), r),
            (true, false) => (Some(r), l),
            _ => (None, l),
        };
        let mut next = Vec::new();
        match probe {
            Some(probe) => {
                let mut index: HashMap<JoinKey, Vec<usize>> = HashMap::new();
                for (ri, row) in right.rows().iter().enumerate() {
                    index.entry(join_key(&row[build.1])).or_default().push(ri);
                }
                for t in &tuples {
                    let key = join_key(&runner.cell(t, probe));
                    if let Some(matches) = index.get(&key) {
                        for &ri in matches {
                            let mut nt = t.clone();
                            nt.push(ri);
                            next.push(nt);
                        }
                    }
                }
            }
            None => {
                // Both sides in the same table: filter the cross product.
                for t in &tuples {
                    for ri in 0..right.row_count() {
                        let mut nt = t.clone();
                        nt.push(ri);
                        if compare_values(&runner.cell(&nt, l), &runner.cell(&nt, r))
                            == Ordering::Equal
                        {
                            next.push(nt);
                        }
                    }
                }
            }
        }
        tuples = next;
    }

    if let Some(f) = &plan.filter {
        tuples.retain(|t| {
            let rec = Record::Row(t.clone());
            runner.test(f, &rec)
        });
    }

    let mut records: Vec<Record> = if plan.grouped {
        let mut order: Vec<Vec<ValueKey>> = Vec::new();
        let mut groups: HashMap<Vec<ValueKey>, Vec<Tuple>> = HashMap::new();
        for t in tuples {
            let key: Vec<ValueKey> = plan
                .group_by
                .iter()
                .map(|&c| value_key(&runner.cell(&t, c)))
                .collect();
            let slot = groups.entry(key.clone()).or_default();
            if slot.is_empty() {
                order.push(key);
            }
            slot.push(t);
        }
        let mut recs: Vec<Record> = order
            .into_iter()
            .map(|k| Record::Group(groups.remove(&k).unwrap()))
            .collect();
        if recs.is_empty() && plan.group_by.is_empty() {
            recs.push(Record::Group(Vec::new()));
        }
        recs
    } else {
        tuples.into_iter().map(Record::Row).collect()
    };

    if let Some(h) = &plan.having {
        records.retain(|rec| runner.test(h, rec));
    }

    let mut rows: Vec<(Vec<CellValue>, Vec<CellValue>)> = Vec::with_capacity(records.len());
    for rec in &records {
        let projected: Vec<CellValue> = plan
            .projection
            .iter()
            .map(|s| runner.eval(s, rec, None))
            .collect();
        let keys: Vec<CellValue> = plan
            .order_by
            .iter()
            .map(|(s, _)| runner.eval(s, rec, Some(&projected)))
            .collect();
        rows.push((projected, keys));
    }
    if !plan.order_by.is_empty() {
        rows.sort_by(|a, b| {
            for (i, (_, desc)) in plan.order_by.iter().enumerate() {
                let o = total_order(&a.1[i], &b.1[i]);
                let o = if *desc { o.reverse() } else { o };
                if o != Ordering::Equal {
                    return o;
                }
            }
            Ordering::Equal
        });
    }
    let mut out: Vec<Vec<CellValue>> = rows.into_iter().map(|(p, _)| p).collect();
    if plan.distinct {
        let mut seen = std::collections::HashSet::new();
        out.retain(|r| seen.insert(r.iter().map(value_key).collect::<Vec<_>>()));
    }
    if let Some(n) = plan.limit {
        out.truncate(usize::try_from(n).unwrap_or(usize::MAX));
    }
    Ok(ResultSet {
        columns: plan.columns.clone(),
        rows: out,
        ordered: !plan.order_by.is_empty(),
        warnings: runner.warnings.into_iter().collect(),
    })
}
