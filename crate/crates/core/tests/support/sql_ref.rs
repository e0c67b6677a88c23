//! Randomized queries over randomized databases, evaluated by a
//! straightforward nested-loop interpreter that never touches the engine's
//! parser or planner.

use std::cmp::Ordering;

use rand::rngs::StdRng;
use rand::Rng;
use structreason::db::{Database, ForeignKey};
use structreason::table::Table;

const VALUES: [&str; 14] = [
    "0", "1", "2", "3", "5", "7", "10", "2.5", "-1", "a", "b", "ab", "B", "abc",
];
const COLUMNS: [&str; 4] = ["k", "v", "w", "z"];
const LIKE_PATTERNS: [&str; 6] = ["a%", "%b", "_", "%a%", "A%", "a_c"];

#[derive(Debug, Clone)]
pub struct RefTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct RefDb {
    pub tables: Vec<RefTable>,
    pub foreign_keys: Vec<(usize, usize, usize, usize)>,
}

impl RefDb {
    pub fn random(rng: &mut StdRng) -> Self {
        let n_tables = rng.random_range(1..=3);
        let tables = (0..n_tables)
            .map(|t| {
                let n_cols = rng.random_range(2..=COLUMNS.len());
                let n_rows = rng.random_range(0..=20);
                RefTable {
                    name: format!("t{t}"),
                    columns: COLUMNS[..n_cols].iter().map(|c| c.to_string()).collect(),
                    rows: (0..n_rows)
                        .map(|_| {
                            (0..n_cols)
                                .map(|_| VALUES[rng.random_range(0..VALUES.len())].to_string())
                                .collect()
                        })
                        .collect(),
                }
            })
            .collect::<Vec<_>>();
        let foreign_keys = (1..tables.len())
            .map(|t| (t, 0, rng.random_range(0..t), 0))
            .collect();
        RefDb {
            tables,
            foreign_keys,
        }
    }

    pub fn to_database(&self) -> Database {
        let tables = self
            .tables
            .iter()
            .map(|t| Table::new(Some(t.name.clone()), t.columns.clone(), t.rows.clone()).unwrap())
            .collect();
        let fks = self
            .foreign_keys
            .iter()
            .map(|&(a, ac, b, bc)| ForeignKey {
                from_table: self.tables[a].name.clone(),
                from_column: self.tables[a].columns[ac].clone(),
                to_table: self.tables[b].name.clone(),
                to_column: self.tables[b].columns[bc].clone(),
            })
            .collect();
        Database::new("random".into(), tables, fks).unwrap()
    }
}

/// `(scope position, column index)`
pub type Col = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Op {
    fn sql(self) -> &'static str {
        match self {
            Op::Eq => "=",
            Op::Ne => "!=",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
        }
    }

    fn holds(self, o: Ordering) -> bool {
        match self {
            Op::Eq => o == Ordering::Equal,
            Op::Ne => o != Ordering::Equal,
            Op::Lt => o == Ordering::Less,
            Op::Le => o != Ordering::Greater,
            Op::Gt => o == Ordering::Greater,
            Op::Ge => o != Ordering::Less,
        }
    }
}

const OPS: [Op; 6] = [Op::Eq, Op::Ne, Op::Lt, Op::Le, Op::Gt, Op::Ge];

#[derive(Debug, Clone)]
pub enum Operand {
    Col(Col),
    Lit(String),
}

#[derive(Debug, Clone)]
pub enum Cond {
    Cmp(Operand, Op, Operand),
    Like(Col, String),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
    Not(Box<Cond>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Agg {
    CountStar,
    Count(Col),
    Sum(Col),
    Avg(Col),
    Min(Col),
    Max(Col),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Item {
    Col(Col),
    Agg(Agg),
}

#[derive(Debug, Clone)]
pub struct RefQuery {
    /// Table index per scope position.
    pub scope: Vec<usize>,
    /// Join condition for scope position `k + 1`.
    pub joins: Vec<(Col, Col)>,
    pub filter: Option<Cond>,
    pub group_by: Vec<Col>,
    pub items: Vec<Item>,
    pub having: Option<(Agg, Op, String)>,
    pub order_by: Vec<(Item, bool)>,
    pub distinct: bool,
    pub limit: Option<usize>,
}

fn numeric(s: &str) -> Option<f64> {
    let body = s.strip_prefix('-').unwrap_or(s);
    let mut parts = body.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    let all_digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    let ok = all_digits(int) && frac.is_none_or(all_digits);
    if ok {
        s.parse().ok()
    } else {
        None
    }
}

fn compare(a: &str, b: &str) -> Ordering {
    match (numeric(a), numeric(b)) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap(),
        _ => a.as_bytes().cmp(b.as_bytes()),
    }
}

fn sort_order(a: &str, b: &str) -> Ordering {
    match (numeric(a), numeric(b)) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap(),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.as_bytes().cmp(b.as_bytes()),
    }
}

fn like(text: &str, pattern: &str) -> bool {
    fn go(t: &[u8], p: &[u8]) -> bool {
        match p.split_first() {
            None => t.is_empty(),
            Some((b'%', rest)) => (0..=t.len()).any(|i| go(&t[i..], rest)),
            Some((b'_', rest)) => !t.is_empty() && go(&t[1..], rest),
            Some((c, rest)) => {
                t.first().is_some_and(|x| x.eq_ignore_ascii_case(c)) && go(&t[1..], rest)
            }
        }
    }
    go(text.as_bytes(), pattern.as_bytes())
}

/// Identity of a value for grouping and DISTINCT.
fn identity(v: &str) -> String {
    match numeric(v) {
        Some(x) => format!("n{}", if x == 0.0 { 0.0 } else { x }),
        None => format!("t{v}"),
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

impl RefQuery {
    pub fn random(db: &RefDb, rng: &mut StdRng) -> Self {
        let n = db.tables.len();
        let scope_len = rng.random_range(1..=n);
        let mut scope: Vec<usize> = (0..n).collect();
        for i in (1..scope.len()).rev() {
            scope.swap(i, rng.random_range(0..=i));
        }
        scope.truncate(scope_len);
        let width = |pos: usize| db.tables[scope[pos]].columns.len();
        let pick_col = |rng: &mut StdRng, upto: usize| {
            let pos = rng.random_range(0..upto);
            (pos, rng.random_range(0..width(pos)))
        };
        let joins = (1..scope_len)
            .map(|new| {
                let left = pick_col(rng, new);
                let right = (new, rng.random_range(0..width(new)));
                if rng.random_bool(0.5) {
                    (left, right)
                } else {
                    (right, left)
                }
            })
            .collect();

        fn cond(rng: &mut StdRng, depth: u32, pick: &dyn Fn(&mut StdRng) -> Col) -> Cond {
            if depth > 0 && rng.random_bool(0.35) {
                let a = Box::new(cond(rng, depth - 1, pick));
                return match rng.random_range(0..3) {
                    0 => Cond::And(a, Box::new(cond(rng, depth - 1, pick))),
                    1 => Cond::Or(a, Box::new(cond(rng, depth - 1, pick))),
                    _ => Cond::Not(a),
                };
            }
            let op = OPS[rng.random_range(0..OPS.len())];
            match rng.random_range(0..5) {
                0 => Cond::Cmp(Operand::Col(pick(rng)), op, Operand::Col(pick(rng))),
                1 => Cond::Like(
                    pick(rng),
                    LIKE_PATTERNS[rng.random_range(0..LIKE_PATTERNS.len())].to_string(),
                ),
                2 => Cond::Cmp(
                    Operand::Lit(VALUES[rng.random_range(0..VALUES.len())].into()),
                    op,
                    Operand::Col(pick(rng)),
                ),
                _ => Cond::Cmp(
                    Operand::Col(pick(rng)),
                    op,
                    Operand::Lit(VALUES[rng.random_range(0..VALUES.len())].into()),
                ),
            }
        }
        let any_col = |rng: &mut StdRng| pick_col(rng, scope_len);
        let filter = rng.random_bool(0.6).then(|| cond(rng, 2, &any_col));

        let random_agg = |rng: &mut StdRng| {
            let c = any_col(rng);
            match rng.random_range(0..6) {
                0 => Agg::CountStar,
                1 => Agg::Count(c),
                2 => Agg::Sum(c),
                3 => Agg::Avg(c),
                4 => Agg::Min(c),
                _ => Agg::Max(c),
            }
        };

        let mut q = RefQuery {
            scope: scope.clone(),
            joins,
            filter,
            group_by: Vec::new(),
            items: Vec::new(),
            having: None,
            order_by: Vec::new(),
            distinct: false,
            limit: None,
        };
        match rng.random_range(0..3) {
            0 => {
                let n_items = rng.random_range(1..=3);
                q.items = (0..n_items).map(|_| Item::Col(any_col(rng))).collect();
                q.distinct = rng.random_bool(0.3);
                let n_keys = rng.random_range(0..=2);
                q.order_by = (0..n_keys)
                    .map(|_| {
                        let key = if q.distinct {
                            q.items[rng.random_range(0..q.items.len())]
                        } else {
                            Item::Col(any_col(rng))
                        };
                        (key, rng.random_bool(0.5))
                    })
                    .collect();
            }
            1 => {
                let g = any_col(rng);
                q.group_by = vec![g];
                if rng.random_bool(0.3) {
                    let g2 = any_col(rng);
                    if g2 != g {
                        q.group_by.push(g2);
                    }
                }
                q.items = vec![Item::Col(g), Item::Agg(random_agg(rng))];
                if rng.random_bool(0.5) {
                    q.items.push(Item::Agg(random_agg(rng)));
                }
                if rng.random_bool(0.4) {
                    let op = OPS[rng.random_range(0..OPS.len())];
                    q.having = Some((random_agg(rng), op, rng.random_range(0..4).to_string()));
                }
                if rng.random_bool(0.7) {
                    let key = if rng.random_bool(0.5) {
                        Item::Agg(random_agg(rng))
                    } else {
                        Item::Col(g)
                    };
                    q.order_by = vec![(key, rng.random_bool(0.5))];
                }
            }
            _ => {
                let n_items = rng.random_range(1..=3);
                q.items = (0..n_items).map(|_| Item::Agg(random_agg(rng))).collect();
            }
        }
        if rng.random_bool(0.3) {
            q.limit = Some(rng.random_range(0..6));
        }
        q
    }

    fn col_sql(&self, (pos, i): Col, db: &RefDb) -> String {
        format!("T{pos}.{}", db.tables[self.scope[pos]].columns[i])
    }

    fn lit_sql(v: &str) -> String {
        if numeric(v).is_some() {
            v.to_string()
        } else {
            format!("'{v}'")
        }
    }

    fn agg_sql(&self, a: Agg, db: &RefDb) -> String {
        match a {
            Agg::CountStar => "COUNT(*)".into(),
            Agg::Count(c) => format!("COUNT({})", self.col_sql(c, db)),
            Agg::Sum(c) => format!("SUM({})", self.col_sql(c, db)),
            Agg::Avg(c) => format!("AVG({})", self.col_sql(c, db)),
            Agg::Min(c) => format!("MIN({})", self.col_sql(c, db)),
            Agg::Max(c) => format!("MAX({})", self.col_sql(c, db)),
        }
    }

    fn item_sql(&self, it: Item, db: &RefDb) -> String {
        match it {
            Item::Col(c) => self.col_sql(c, db),
            Item::Agg(a) => self.agg_sql(a, db),
        }
    }

    fn cond_sql(&self, c: &Cond, db: &RefDb) -> String {
        let operand = |o: &Operand| match o {
            Operand::Col(c) => self.col_sql(*c, db),
            Operand::Lit(v) => Self::lit_sql(v),
        };
        match c {
            Cond::Cmp(a, op, b) => format!("{} {} {}", operand(a), op.sql(), operand(b)),
            Cond::Like(c, p) => format!("{} LIKE '{p}'", self.col_sql(*c, db)),
            Cond::And(a, b) => format!("({} AND {})", self.cond_sql(a, db), self.cond_sql(b, db)),
            Cond::Or(a, b) => format!("({} OR {})", self.cond_sql(a, db), self.cond_sql(b, db)),
            Cond::Not(a) => format!("NOT ({})", self.cond_sql(a, db)),
        }
    }

    pub fn to_sql(&self, db: &RefDb) -> String {
        let mut s = String::from("SELECT ");
        if self.distinct {
            s.push_str("DISTINCT ");
        }
        let items: Vec<String> = self.items.iter().map(|&i| self.item_sql(i, db)).collect();
        s.push_str(&items.join(", "));
        s.push_str(&format!(" FROM {} AS T0", db.tables[self.scope[0]].name));
        for (k, &(l, r)) in self.joins.iter().enumerate() {
            let pos = k + 1;
            s.push_str(&format!(
                " JOIN {} AS T{pos} ON {} = {}",
                db.tables[self.scope[pos]].name,
                self.col_sql(l, db),
                self.col_sql(r, db)
            ));
        }
        if let Some(f) = &self.filter {
            s.push_str(&format!(" WHERE {}", self.cond_sql(f, db)));
        }
        if !self.group_by.is_empty() {
            let g: Vec<String> = self.group_by.iter().map(|&c| self.col_sql(c, db)).collect();
            s.push_str(&format!(" GROUP BY {}", g.join(", ")));
        }
        if let Some((a, op, v)) = &self.having {
            s.push_str(&format!(
                " HAVING {} {} {}",
                self.agg_sql(*a, db),
                op.sql(),
                v
            ));
        }
        if !self.order_by.is_empty() {
            let o: Vec<String> = self
                .order_by
                .iter()
                .map(|&(it, desc)| {
                    format!(
                        "{} {}",
                        self.item_sql(it, db),
                        if desc { "DESC" } else { "ASC" }
                    )
                })
                .collect();
            s.push_str(&format!(" ORDER BY {}", o.join(", ")));
        }
        if let Some(n) = self.limit {
            s.push_str(&format!(" LIMIT {n}"));
        }
        s
    }

    /// Nested-loop evaluation. Returns the result rows as text.
    pub fn evaluate(&self, db: &RefDb) -> Vec<Vec<String>> {
        let tables: Vec<&RefTable> = self.scope.iter().map(|&t| &db.tables[t]).collect();
        let get = |tuple: &[usize], (pos, i): Col| tables[pos].rows[tuple[pos]][i].clone();

        let mut tuples: Vec<Vec<usize>> = vec![vec![]];
        for (pos, table) in tables.iter().enumerate() {
            let mut next = Vec::new();
            for t in &tuples {
                for r in 0..table.rows.len() {
                    let mut nt = t.clone();
                    nt.push(r);
                    let ok = pos == 0 || {
                        let (l, rr) = self.joins[pos - 1];
                        compare(&get(&nt, l), &get(&nt, rr)) == Ordering::Equal
                    };
                    if ok {
                        next.push(nt);
                    }
                }
            }
            tuples = next;
        }

        fn test(c: &Cond, t: &[usize], get: &dyn Fn(&[usize], Col) -> String) -> bool {
            let val = |o: &Operand| match o {
                Operand::Col(c) => get(t, *c),
                Operand::Lit(v) => v.clone(),
            };
            match c {
                Cond::Cmp(a, op, b) => op.holds(compare(&val(a), &val(b))),
                Cond::Like(col, p) => like(&get(t, *col), p),
                Cond::And(a, b) => test(a, t, get) && test(b, t, get),
                Cond::Or(a, b) => test(a, t, get) || test(b, t, get),
                Cond::Not(a) => !test(a, t, get),
            }
        }
        if let Some(f) = &self.filter {
            tuples.retain(|t| test(f, t, &get));
        }

        let agg = |a: Agg, rows: &[Vec<usize>]| -> String {
            let values = |c: Col| rows.iter().map(|t| get(t, c)).collect::<Vec<_>>();
            match a {
                Agg::CountStar => rows.len().to_string(),
                Agg::Count(c) => values(c).len().to_string(),
                Agg::Sum(c) | Agg::Avg(c) => {
                    let nums: Vec<f64> = values(c).iter().filter_map(|v| numeric(v)).collect();
                    if nums.is_empty() {
                        return String::new();
                    }
                    let sum: f64 = nums.iter().sum();
                    if matches!(a, Agg::Sum(_)) {
                        fmt_num(sum)
                    } else {
                        fmt_num(sum / nums.len() as f64)
                    }
                }
                Agg::Min(c) => values(c)
                    .into_iter()
                    .min_by(|x, y| sort_order(x, y))
                    .unwrap_or_default(),
                Agg::Max(c) => values(c)
                    .into_iter()
                    .max_by(|x, y| sort_order(x, y))
                    .unwrap_or_default(),
            }
        };

        let grouped =
            !self.group_by.is_empty() || self.items.iter().any(|i| matches!(i, Item::Agg(_)));
        let groups: Vec<Vec<Vec<usize>>> = if grouped {
            let mut keys: Vec<Vec<String>> = Vec::new();
            let mut groups: Vec<Vec<Vec<usize>>> = Vec::new();
            for t in tuples {
                let key: Vec<String> = self
                    .group_by
                    .iter()
                    .map(|&c| identity(&get(&t, c)))
                    .collect();
                match keys.iter().position(|k| *k == key) {
                    Some(i) => groups[i].push(t),
                    None => {
                        keys.push(key);
                        groups.push(vec![t]);
                    }
                }
            }
            if groups.is_empty() && self.group_by.is_empty() {
                groups.push(Vec::new());
            }
            groups
        } else {
            tuples.into_iter().map(|t| vec![t]).collect()
        };

        let eval_item = |it: Item, g: &[Vec<usize>]| match it {
            Item::Col(c) => g.first().map(|t| get(t, c)).unwrap_or_default(),
            Item::Agg(a) => agg(a, g),
        };

        let mut rows: Vec<(Vec<String>, Vec<String>)> = Vec::new();
        for g in &groups {
            if let Some((a, op, v)) = &self.having {
                if !op.holds(compare(&agg(*a, g), v)) {
                    continue;
                }
            }
            let projected = self.items.iter().map(|&i| eval_item(i, g)).collect();
            let keys = self
                .order_by
                .iter()
                .map(|&(i, _)| eval_item(i, g))
                .collect();
            rows.push((projected, keys));
        }
        rows.sort_by(|a, b| {
            for (k, &(_, desc)) in self.order_by.iter().enumerate() {
                let o = sort_order(&a.1[k], &b.1[k]);
                let o = if desc { o.reverse() } else { o };
                if o != Ordering::Equal {
                    return o;
                }
            }
            Ordering::Equal
        });
        let mut out: Vec<Vec<String>> = rows.into_iter().map(|(p, _)| p).collect();
        if self.distinct {
            let mut seen: Vec<Vec<String>> = Vec::new();
            out.retain(|r| {
                let id: Vec<String> = r.iter().map(|v| identity(v)).collect();
                if seen.contains(&id) {
                    false
                } else {
                    seen.push(id);
                    true
                }
            });
        }
        if let Some(n) = self.limit {
            out.truncate(n);
        }
        out
    }
}

/// Cell text normalized so that formatting differences of equal numbers vanish.
pub fn canonical(v: &str) -> String {
    match numeric(v) {
        Some(x) => format!("{:.6}", if x == 0.0 { 0.0 } else { x }),
        None => v.to_string(),
    }
}

pub fn canonical_rows(rows: &[Vec<String>]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| r.iter().map(|v| canonical(v)).collect())
        .collect()
}
