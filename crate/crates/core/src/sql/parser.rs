use super::ast::*;
use super::SqlError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Number(String),
    Str(String),
    Comma,
    Dot,
    LParen,
    RParen,
    Star,
    Semi,
    Op(&'static str),
    Arith(char),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Quoted(w) => format!("identifier `{w}`"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Star => "`*`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Op(o) => format!("`{o}`"),
            Tok::Arith(c) => format!("`{c}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, SqlError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = src[i..].chars().next().unwrap_or_default();
        let start = i;
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if c == '-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let tok = match c {
            ',' => Tok::Comma,
            '.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => Tok::Dot,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '*' => Tok::Star,
            ';' => Tok::Semi,
            '+' | '-' | '/' | '%' => Tok::Arith(c),
            '|' if bytes.get(i + 1) == Some(&b'|') => {
                i += 1;
                Tok::Arith('|')
            }
            '=' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 1;
                }
                Tok::Op("=")
            }
            '!' if bytes.get(i + 1) == Some(&b'=') => {
                i += 1;
                Tok::Op("!=")
            }
            '<' => match bytes.get(i + 1) {
                Some(b'=') => {
                    i += 1;
                    Tok::Op("<=")
                }
                Some(b'>') => {
                    i += 1;
                    Tok::Op("!=")
                }
                _ => Tok::Op("<"),
            },
            '>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 1;
                    Tok::Op(">=")
                } else {
                    Tok::Op(">")
                }
            }
            '\'' | '"' | '`' => {
                let (text, end) = quoted(src, i, c)?;
                out.push((
                    if c == '`' {
                        Tok::Quoted(text)
                    } else {
                        Tok::Str(text)
                    },
                    start,
                ));
                i = end;
                continue;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let mut j = i;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j < bytes.len() && bytes[j] == b'.' {
                    j += 1;
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < bytes.len() && (bytes[j].is_ascii_alphabetic() || bytes[j] == b'_') {
                    return Err(SqlError::Syntax {
                        position: j,
                        message: "malformed number".into(),
                    });
                }
                out.push((Tok::Number(src[i..j].to_string()), start));
                i = j;
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < bytes.len() {
                    let ch = src[j..].chars().next().unwrap();
                    if ch.is_alphanumeric() || ch == '_' {
                        j += ch.len_utf8();
                    } else {
                        break;
                    }
                }
                out.push((Tok::Word(src[i..j].to_string()), start));
                i = j;
                continue;
            }
            other => {
                return Err(SqlError::Syntax {
                    position: i,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::Eof, src.len()));
    Ok(out)
}

fn quoted(src: &str, start: usize, q: char) -> Result<(String, usize), SqlError> {
    let mut text = String::new();
    let mut chars = src[start + 1..].char_indices().peekable();
    while let Some((off, ch)) = chars.next() {
        if ch == q {
            if chars.peek().is_some_and(|&(_, n)| n == q) {
                text.push(q);
                chars.next();
                continue;
            }
            return Ok((text, start + 1 + off + 1));
        }
        text.push(ch);
    }
    Err(SqlError::Syntax {
        position: start,
        message: "unterminated quoted text".into(),
    })
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

type PResult<T> = Result<T, SqlError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn syntax<T>(&self, expected: &str) -> PResult<T> {
        Err(SqlError::Syntax {
            position: self.offset(),
            message: format!("expected {expected}, found {}", self.peek().describe()),
        })
    }

    fn unsupported<T>(&self, construct: impl Into<String>) -> PResult<T> {
        Err(SqlError::Unsupported {
            position: self.offset(),
            construct: construct.into(),
        })
    }

    /// Reports constructs outside the subset before falling back to a syntax error.
    fn fail<T>(&self, expected: &str) -> PResult<T> {
        match self.peek() {
            Tok::Word(w) => {
                let up = w.to_ascii_uppercase();
                let construct = match up.as_str() {
                    "UNION" | "INTERSECT" | "EXCEPT" => Some(format!("set operation {up}")),
                    "LEFT" | "RIGHT" | "FULL" | "OUTER" | "CROSS" | "NATURAL" => {
                        Some(format!("{up} join"))
                    }
                    "IN" | "BETWEEN" | "EXISTS" | "CASE" | "IS" | "NULL" | "WITH" | "OVER"
                    | "OFFSET" | "USING" => Some(up),
                    _ => None,
                };
                if let Some(c) = construct {
                    return self.unsupported(c);
                }
            }
            Tok::Arith(c) => return self.unsupported(format!("arithmetic operator `{c}`")),
            Tok::LParen if matches!(self.peek_at(1), Tok::Word(w) if w.eq_ignore_ascii_case("SELECT")) => {
                return self.unsupported("subquery")
            }
            _ => {}
        }
        self.syntax(expected)
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.fail(kw)
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> PResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.fail(what)
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Word(w) if !is_reserved(&w) => {
                self.bump();
                Ok(w)
            }
            Tok::Quoted(w) => {
                self.bump();
                Ok(w)
            }
            _ => self.fail(what),
        }
    }

    fn optional_alias(&mut self) -> PResult<Option<String>> {
        if self.eat_kw("AS") {
            return self.ident("alias").map(Some);
        }
        match self.peek() {
            Tok::Word(w) if !is_reserved(w) => Ok(Some(self.ident("alias")?)),
            Tok::Quoted(_) => Ok(Some(self.ident("alias")?)),
            _ => Ok(None),
        }
    }

    fn query(&mut self) -> PResult<SqlQuery> {
        if self.is_kw("WITH") {
            return self.unsupported("WITH");
        }
        self.expect_kw("SELECT")?;
        let distinct = self.eat_kw("DISTINCT");
        let mut select = vec![self.select_item()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            select.push(self.select_item()?);
        }
        self.expect_kw("FROM")?;
        let from = self.table_ref()?;
        let mut joins = Vec::new();
        loop {
            if *self.peek() == Tok::Comma {
                return self.unsupported("implicit cross join");
            }
            if self.is_kw("INNER")
                && matches!(self.peek_at(1), Tok::Word(w) if w.eq_ignore_ascii_case("JOIN"))
            {
                self.bump();
            }
            if !self.eat_kw("JOIN") {
                break;
            }
            let table = self.table_ref()?;
            self.expect_kw("ON")?;
            let left = self.column_ref()?;
            if *self.peek() != Tok::Op("=") {
                return self.unsupported_or("`=` in join condition");
            }
            self.bump();
            let right = self.column_ref()?;
            if self.is_kw("AND") || self.is_kw("OR") {
                return self.unsupported("compound join condition");
            }
            joins.push(Join { table, left, right });
        }
        let filter = if self.eat_kw("WHERE") {
            Some(self.expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            group_by.push(self.column_ref()?);
            while *self.peek() == Tok::Comma {
                self.bump();
                group_by.push(self.column_ref()?);
            }
        }
        let having = if self.eat_kw("HAVING") {
            Some(self.expr()?)
        } else {
            None
        };
        let mut order_by = Vec::new();
        if self.eat_kw("ORDER") {
            self.expect_kw("BY")?;
            loop {
                let key = self.scalar()?;
                let descending = if self.eat_kw("DESC") {
                    true
                } else {
                    self.eat_kw("ASC");
                    false
                };
                order_by.push(OrderItem { key, descending });
                if *self.peek() != Tok::Comma {
                    break;
                }
                self.bump();
            }
        }
        let limit = if self.eat_kw("LIMIT") {
            match self.peek().clone() {
                Tok::Number(n) if n.bytes().all(|b| b.is_ascii_digit()) => {
                    self.bump();
                    match n.parse::<u64>() {
                        Ok(v) => Some(v),
                        Err(_) => return self.syntax("a LIMIT that fits in 64 bits"),
                    }
                }
                _ => return self.fail("non-negative integer after LIMIT"),
            }
        } else {
            None
        };
        if *self.peek() == Tok::Comma && limit.is_some() {
            return self.unsupported("LIMIT with offset");
        }
        if *self.peek() == Tok::Semi {
            self.bump();
        }
        if *self.peek() != Tok::Eof {
            if matches!(self.peek(), Tok::Word(w) if w.eq_ignore_ascii_case("SELECT")) {
                return self.unsupported("multiple statements");
            }
            return self.fail("end of input");
        }
        Ok(SqlQuery {
            distinct,
            select,
            from,
            joins,
            filter,
            group_by,
            having,
            order_by,
            limit,
        })
    }

    fn unsupported_or<T>(&self, expected: &str) -> PResult<T> {
        match self.peek() {
            Tok::Op(_) => self.unsupported(format!(
                "non-equality join condition ({})",
                self.peek().describe()
            )),
            _ => self.fail(expected),
        }
    }

    fn table_ref(&mut self) -> PResult<TableRef> {
        if *self.peek() == Tok::LParen {
            return self.fail("table name");
        }
        let name = self.ident("table name")?;
        let alias = self.optional_alias()?;
        Ok(TableRef { name, alias })
    }

    fn column_ref(&mut self) -> PResult<ColumnRef> {
        let first = self.ident("column name")?;
        if *self.peek() == Tok::Dot {
            self.bump();
            let column = self.ident("column name after `.`")?;
            Ok(ColumnRef {
                qualifier: Some(first),
                column,
            })
        } else {
            Ok(ColumnRef {
                qualifier: None,
                column: first,
            })
        }
    }

    fn select_item(&mut self) -> PResult<SelectItem> {
        if *self.peek() == Tok::Star {
            self.bump();
            return Ok(SelectItem::Wildcard);
        }
        let value = self.scalar()?;
        let alias = self.optional_alias()?;
        Ok(SelectItem::Value { value, alias })
    }

    fn scalar(&mut self) -> PResult<Scalar> {
        let s = self.scalar_inner()?;
        if matches!(self.peek(), Tok::Arith(_) | Tok::Star) {
            let c = match self.peek() {
                Tok::Arith(c) => *c,
                _ => '*',
            };
            return self.unsupported(format!("arithmetic operator `{c}`"));
        }
        Ok(s)
    }

    fn scalar_inner(&mut self) -> PResult<Scalar> {
        match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                Ok(Scalar::Literal(Literal::Number(n)))
            }
            Tok::Arith('-') if matches!(self.peek_at(1), Tok::Number(_)) => {
                self.bump();
                let Tok::Number(n) = self.bump() else {
                    unreachable!()
                };
                Ok(Scalar::Literal(Literal::Number(format!("-{n}"))))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Scalar::Literal(Literal::Text(s)))
            }
            Tok::Word(w) if *self.peek_at(1) == Tok::LParen && !is_reserved(&w) => {
                let Some(func) = AggFunc::from_name(&w) else {
                    return self.unsupported(format!("function {}", w.to_ascii_uppercase()));
                };
                self.bump();
                self.bump();
                let distinct = self.eat_kw("DISTINCT");
                let arg = if *self.peek() == Tok::Star {
                    if distinct || func != AggFunc::Count {
                        return self.syntax("column reference");
                    }
                    self.bump();
                    AggArg::Star
                } else {
                    AggArg::Column(self.column_ref()?)
                };
                self.expect(Tok::RParen, "`)`")?;
                if self.is_kw("OVER") {
                    return self.unsupported("window function");
                }
                Ok(Scalar::Aggregate {
                    func,
                    distinct,
                    arg,
                })
            }
            Tok::Word(_) | Tok::Quoted(_) => Ok(Scalar::Column(self.column_ref()?)),
            _ => self.fail("column, literal or aggregate"),
        }
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut left = self.and_expr()?;
        while self.eat_kw("OR") {
            let right = self.and_expr()?;
            left = Expr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut left = self.not_expr()?;
        while self.eat_kw("AND") {
            let right = self.not_expr()?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.eat_kw("NOT") {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        if *self.peek() == Tok::LParen {
            if matches!(self.peek_at(1), Tok::Word(w) if w.eq_ignore_ascii_case("SELECT")) {
                return self.unsupported("subquery");
            }
            self.bump();
            let e = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(e);
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let left = self.scalar()?;
        let negated_like = self.is_kw("NOT")
            && matches!(self.peek_at(1), Tok::Word(w) if w.eq_ignore_ascii_case("LIKE"));
        if negated_like {
            self.bump();
        }
        let op = match self.peek() {
            Tok::Op("=") => CmpOp::Eq,
            Tok::Op("!=") => CmpOp::Ne,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::Ge,
            Tok::Word(w) if w.eq_ignore_ascii_case("LIKE") => CmpOp::Like,
            Tok::Word(w) if w.eq_ignore_ascii_case("NOT") => {
                self.bump();
                return self.fail("LIKE after NOT");
            }
            _ => return self.fail("comparison operator"),
        };
        self.bump();
        if *self.peek() == Tok::LParen {
            return self.fail("value");
        }
        let right = self.scalar()?;
        let cmp = Expr::Compare { left, op, right };
        Ok(if negated_like {
            Expr::Not(Box::new(cmp))
        } else {
            cmp
        })
    }
}

/// Parses one statement of the supported subset. Keywords are
/// case-insensitive; identifiers keep their spelling.
pub fn parse_sql(text: &str) -> Result<SqlQuery, SqlError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    p.query()
}
