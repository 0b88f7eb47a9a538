//! Recursive-descent parser for the supported SQL subset.

use std::collections::HashMap;

use thiserror::Error;

use super::ast::*;
use super::lexer::{lex, Lexeme, Tok};
use super::value::Value;
use crate::schema::Schema;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {position}: expected {}, found `{found}`", expected.join(" | "))]
    Syntax {
        position: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("unsupported construct at byte {position}: {what}")]
    Unsupported { position: usize, what: String },
    #[error("unknown identifier `{name}` (candidates: {})", candidates.join(", "))]
    UnknownIdentifier { name: String, candidates: Vec<String> },
}

const RESERVED: &[&str] = &[
    "SELECT",
    "FROM",
    "WHERE",
    "GROUP",
    "ORDER",
    "BY",
    "GROUP_BY",
    "ORDER_BY",
    "HAVING",
    "LIMIT",
    "AND",
    "OR",
    "NOT",
    "IN",
    "LIKE",
    "BETWEEN",
    "AS",
    "JOIN",
    "ON",
    "INTERSECT",
    "UNION",
    "EXCEPT",
    "ASC",
    "DESC",
    "DISTINCT",
    "INNER",
];

/// Parses SQL text into a [`Query`].
///
/// Keywords are case-insensitive; `ORDER_BY` and `GROUP_BY` are accepted as
/// spellings of `ORDER BY` and `GROUP BY`. Table aliases are resolved to
/// table names. With a schema, identifiers are checked and explicit join
/// conditions are replaced by the schema's foreign-key join path.
pub fn parse_sql(text: &str, schema: Option<&Schema>) -> Result<Query, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, i: 0, depth: 0 };
    let mut q = p.query()?;
    p.eat_sym(";");
    if p.peek() != &Tok::Eof {
        return Err(p.unexpected(&["end of input"]));
    }
    if let Some(schema) = schema {
        resolve_query(&mut q, schema)?;
    }
    Ok(q)
}

struct Parser {
    toks: Vec<Lexeme>,
    i: usize,
    depth: usize,
}

fn is_kw(tok: &Tok, kw: &str) -> bool {
    matches!(tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
}

fn is_reserved(w: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(w))
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let j = (self.i + n).min(self.toks.len() - 1);
        &self.toks[j].tok
    }

    fn pos(&self) -> usize {
        self.toks[self.i].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].tok.clone();
        if self.i < self.toks.len() - 1 {
            self.i += 1;
        }
        t
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        ParseError::Syntax {
            position: self.pos(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        }
    }

    fn unsupported(&self, what: &str) -> ParseError {
        ParseError::Unsupported {
            position: self.pos(),
            what: what.to_string(),
        }
    }

    fn at_kw(&self, kw: &str) -> bool {
        is_kw(self.peek(), kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&[kw]))
        }
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.at_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.unexpected(&[s]))
        }
    }

    /// `GROUP BY` / `GROUP_BY`, `ORDER BY` / `ORDER_BY`.
    fn eat_two_word(&mut self, first: &str) -> Result<bool, ParseError> {
        let joined = format!("{first}_BY");
        if self.eat_kw(&joined) {
            return Ok(true);
        }
        if self.at_kw(first) {
            self.bump();
            self.expect_kw("BY")?;
            return Ok(true);
        }
        Ok(false)
    }

    fn query(&mut self) -> Result<Query, ParseError> {
        let left = self.unit()?;
        let op = if self.eat_kw("INTERSECT") {
            SetOperator::Intersect
        } else if self.eat_kw("UNION") {
            SetOperator::Union
        } else if self.eat_kw("EXCEPT") {
            SetOperator::Except
        } else {
            return Ok(Query::unit(left));
        };
        if self.at_kw("ALL") {
            return Err(self.unsupported("set operation with ALL"));
        }
        let right = self.unit()?;
        if ["INTERSECT", "UNION", "EXCEPT"].iter().any(|k| self.at_kw(k)) {
            return Err(self.unsupported("more than one set operation"));
        }
        Ok(Query::Compound {
            op,
            left: Box::new(left),
            right: Box::new(right),
        })
    }

    fn unit(&mut self) -> Result<UnitQuery, ParseError> {
        self.expect_kw("SELECT")?;
        let distinct = self.eat_kw("DISTINCT");
        let mut select = vec![self.term()?];
        while self.eat_sym(",") {
            select.push(self.term()?);
        }
        self.expect_kw("FROM")?;
        let (from, aliases) = self.parse_from()?;
        let mut unit = UnitQuery::new(select, from);
        unit.distinct = distinct;
        if self.eat_kw("WHERE") {
            unit.filter = Some(self.predicate()?);
        }
        if self.eat_two_word("GROUP")? {
            unit.group_by.push(self.column_ref()?);
            while self.eat_sym(",") {
                unit.group_by.push(self.column_ref()?);
            }
        }
        if self.at_kw("HAVING") {
            if unit.group_by.is_empty() {
                return Err(self.unsupported("HAVING without GROUP BY"));
            }
            self.bump();
            unit.having = Some(self.predicate()?);
        }
        if self.eat_two_word("ORDER")? {
            let key = self.term()?;
            let dir = if self.eat_kw("DESC") {
                Direction::Desc
            } else {
                self.eat_kw("ASC");
                Direction::Asc
            };
            if self.at_sym(",") {
                return Err(self.unsupported("multiple ORDER BY keys"));
            }
            unit.order_by = Some(OrderBy { key, dir });
        }
        if self.eat_kw("LIMIT") {
            let pos = self.pos();
            match self.bump() {
                Tok::Num(n) => match n.parse::<u64>() {
                    Ok(v) if v > 0 => unit.limit = Some(v),
                    _ => {
                        return Err(ParseError::Syntax {
                            position: pos,
                            expected: vec!["positive integer".into()],
                            found: n,
                        })
                    }
                },
                other => {
                    return Err(ParseError::Syntax {
                        position: pos,
                        expected: vec!["positive integer".into()],
                        found: other.describe(),
                    })
                }
            }
        }
        resolve_aliases(&mut unit, &aliases);
        Ok(unit)
    }

    fn identifier(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Word(w) if !is_reserved(&w) => {
                self.bump();
                Ok(w)
            }
            Tok::QuotedIdent(w) | Tok::DoubleQuoted(w) => {
                self.bump();
                Ok(w)
            }
            _ => Err(self.unexpected(&[what])),
        }
    }

    fn table_ref(&mut self, aliases: &mut HashMap<String, String>) -> Result<String, ParseError> {
        let name = self.identifier("table name")?;
        let has_as = self.eat_kw("AS");
        let alias = match self.peek() {
            Tok::Word(w) if !is_reserved(w) => Some(w.clone()),
            _ if has_as => return Err(self.unexpected(&["alias"])),
            _ => None,
        };
        if let Some(a) = alias {
            self.bump();
            aliases.insert(a.to_ascii_lowercase(), name.clone());
        }
        Ok(name)
    }

    fn parse_from(&mut self) -> Result<(FromClause, HashMap<String, String>), ParseError> {
        let mut aliases = HashMap::new();
        let mut from = FromClause::default();
        if self.at_sym("(") {
            return Err(self.unsupported("subquery in FROM"));
        }
        from.tables.push(self.table_ref(&mut aliases)?);
        loop {
            if self.eat_sym(",") {
                from.tables.push(self.table_ref(&mut aliases)?);
                continue;
            }
            self.eat_kw("INNER");
            if !self.eat_kw("JOIN") {
                break;
            }
            from.tables.push(self.table_ref(&mut aliases)?);
            if self.eat_kw("ON") {
                loop {
                    let left = self.column_ref()?;
                    self.expect_sym("=")?;
                    let right = self.column_ref()?;
                    from.joins.push(JoinEdge { left, right });
                    if !self.eat_kw("AND") {
                        break;
                    }
                }
            }
        }
        Ok((from, aliases))
    }

    fn column_ref(&mut self) -> Result<ColumnRef, ParseError> {
        let first = self.identifier("column name")?;
        if self.at_sym(".") {
            self.bump();
            let col = if self.at_sym("*") {
                return Err(self.unsupported("qualified *"));
            } else {
                self.identifier("column name")?
            };
            return Ok(ColumnRef::qualified(first, col));
        }
        Ok(ColumnRef::new(first))
    }

    fn starts_column(&self, n: usize) -> bool {
        match self.peek_at(n) {
            Tok::Word(w) => !is_reserved(w),
            Tok::QuotedIdent(_) => true,
            _ => false,
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        if self.eat_sym("*") {
            return Ok(Expr::Star);
        }
        let left = self.column_ref()?;
        let op = match self.peek() {
            Tok::Sym("+") => ArithOp::Add,
            Tok::Sym("-") => ArithOp::Sub,
            Tok::Sym("*") => ArithOp::Mul,
            Tok::Sym("/") => ArithOp::Div,
            _ => return Ok(Expr::Column(left)),
        };
        if !self.starts_column(1) {
            self.bump();
            return Err(self.unsupported("arithmetic with a non-column operand"));
        }
        self.bump();
        let right = self.column_ref()?;
        Ok(Expr::Binary { op, left, right })
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        if let Tok::Word(w) = self.peek() {
            if let Some(agg) = Aggregate::from_name(w) {
                if self.peek_at(1) == &Tok::Sym("(") {
                    self.bump();
                    self.bump();
                    let distinct = self.eat_kw("DISTINCT");
                    let expr = self.expr()?;
                    self.expect_sym(")")?;
                    return Ok(Term {
                        agg: Some(agg),
                        distinct,
                        expr,
                    });
                }
            }
        }
        Ok(Term::plain(self.expr()?))
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let mut p = self.conjunction()?;
        while self.eat_kw("OR") {
            let rhs = self.conjunction()?;
            p = Predicate::or(p, rhs);
        }
        Ok(p)
    }

    fn conjunction(&mut self) -> Result<Predicate, ParseError> {
        let mut p = self.atom()?;
        while self.eat_kw("AND") {
            let rhs = self.atom()?;
            p = Predicate::and(p, rhs);
        }
        Ok(p)
    }

    fn atom(&mut self) -> Result<Predicate, ParseError> {
        if self.at_sym("(") && !is_kw(self.peek_at(1), "SELECT") {
            self.bump();
            let p = self.predicate()?;
            self.expect_sym(")")?;
            return Ok(p);
        }
        Ok(Predicate::Cond(self.condition()?))
    }

    fn literal(&mut self) -> Result<Value, ParseError> {
        let pos = self.pos();
        let negative = self.eat_sym("-");
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                let text = if negative { format!("-{n}") } else { n };
                if text.contains(['.', 'e', 'E']) {
                    text.parse::<f64>().map(Value::Real).map_err(|_| ParseError::Syntax {
                        position: pos,
                        expected: vec!["number".into()],
                        found: text.clone(),
                    })
                } else {
                    match text.parse::<i64>() {
                        Ok(i) => Ok(Value::Int(i)),
                        Err(_) => Ok(Value::Real(text.parse::<f64>().unwrap_or(f64::NAN))),
                    }
                }
            }
            Tok::Str(s) | Tok::DoubleQuoted(s) if !negative => {
                self.bump();
                Ok(Value::Text(s))
            }
            _ => Err(self.unexpected(&["literal"])),
        }
    }

    fn at_literal(&self) -> bool {
        match self.peek() {
            Tok::Num(_) | Tok::Str(_) | Tok::DoubleQuoted(_) => true,
            Tok::Sym("-") => matches!(self.peek_at(1), Tok::Num(_)),
            _ => false,
        }
    }

    fn subquery(&mut self) -> Result<Query, ParseError> {
        self.expect_sym("(")?;
        if !self.at_kw("SELECT") {
            return Err(self.unsupported("value list; only subqueries may follow IN"));
        }
        if self.depth >= 1 {
            return Err(self.unsupported("nesting deeper than one level"));
        }
        self.depth += 1;
        let q = self.query()?;
        self.depth -= 1;
        self.expect_sym(")")?;
        Ok(q)
    }

    fn condition(&mut self) -> Result<Condition, ParseError> {
        let lhs = self.term()?;
        let op = match self.bump() {
            Tok::Sym("=") => CompareOp::Eq,
            Tok::Sym("!=") | Tok::Sym("<>") => CompareOp::Ne,
            Tok::Sym(">") => CompareOp::Gt,
            Tok::Sym(">=") => CompareOp::Ge,
            Tok::Sym("<") => CompareOp::Lt,
            Tok::Sym("<=") => CompareOp::Le,
            Tok::Word(w) if w.eq_ignore_ascii_case("LIKE") => CompareOp::Like,
            Tok::Word(w) if w.eq_ignore_ascii_case("IN") => CompareOp::In,
            Tok::Word(w) if w.eq_ignore_ascii_case("BETWEEN") => CompareOp::Between,
            Tok::Word(w) if w.eq_ignore_ascii_case("NOT") => {
                if self.eat_kw("IN") {
                    CompareOp::NotIn
                } else {
                    return Err(self.unsupported("NOT other than NOT IN"));
                }
            }
            _ => {
                self.i -= 1;
                return Err(self.unexpected(&["=", "!=", ">", ">=", "<", "<=", "LIKE", "IN", "NOT IN", "BETWEEN"]));
            }
        };
        let rhs = match op {
            CompareOp::In | CompareOp::NotIn => Rhs::Subquery(Box::new(self.subquery()?)),
            CompareOp::Between => {
                let lo = self.literal()?;
                self.expect_kw("AND")?;
                let hi = self.literal()?;
                Rhs::Between(lo, hi)
            }
            _ => {
                if self.at_sym("(") {
                    Rhs::Subquery(Box::new(self.subquery()?))
                } else if self.at_literal() {
                    Rhs::Value(self.literal()?)
                } else {
                    Rhs::Column(self.expr()?)
                }
            }
        };
        Ok(Condition { lhs, op, rhs })
    }
}

fn visit_unit_columns(unit: &mut UnitQuery, f: &mut dyn FnMut(&mut ColumnRef)) {
    fn expr(e: &mut Expr, f: &mut dyn FnMut(&mut ColumnRef)) {
        match e {
            Expr::Star => {}
            Expr::Column(c) => f(c),
            Expr::Binary { left, right, .. } => {
                f(left);
                f(right);
            }
        }
    }
    fn pred(p: &mut Predicate, f: &mut dyn FnMut(&mut ColumnRef)) {
        match p {
            Predicate::Cond(c) => {
                expr(&mut c.lhs.expr, f);
                if let Rhs::Column(e) = &mut c.rhs {
                    expr(e, f);
                }
            }
            Predicate::And(a, b) | Predicate::Or(a, b) => {
                pred(a, f);
                pred(b, f);
            }
        }
    }
    for t in &mut unit.select {
        expr(&mut t.expr, f);
    }
    for j in &mut unit.from.joins {
        f(&mut j.left);
        f(&mut j.right);
    }
    if let Some(p) = &mut unit.filter {
        pred(p, f);
    }
    for c in &mut unit.group_by {
        f(c);
    }
    if let Some(p) = &mut unit.having {
        pred(p, f);
    }
    if let Some(o) = &mut unit.order_by {
        expr(&mut o.key.expr, f);
    }
}

fn resolve_aliases(unit: &mut UnitQuery, aliases: &HashMap<String, String>) {
    if aliases.is_empty() {
        return;
    }
    visit_unit_columns(unit, &mut |c| {
        if let Some(t) = &c.table {
            if let Some(real) = aliases.get(&t.to_ascii_lowercase()) {
                c.table = Some(real.clone());
            }
        }
    });
}

fn resolve_query(q: &mut Query, schema: &Schema) -> Result<(), ParseError> {
    match q {
        Query::Unit(u) => resolve_unit(u, schema),
        Query::Compound { left, right, .. } => {
            resolve_unit(left, schema)?;
            resolve_unit(right, schema)
        }
    }
}

fn resolve_unit(unit: &mut UnitQuery, schema: &Schema) -> Result<(), ParseError> {
    for t in &unit.from.tables {
        if schema.table(t).is_none() {
            return Err(ParseError::UnknownIdentifier {
                name: t.clone(),
                candidates: schema.tables.iter().map(|t| t.name.clone()).collect(),
            });
        }
    }
    let from_tables: Vec<String> = unit.from.tables.clone();
    let mut err = None;
    visit_unit_columns(unit, &mut |c| {
        if err.is_some() {
            return;
        }
        let found = match &c.table {
            Some(t) => schema.column(t, &c.column).is_some(),
            None => from_tables.iter().any(|t| schema.column(t, &c.column).is_some()),
        };
        if !found {
            let scope: Vec<&String> = match &c.table {
                Some(t) if schema.table(t).is_some() => vec![t],
                _ => from_tables.iter().collect(),
            };
            let candidates = scope
                .iter()
                .filter_map(|t| schema.table(t))
                .flat_map(|t| t.columns.iter().map(|c| c.name.clone()))
                .collect();
            err = Some(ParseError::UnknownIdentifier {
                name: c.to_string(),
                candidates,
            });
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    for p in [&mut unit.filter, &mut unit.having].into_iter().flatten() {
        resolve_subqueries(p, schema)?;
    }
    if unit.from.tables.len() > 1 {
        let names: Vec<&str> = unit.from.tables.iter().map(|s| s.as_str()).collect();
        if let Ok(path) = crate::schema::join_path(schema, &names) {
            unit.from = FromClause {
                tables: path.tables,
                joins: path.edges,
            };
        }
    }
    Ok(())
}

fn resolve_subqueries(p: &mut Predicate, schema: &Schema) -> Result<(), ParseError> {
    match p {
        Predicate::Cond(c) => {
            if let Rhs::Subquery(q) = &mut c.rhs {
                resolve_query(q, schema)?;
            }
            Ok(())
        }
        Predicate::And(a, b) | Predicate::Or(a, b) => {
            resolve_subqueries(a, schema)?;
            resolve_subqueries(b, schema)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Query {
        parse_sql(s, None).unwrap_or_else(|e| panic!("{s}: {e}"))
    }

    fn unit(q: &Query) -> &UnitQuery {
        match q {
            Query::Unit(u) => u,
            _ => panic!("expected unit query"),
        }
    }

    #[test]
    fn simple_where() {
        let q = parse("SELECT draw_size FROM matches WHERE loser_age > 10");
        let u = unit(&q);
        assert_eq!(u.select, vec![Term::column(ColumnRef::new("draw_size"))]);
        assert_eq!(u.from, FromClause::single("matches"));
        let conds = u.filter.as_ref().unwrap().conditions();
        assert_eq!(conds.len(), 1);
        assert_eq!(conds[0].lhs, Term::column(ColumnRef::new("loser_age")));
        assert_eq!(conds[0].op, CompareOp::Gt);
        assert_eq!(conds[0].rhs, Rhs::Value(Value::Int(10)));
        assert!(u.group_by.is_empty() && u.order_by.is_none() && u.limit.is_none());
    }

    #[test]
    fn minimal_star_query() {
        let q = parse("select * from t");
        let u = unit(&q);
        assert_eq!(u.select, vec![Term::plain(Expr::Star)]);
        assert_eq!(u.from, FromClause::single("t"));
        assert!(u.filter.is_none() && u.having.is_none() && u.order_by.is_none());
    }

    #[test]
    fn order_by_underscore_alias() {
        let q = parse("SELECT horsepower FROM cars_data WHERE edispl <= 10 ORDER_BY year DESC");
        let u = unit(&q);
        assert!(u.filter.is_some());
        let o = u.order_by.as_ref().unwrap();
        assert_eq!(o.key, Term::column(ColumnRef::new("year")));
        assert_eq!(o.dir, Direction::Desc);
        assert_eq!(u.limit, None);
    }

    #[test]
    fn aliases_resolve_to_table_names() {
        let q = parse(
            "SELECT T1.name FROM head AS T1 JOIN management AS T2 ON T1.head_id = T2.head_id WHERE T2.temporary_acting = 'Yes'",
        );
        let u = unit(&q);
        assert_eq!(u.select[0], Term::column(ColumnRef::qualified("head", "name")));
        assert_eq!(u.from.tables, vec!["head", "management"]);
        assert_eq!(
            u.from.joins[0],
            JoinEdge {
                left: ColumnRef::qualified("head", "head_id"),
                right: ColumnRef::qualified("management", "head_id"),
            }
        );
    }

    #[test]
    fn nested_and_set_operations() {
        let q = parse("SELECT name FROM Wine WHERE Price > (SELECT max(Price) FROM Wine)");
        assert_eq!(q.nesting_depth(), 1);
        let q = parse("SELECT a FROM t WHERE b = 1 INTERSECT SELECT a FROM t WHERE c = 2");
        assert!(matches!(
            q,
            Query::Compound {
                op: SetOperator::Intersect,
                ..
            }
        ));
    }

    #[test]
    fn rejects_deep_nesting_and_having_without_group() {
        let e = parse_sql(
            "SELECT a FROM t WHERE b IN (SELECT b FROM u WHERE c IN (SELECT c FROM v))",
            None,
        )
        .unwrap_err();
        assert!(matches!(e, ParseError::Unsupported { .. }));
        let e = parse_sql("SELECT count(*) FROM t HAVING count(*) > 1", None).unwrap_err();
        assert!(matches!(e, ParseError::Unsupported { .. }));
    }

    #[test]
    fn syntax_error_reports_position_and_expectation() {
        match parse_sql("SELECT a FROM", None).unwrap_err() {
            ParseError::Syntax { position, expected, .. } => {
                assert_eq!(position, 13);
                assert_eq!(expected, vec!["table name".to_string()]);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn limit_without_order_is_accepted_but_not_canonical() {
        let q = parse("SELECT a FROM t LIMIT 3");
        assert!(!q.is_canonical());
        assert!(parse("SELECT a FROM t ORDER BY a LIMIT 3").is_canonical());
    }

    #[test]
    fn between_and_double_quoted_values() {
        let q = parse("SELECT a FROM t WHERE b BETWEEN 1 AND 2.5 AND c = \"California\"");
        let conds = unit(&q)
            .filter
            .as_ref()
            .unwrap()
            .conditions()
            .into_iter()
            .cloned()
            .collect::<Vec<_>>();
        assert_eq!(conds[0].rhs, Rhs::Between(Value::Int(1), Value::Real(2.5)));
        assert_eq!(conds[1].rhs, Rhs::Value(Value::Text("California".into())));
    }
}
