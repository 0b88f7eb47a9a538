//! SQL patterns: the flat, identifier-free form of a query.
//!
//! A pattern keeps clause keywords and structural slots and erases every
//! database-specific item. Select items become `A`, other column positions
//! `C`, literals `V`, comparison operators `OP`, aggregators `AGG`, column
//! arithmetic `CALC`, and nested queries are bracketed by
//! `NESTED_OPEN`/`NESTED_CLOSE`. FROM never appears.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::*;

/// Bumped whenever the alphabet or erasure rules change; pattern keys from
/// different versions are not comparable.
pub const PATTERN_ALPHABET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatternToken {
    Select,
    Where,
    GroupBy,
    Having,
    OrderBy,
    Limit,
    Intersect,
    Union,
    Except,
    And,
    Or,
    A,
    C,
    Op,
    V,
    Dir,
    Agg,
    Calc,
    NestedOpen,
    NestedClose,
}

impl PatternToken {
    pub const ALL: [PatternToken; 20] = [
        PatternToken::Select,
        PatternToken::Where,
        PatternToken::GroupBy,
        PatternToken::Having,
        PatternToken::OrderBy,
        PatternToken::Limit,
        PatternToken::Intersect,
        PatternToken::Union,
        PatternToken::Except,
        PatternToken::And,
        PatternToken::Or,
        PatternToken::A,
        PatternToken::C,
        PatternToken::Op,
        PatternToken::V,
        PatternToken::Dir,
        PatternToken::Agg,
        PatternToken::Calc,
        PatternToken::NestedOpen,
        PatternToken::NestedClose,
    ];

    pub fn as_str(self) -> &'static str {
        use PatternToken::*;
        match self {
            Select => "SELECT",
            Where => "WHERE",
            GroupBy => "GROUP_BY",
            Having => "HAVING",
            OrderBy => "ORDER_BY",
            Limit => "LIMIT",
            Intersect => "INTERSECT",
            Union => "UNION",
            Except => "EXCEPT",
            And => "AND",
            Or => "OR",
            A => "A",
            C => "C",
            Op => "OP",
            V => "V",
            Dir => "DIR",
            Agg => "AGG",
            Calc => "CALC",
            NestedOpen => "NESTED_OPEN",
            NestedClose => "NESTED_CLOSE",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for PatternToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Pattern(pub Vec<PatternToken>);

impl Pattern {
    pub fn tokens(&self) -> &[PatternToken] {
        &self.0
    }

    pub fn contains(&self, t: PatternToken) -> bool {
        self.0.contains(&t)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t.as_str())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("unknown pattern token `{0}`")]
    UnknownToken(String),
    #[error("malformed pattern at token {position}: expected {expected}")]
    Malformed { position: usize, expected: &'static str },
}

impl FromStr for Pattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split_whitespace()
            .map(|w| PatternToken::from_symbol(w).ok_or_else(|| PatternError::UnknownToken(w.into())))
            .collect::<Result<Vec<_>, _>>()
            .map(Pattern)
    }
}

impl Serialize for Pattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Erases database items from a query, keeping its sketch-level structure.
pub fn extract_pattern(q: &Query) -> Pattern {
    let mut out = Vec::new();
    erase_query(q, &mut out);
    Pattern(out)
}

fn erase_query(q: &Query, out: &mut Vec<PatternToken>) {
    match q {
        Query::Unit(u) => erase_unit(u, out),
        Query::Compound { op, left, right } => {
            erase_unit(left, out);
            out.push(match op {
                SetOperator::Intersect => PatternToken::Intersect,
                SetOperator::Union => PatternToken::Union,
                SetOperator::Except => PatternToken::Except,
            });
            erase_unit(right, out);
        }
    }
}

fn erase_expr(e: &Expr, slot: PatternToken, out: &mut Vec<PatternToken>) {
    match e {
        Expr::Star | Expr::Column(_) => out.push(slot),
        Expr::Binary { .. } => out.extend([slot, PatternToken::Calc, slot]),
    }
}

fn erase_term(t: &Term, slot: PatternToken, out: &mut Vec<PatternToken>) {
    if t.agg.is_some() {
        out.push(PatternToken::Agg);
    }
    erase_expr(&t.expr, slot, out);
}

fn erase_predicate(p: &Predicate, out: &mut Vec<PatternToken>) {
    match p {
        Predicate::Cond(c) => {
            erase_term(&c.lhs, PatternToken::C, out);
            out.push(PatternToken::Op);
            match &c.rhs {
                Rhs::Value(_) => out.push(PatternToken::V),
                Rhs::Between(..) => out.extend([PatternToken::V, PatternToken::V]),
                Rhs::Column(e) => erase_expr(e, PatternToken::C, out),
                Rhs::Subquery(q) => {
                    out.push(PatternToken::NestedOpen);
                    erase_query(q, out);
                    out.push(PatternToken::NestedClose);
                }
            }
        }
        Predicate::And(a, b) => {
            erase_predicate(a, out);
            out.push(PatternToken::And);
            erase_predicate(b, out);
        }
        Predicate::Or(a, b) => {
            erase_predicate(a, out);
            out.push(PatternToken::Or);
            erase_predicate(b, out);
        }
    }
}

fn erase_unit(u: &UnitQuery, out: &mut Vec<PatternToken>) {
    out.push(PatternToken::Select);
    for t in &u.select {
        erase_term(t, PatternToken::A, out);
    }
    if let Some(p) = &u.filter {
        out.push(PatternToken::Where);
        erase_predicate(p, out);
    }
    if !u.group_by.is_empty() {
        out.push(PatternToken::GroupBy);
        out.extend(u.group_by.iter().map(|_| PatternToken::C));
    }
    if let Some(p) = &u.having {
        out.push(PatternToken::Having);
        erase_predicate(p, out);
    }
    if let Some(o) = &u.order_by {
        out.push(PatternToken::OrderBy);
        erase_term(&o.key, PatternToken::C, out);
        out.push(PatternToken::Dir);
    }
    if u.limit.is_some() {
        out.push(PatternToken::Limit);
    }
}

// ---------------------------------------------------------------------------
// Pattern structure: the inverse view used to fill sketches.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermShape {
    pub agg: bool,
    pub calc: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RhsShape {
    Value,
    Between,
    Column { calc: bool },
    Nested(Box<QueryShape>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CondShape {
    pub lhs: TermShape,
    pub rhs: RhsShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conjunction {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredShape {
    pub first: CondShape,
    pub rest: Vec<(Conjunction, CondShape)>,
}

impl PredShape {
    pub fn conditions(&self) -> impl Iterator<Item = &CondShape> {
        std::iter::once(&self.first).chain(self.rest.iter().map(|(_, c)| c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitShape {
    pub select: Vec<TermShape>,
    pub filter: Option<PredShape>,
    pub group_by: usize,
    pub having: Option<PredShape>,
    pub order: Option<TermShape>,
    pub limit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryShape {
    Unit(UnitShape),
    Compound {
        op: SetOperator,
        left: UnitShape,
        right: UnitShape,
    },
}

/// Reads a pattern back into its clause structure.
pub fn parse_pattern(p: &Pattern) -> Result<QueryShape, PatternError> {
    let mut r = ShapeReader { t: &p.0, i: 0 };
    let q = r.query()?;
    if r.i != r.t.len() {
        return Err(r.err("end of pattern"));
    }
    Ok(q)
}

struct ShapeReader<'a> {
    t: &'a [PatternToken],
    i: usize,
}

impl ShapeReader<'_> {
    fn peek(&self) -> Option<PatternToken> {
        self.t.get(self.i).copied()
    }

    fn eat(&mut self, tok: PatternToken) -> bool {
        if self.peek() == Some(tok) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn err(&self, expected: &'static str) -> PatternError {
        PatternError::Malformed {
            position: self.i,
            expected,
        }
    }

    fn expect(&mut self, tok: PatternToken, what: &'static str) -> Result<(), PatternError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.err(what))
        }
    }

    fn query(&mut self) -> Result<QueryShape, PatternError> {
        let left = self.unit()?;
        let op = match self.peek() {
            Some(PatternToken::Intersect) => SetOperator::Intersect,
            Some(PatternToken::Union) => SetOperator::Union,
            Some(PatternToken::Except) => SetOperator::Except,
            _ => return Ok(QueryShape::Unit(left)),
        };
        self.i += 1;
        let right = self.unit()?;
        Ok(QueryShape::Compound { op, left, right })
    }

    fn term(&mut self, slot: PatternToken) -> Result<TermShape, PatternError> {
        let agg = self.eat(PatternToken::Agg);
        self.expect(slot, "column slot")?;
        let calc = if self.eat(PatternToken::Calc) {
            self.expect(slot, "column slot after CALC")?;
            true
        } else {
            false
        };
        Ok(TermShape { agg, calc })
    }

    fn condition(&mut self) -> Result<CondShape, PatternError> {
        let lhs = self.term(PatternToken::C)?;
        self.expect(PatternToken::Op, "OP")?;
        let rhs = match self.peek() {
            Some(PatternToken::V) => {
                self.i += 1;
                if self.eat(PatternToken::V) {
                    RhsShape::Between
                } else {
                    RhsShape::Value
                }
            }
            Some(PatternToken::C) => {
                self.i += 1;
                let calc = if self.eat(PatternToken::Calc) {
                    self.expect(PatternToken::C, "column slot after CALC")?;
                    true
                } else {
                    false
                };
                RhsShape::Column { calc }
            }
            Some(PatternToken::NestedOpen) => {
                self.i += 1;
                let q = self.query()?;
                self.expect(PatternToken::NestedClose, "NESTED_CLOSE")?;
                RhsShape::Nested(Box::new(q))
            }
            _ => return Err(self.err("V, C or NESTED_OPEN")),
        };
        Ok(CondShape { lhs, rhs })
    }

    fn predicate(&mut self) -> Result<PredShape, PatternError> {
        let first = self.condition()?;
        let mut rest = Vec::new();
        loop {
            let conj = if self.eat(PatternToken::And) {
                Conjunction::And
            } else if self.eat(PatternToken::Or) {
                Conjunction::Or
            } else {
                break;
            };
            rest.push((conj, self.condition()?));
        }
        Ok(PredShape { first, rest })
    }

    fn unit(&mut self) -> Result<UnitShape, PatternError> {
        self.expect(PatternToken::Select, "SELECT")?;
        let mut select = vec![self.term(PatternToken::A)?];
        while matches!(self.peek(), Some(PatternToken::A | PatternToken::Agg)) {
            select.push(self.term(PatternToken::A)?);
        }
        let filter = if self.eat(PatternToken::Where) {
            Some(self.predicate()?)
        } else {
            None
        };
        let mut group_by = 0;
        if self.eat(PatternToken::GroupBy) {
            while self.eat(PatternToken::C) {
                group_by += 1;
            }
            if group_by == 0 {
                return Err(self.err("C after GROUP_BY"));
            }
        }
        let having = if self.eat(PatternToken::Having) {
            Some(self.predicate()?)
        } else {
            None
        };
        let order = if self.eat(PatternToken::OrderBy) {
            let t = self.term(PatternToken::C)?;
            self.expect(PatternToken::Dir, "DIR")?;
            Some(t)
        } else {
            None
        };
        let limit = self.eat(PatternToken::Limit);
        Ok(UnitShape {
            select,
            filter,
            group_by,
            having,
            order,
            limit,
        })
    }
}
