//! Typed tree for the supported SQL subset.
//!
//! The subset covers single-table and FK-joined SELECT queries with WHERE,
//! GROUP BY, HAVING, a single ORDER BY key, LIMIT, column arithmetic,
//! one level of nested subqueries and one set operation.

use std::fmt;

use super::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetOperator {
    Intersect,
    Union,
    Except,
}

impl SetOperator {
    pub fn keyword(self) -> &'static str {
        match self {
            SetOperator::Intersect => "INTERSECT",
            SetOperator::Union => "UNION",
            SetOperator::Except => "EXCEPT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregate {
    Max,
    Min,
    Count,
    Sum,
    Avg,
}

impl Aggregate {
    pub const ALL: [Aggregate; 5] = [
        Aggregate::Max,
        Aggregate::Min,
        Aggregate::Count,
        Aggregate::Sum,
        Aggregate::Avg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aggregate::Max => "max",
            Aggregate::Min => "min",
            Aggregate::Count => "count",
            Aggregate::Sum => "sum",
            Aggregate::Avg => "avg",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(s))
    }

    /// Only sum and avg require numeric input.
    pub fn needs_number(self) -> bool {
        matches!(self, Aggregate::Sum | Aggregate::Avg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub const ALL: [ArithOp; 4] = [ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div];

    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Eq,
    Ne,
    Gt,
    Ge,
    Lt,
    Le,
    Like,
    In,
    NotIn,
    Between,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Like => "LIKE",
            CompareOp::In => "IN",
            CompareOp::NotIn => "NOT IN",
            CompareOp::Between => "BETWEEN",
        }
    }

    pub fn is_ordering(self) -> bool {
        matches!(self, CompareOp::Gt | CompareOp::Ge | CompareOp::Lt | CompareOp::Le)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Asc,
    Desc,
}

impl Direction {
    pub fn keyword(self) -> &'static str {
        match self {
            Direction::Asc => "ASC",
            Direction::Desc => "DESC",
        }
    }
}

/// A possibly table-qualified column name. Identifiers are kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnRef {
    pub table: Option<String>,
    pub column: String,
}

impl ColumnRef {
    pub fn new(column: impl Into<String>) -> Self {
        ColumnRef {
            table: None,
            column: column.into(),
        }
    }

    pub fn qualified(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            table: Some(table.into()),
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.table {
            Some(t) => write!(f, "{t}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

/// Column expression: a column, `*`, or arithmetic over two columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Star,
    Column(ColumnRef),
    Binary {
        op: ArithOp,
        left: ColumnRef,
        right: ColumnRef,
    },
}

impl Expr {
    pub fn columns(&self) -> Vec<&ColumnRef> {
        match self {
            Expr::Star => vec![],
            Expr::Column(c) => vec![c],
            Expr::Binary { left, right, .. } => vec![left, right],
        }
    }
}

/// An optionally aggregated column expression. Used for select items,
/// condition operands and the ORDER BY key.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub agg: Option<Aggregate>,
    /// `agg(DISTINCT expr)`; only meaningful with an aggregate.
    pub distinct: bool,
    pub expr: Expr,
}

impl Term {
    pub fn plain(expr: Expr) -> Self {
        Term {
            agg: None,
            distinct: false,
            expr,
        }
    }

    pub fn column(c: ColumnRef) -> Self {
        Term::plain(Expr::Column(c))
    }

    pub fn aggregated(agg: Aggregate, expr: Expr) -> Self {
        Term {
            agg: Some(agg),
            distinct: false,
            expr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rhs {
    Value(Value),
    /// Lower and upper bound of BETWEEN.
    Between(Value, Value),
    Column(Expr),
    Subquery(Box<Query>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub lhs: Term,
    pub op: CompareOp,
    pub rhs: Rhs,
}

/// AND/OR tree of conditions.
#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Cond(Condition),
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
}

impl Predicate {
    pub fn and(a: Predicate, b: Predicate) -> Self {
        Predicate::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Predicate, b: Predicate) -> Self {
        Predicate::Or(Box::new(a), Box::new(b))
    }

    /// Leaves in left-to-right order.
    pub fn conditions(&self) -> Vec<&Condition> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a Condition>) {
        match self {
            Predicate::Cond(c) => out.push(c),
            Predicate::And(a, b) | Predicate::Or(a, b) => {
                a.collect(out);
                b.collect(out);
            }
        }
    }

    pub fn has_subquery(&self) -> bool {
        self.conditions().iter().any(|c| matches!(c.rhs, Rhs::Subquery(_)))
    }
}

/// Equi-join edge `left = right`; both sides are table-qualified.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JoinEdge {
    pub left: ColumnRef,
    pub right: ColumnRef,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FromClause {
    pub tables: Vec<String>,
    pub joins: Vec<JoinEdge>,
}

impl FromClause {
    pub fn single(table: impl Into<String>) -> Self {
        FromClause {
            tables: vec![table.into()],
            joins: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderBy {
    pub key: Term,
    pub dir: Direction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitQuery {
    pub distinct: bool,
    pub select: Vec<Term>,
    pub from: FromClause,
    pub filter: Option<Predicate>,
    pub group_by: Vec<ColumnRef>,
    pub having: Option<Predicate>,
    pub order_by: Option<OrderBy>,
    pub limit: Option<u64>,
}

impl UnitQuery {
    pub fn new(select: Vec<Term>, from: FromClause) -> Self {
        UnitQuery {
            distinct: false,
            select,
            from,
            filter: None,
            group_by: vec![],
            having: None,
            order_by: None,
            limit: None,
        }
    }

    pub fn has_aggregate(&self) -> bool {
        self.select.iter().any(|t| t.agg.is_some())
    }

    pub fn subqueries(&self) -> Vec<&Query> {
        let mut out = Vec::new();
        for p in [&self.filter, &self.having].into_iter().flatten() {
            for c in p.conditions() {
                if let Rhs::Subquery(q) = &c.rhs {
                    out.push(q.as_ref());
                }
            }
        }
        out
    }
}

/// A full query: one unit query, or a set operation over two.
#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Unit(Box<UnitQuery>),
    Compound {
        op: SetOperator,
        left: Box<UnitQuery>,
        right: Box<UnitQuery>,
    },
}

impl Query {
    pub fn unit(u: UnitQuery) -> Self {
        Query::Unit(Box::new(u))
    }

    pub fn units(&self) -> Vec<&UnitQuery> {
        match self {
            Query::Unit(u) => vec![u],
            Query::Compound { left, right, .. } => vec![left, right],
        }
    }

    /// Nesting depth: 0 for a flat query.
    pub fn nesting_depth(&self) -> usize {
        self.units()
            .iter()
            .flat_map(|u| u.subqueries())
            .map(|q| 1 + q.nesting_depth())
            .max()
            .unwrap_or(0)
    }

    /// Generation-side canonical form: HAVING needs GROUP BY and LIMIT needs ORDER BY.
    pub fn is_canonical(&self) -> bool {
        self.units().iter().all(|u| {
            (u.having.is_none() || !u.group_by.is_empty())
                && (u.limit.is_none() || u.order_by.is_some())
                && u.subqueries().iter().all(|q| q.is_canonical())
        })
    }
}

/// Clause phases in SQL execution order. Shared by the evaluator and the
/// question composer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Where,
    GroupBy,
    Having,
    Select,
    OrderBy,
    Limit,
}

pub const EXECUTION_ORDER: [Phase; 6] = [
    Phase::Where,
    Phase::GroupBy,
    Phase::Having,
    Phase::Select,
    Phase::OrderBy,
    Phase::Limit,
];

impl Phase {
    pub fn rank(self) -> usize {
        EXECUTION_ORDER.iter().position(|p| *p == self).unwrap()
    }
}
