//! In-memory execution of the supported SQL subset.
//!
//! NULL comparisons are false rather than unknown, aggregates skip NULLs,
//! and rows come out in insertion order unless ORDER BY says otherwise.

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::schema::DatabaseContent;
use crate::sql::{
    Aggregate, ArithOp, ColumnRef, CompareOp, Expr, GroupKey, Phase, Predicate, Query, Rhs, SetOperator, Term,
    UnitQuery, Value, EXECUTION_ORDER,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivideByZero,
    #[error("type error: {0}")]
    TypeError(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("ambiguous column `{0}`")]
    AmbiguousColumn(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultTable {
    /// Tab-separated rendering with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = self.columns.join("\t");
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }
}

pub fn execute(q: &Query, content: &DatabaseContent) -> Result<ResultTable, EvalError> {
    match q {
        Query::Unit(u) => execute_unit(u, content),
        Query::Compound { op, left, right } => {
            let l = execute_unit(left, content)?;
            let r = execute_unit(right, content)?;
            if l.columns.len() != r.columns.len() {
                return Err(EvalError::TypeError(format!(
                    "{} operands have {} and {} columns",
                    op.keyword(),
                    l.columns.len(),
                    r.columns.len()
                )));
            }
            let key = |row: &[Value]| row.iter().map(Value::group_key).collect::<Vec<_>>();
            let right_keys: HashSet<Vec<GroupKey>> = r.rows.iter().map(|x| key(x)).collect();
            let mut seen = HashSet::new();
            let mut rows = Vec::new();
            let candidates: Box<dyn Iterator<Item = &Vec<Value>>> = match op {
                SetOperator::Union => Box::new(l.rows.iter().chain(r.rows.iter())),
                _ => Box::new(l.rows.iter()),
            };
            for row in candidates {
                let k = key(row);
                let keep = match op {
                    SetOperator::Union => true,
                    SetOperator::Intersect => right_keys.contains(&k),
                    SetOperator::Except => !right_keys.contains(&k),
                };
                if keep && seen.insert(k) {
                    rows.push(row.clone());
                }
            }
            Ok(ResultTable {
                columns: l.columns,
                rows,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Compiled forms: column references resolved to positions in the joined row.

#[derive(Debug, Clone)]
enum CExpr {
    Star,
    Col(usize),
    Bin(ArithOp, usize, usize),
}

#[derive(Debug, Clone)]
struct CTerm {
    agg: Option<Aggregate>,
    distinct: bool,
    expr: CExpr,
}

#[derive(Debug, Clone)]
enum CRhs {
    Value(Value),
    Between(Value, Value),
    Expr(CExpr),
    List { values: HashSet<GroupKey>, has_null: bool },
    Scalar(Value),
}

#[derive(Debug, Clone)]
enum CPred {
    Cond { lhs: CTerm, op: CompareOp, rhs: CRhs },
    And(Box<CPred>, Box<CPred>),
    Or(Box<CPred>, Box<CPred>),
}

struct Relation {
    /// (table, column) per position.
    columns: Vec<(String, String)>,
    rows: Vec<Vec<Value>>,
}

impl Relation {
    fn resolve(&self, c: &ColumnRef) -> Result<usize, EvalError> {
        let mut hits = self.columns.iter().enumerate().filter(|(_, (t, col))| {
            col.eq_ignore_ascii_case(&c.column) && c.table.as_ref().is_none_or(|want| want.eq_ignore_ascii_case(t))
        });
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Ok(i),
            (Some(_), Some(_)) => Err(EvalError::AmbiguousColumn(c.to_string())),
            (None, _) => Err(EvalError::UnknownColumn(c.to_string())),
        }
    }

    fn compile_expr(&self, e: &Expr) -> Result<CExpr, EvalError> {
        Ok(match e {
            Expr::Star => CExpr::Star,
            Expr::Column(c) => CExpr::Col(self.resolve(c)?),
            Expr::Binary { op, left, right } => CExpr::Bin(*op, self.resolve(left)?, self.resolve(right)?),
        })
    }

    fn compile_term(&self, t: &Term) -> Result<CTerm, EvalError> {
        Ok(CTerm {
            agg: t.agg,
            distinct: t.distinct,
            expr: self.compile_expr(&t.expr)?,
        })
    }

    fn compile_pred(&self, p: &Predicate, content: &DatabaseContent) -> Result<CPred, EvalError> {
        Ok(match p {
            Predicate::And(a, b) => CPred::And(
                Box::new(self.compile_pred(a, content)?),
                Box::new(self.compile_pred(b, content)?),
            ),
            Predicate::Or(a, b) => CPred::Or(
                Box::new(self.compile_pred(a, content)?),
                Box::new(self.compile_pred(b, content)?),
            ),
            Predicate::Cond(c) => {
                let lhs = self.compile_term(&c.lhs)?;
                let rhs = match &c.rhs {
                    Rhs::Value(v) => CRhs::Value(v.clone()),
                    Rhs::Between(a, b) => CRhs::Between(a.clone(), b.clone()),
                    Rhs::Column(e) => CRhs::Expr(self.compile_expr(e)?),
                    Rhs::Subquery(q) => {
                        let res = execute(q, content)?;
                        if res.columns.len() != 1 {
                            return Err(EvalError::TypeError(format!(
                                "subquery returns {} columns",
                                res.columns.len()
                            )));
                        }
                        let vals = res.rows.into_iter().map(|mut r| r.swap_remove(0));
                        match c.op {
                            CompareOp::In | CompareOp::NotIn => {
                                let mut has_null = false;
                                let mut values = HashSet::new();
                                for v in vals {
                                    if v.is_null() {
                                        has_null = true;
                                    } else {
                                        values.insert(v.group_key());
                                    }
                                }
                                CRhs::List { values, has_null }
                            }
                            _ => CRhs::Scalar(vals.into_iter().next().unwrap_or(Value::Null)),
                        }
                    }
                };
                CPred::Cond { lhs, op: c.op, rhs }
            }
        })
    }
}

fn build_from(u: &UnitQuery, content: &DatabaseContent) -> Result<Relation, EvalError> {
    let schema = &content.schema;
    let mut rel: Option<Relation> = None;
    let mut joined: Vec<String> = Vec::new();
    for name in &u.from.tables {
        let ti = schema
            .table_index(name)
            .ok_or_else(|| EvalError::UnknownTable(name.clone()))?;
        let table = &schema.tables[ti];
        let cols: Vec<(String, String)> = table
            .columns
            .iter()
            .map(|c| (table.name.clone(), c.name.clone()))
            .collect();
        let rows = content.rows(ti);
        let next = match rel.take() {
            None => Relation {
                columns: cols,
                rows: rows.to_vec(),
            },
            Some(left) => {
                let right = Relation {
                    columns: cols,
                    rows: vec![],
                };
                // edges between the new table and any already joined table
                let mut pairs: Vec<(usize, usize)> = Vec::new();
                for e in &u.from.joins {
                    for (a, b) in [(&e.left, &e.right), (&e.right, &e.left)] {
                        let a_in = a
                            .table
                            .as_ref()
                            .is_some_and(|t| joined.iter().any(|j| j.eq_ignore_ascii_case(t)));
                        let b_new = b.table.as_ref().is_some_and(|t| t.eq_ignore_ascii_case(name));
                        if a_in && b_new {
                            pairs.push((left.resolve(a)?, right.resolve(b)?));
                        }
                    }
                }
                join(left, right.columns, rows, &pairs)
            }
        };
        joined.push(table.name.clone());
        rel = Some(next);
    }
    rel.ok_or_else(|| EvalError::TypeError("empty FROM".into()))
}

fn join(
    left: Relation,
    right_cols: Vec<(String, String)>,
    right_rows: &[Vec<Value>],
    pairs: &[(usize, usize)],
) -> Relation {
    let mut columns = left.columns;
    columns.extend(right_cols);
    let mut rows = Vec::new();
    match pairs.split_first() {
        None => {
            for l in &left.rows {
                for r in right_rows {
                    let mut row = l.clone();
                    row.extend(r.iter().cloned());
                    rows.push(row);
                }
            }
        }
        Some((&(lk, rk), rest)) => {
            let mut index: HashMap<GroupKey, Vec<usize>> = HashMap::new();
            for (i, r) in right_rows.iter().enumerate() {
                if !r[rk].is_null() {
                    index.entry(r[rk].group_key()).or_default().push(i);
                }
            }
            for l in &left.rows {
                if l[lk].is_null() {
                    continue;
                }
                let Some(matches) = index.get(&l[lk].group_key()) else {
                    continue;
                };
                for &i in matches {
                    let r = &right_rows[i];
                    if rest
                        .iter()
                        .all(|&(a, b)| !l[a].is_null() && compare(&l[a], &r[b]) == Some(std::cmp::Ordering::Equal))
                    {
                        let mut row = l.clone();
                        row.extend(r.iter().cloned());
                        rows.push(row);
                    }
                }
            }
        }
    }
    Relation { columns, rows }
}

// ---------------------------------------------------------------------------
// Scalar helpers

/// Comparison with NULL yielding None.
fn compare(a: &Value, b: &Value) -> Option<std::cmp::Ordering> {
    if a.is_null() || b.is_null() {
        None
    } else {
        Some(a.total_cmp(b))
    }
}

fn arith(op: ArithOp, a: &Value, b: &Value) -> Result<Value, EvalError> {
    if a.is_null() || b.is_null() {
        return Ok(Value::Null);
    }
    if !a.is_number() || !b.is_number() {
        return Err(EvalError::TypeError(format!("arithmetic on {a} and {b}")));
    }
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        let r = match op {
            ArithOp::Add => x.checked_add(*y),
            ArithOp::Sub => x.checked_sub(*y),
            ArithOp::Mul => x.checked_mul(*y),
            ArithOp::Div => {
                if *y == 0 {
                    return Err(EvalError::DivideByZero);
                }
                x.checked_div(*y)
            }
        };
        if let Some(r) = r {
            return Ok(Value::Int(r));
        }
    }
    let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
    Ok(Value::Real(match op {
        ArithOp::Add => x + y,
        ArithOp::Sub => x - y,
        ArithOp::Mul => x * y,
        ArithOp::Div => {
            if y == 0.0 {
                return Err(EvalError::DivideByZero);
            }
            x / y
        }
    }))
}

/// SQL LIKE: `%` any run, `_` one character, ASCII case-insensitive.
pub fn like(text: &str, pattern: &str) -> bool {
    let t: Vec<char> = text.chars().map(|c| c.to_ascii_lowercase()).collect();
    let p: Vec<char> = pattern.chars().map(|c| c.to_ascii_lowercase()).collect();
    let (mut ti, mut pi) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '_' || (p[pi] != '%' && p[pi] == t[ti])) {
            ti += 1;
            pi += 1;
        } else if pi < p.len() && p[pi] == '%' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '%')
}

fn eval_expr(e: &CExpr, row: &[Value]) -> Result<Value, EvalError> {
    match e {
        CExpr::Star => Err(EvalError::TypeError("`*` outside count(*)".into())),
        CExpr::Col(i) => Ok(row[*i].clone()),
        CExpr::Bin(op, a, b) => arith(*op, &row[*a], &row[*b]),
    }
}

/// Neumaier-compensated sum.
fn sum_f64(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

fn aggregate(agg: Aggregate, distinct: bool, expr: &CExpr, rows: &[&[Value]]) -> Result<Value, EvalError> {
    if let CExpr::Star = expr {
        return match agg {
            Aggregate::Count => Ok(Value::Int(rows.len() as i64)),
            _ => Err(EvalError::TypeError(format!("{}(*)", agg.name()))),
        };
    }
    let mut vals = Vec::with_capacity(rows.len());
    let mut seen = HashSet::new();
    for r in rows {
        let v = eval_expr(expr, r)?;
        if v.is_null() || (distinct && !seen.insert(v.group_key())) {
            continue;
        }
        vals.push(v);
    }
    Ok(match agg {
        Aggregate::Count => Value::Int(vals.len() as i64),
        Aggregate::Max => vals.into_iter().max_by(|a, b| a.total_cmp(b)).unwrap_or(Value::Null),
        Aggregate::Min => vals.into_iter().min_by(|a, b| a.total_cmp(b)).unwrap_or(Value::Null),
        Aggregate::Sum | Aggregate::Avg => {
            if let Some(bad) = vals.iter().find(|v| !v.is_number()) {
                return Err(EvalError::TypeError(format!("{} over {bad}", agg.name())));
            }
            if vals.is_empty() {
                Value::Null
            } else if agg == Aggregate::Avg {
                Value::Real(sum_f64(vals.iter().map(|v| v.as_f64().unwrap())) / vals.len() as f64)
            } else if vals.iter().all(|v| matches!(v, Value::Int(_))) {
                let mut acc: Option<i64> = Some(0);
                for v in &vals {
                    if let (Some(a), Value::Int(x)) = (acc, v) {
                        acc = a.checked_add(*x);
                    }
                }
                match acc {
                    Some(a) => Value::Int(a),
                    None => Value::Real(sum_f64(vals.iter().map(|v| v.as_f64().unwrap()))),
                }
            } else {
                Value::Real(sum_f64(vals.iter().map(|v| v.as_f64().unwrap())))
            }
        }
    })
}

/// Evaluates a term over a group; plain terms read the group's first row.
fn eval_term(t: &CTerm, rows: &[&[Value]]) -> Result<Value, EvalError> {
    match t.agg {
        Some(a) => aggregate(a, t.distinct, &t.expr, rows),
        None => match rows.first() {
            Some(r) => eval_expr(&t.expr, r),
            None => Ok(Value::Null),
        },
    }
}

fn eval_pred(p: &CPred, rows: &[&[Value]]) -> Result<bool, EvalError> {
    match p {
        CPred::And(a, b) => Ok(eval_pred(a, rows)? && eval_pred(b, rows)?),
        CPred::Or(a, b) => Ok(eval_pred(a, rows)? || eval_pred(b, rows)?),
        CPred::Cond { lhs, op, rhs } => {
            let l = eval_term(lhs, rows)?;
            let r = match rhs {
                CRhs::Value(v) | CRhs::Scalar(v) => v.clone(),
                CRhs::Expr(e) => match rows.first() {
                    Some(row) => eval_expr(e, row)?,
                    None => Value::Null,
                },
                CRhs::Between(lo, hi) => {
                    return Ok(matches!(compare(&l, lo), Some(o) if o.is_ge())
                        && matches!(compare(&l, hi), Some(o) if o.is_le()));
                }
                CRhs::List { values, has_null } => {
                    if l.is_null() {
                        return Ok(false);
                    }
                    let found = values.contains(&l.group_key());
                    return Ok(match op {
                        CompareOp::In => found,
                        CompareOp::NotIn => !found && !has_null,
                        _ => return Err(EvalError::TypeError(format!("{} with a row list", op.symbol()))),
                    });
                }
            };
            Ok(match op {
                CompareOp::Like => {
                    if l.is_null() || r.is_null() {
                        false
                    } else {
                        like(&l.to_string(), &r.to_string())
                    }
                }
                CompareOp::In | CompareOp::NotIn | CompareOp::Between => {
                    return Err(EvalError::TypeError(format!("{} needs a list", op.symbol())))
                }
                _ => match compare(&l, &r) {
                    None => false,
                    Some(o) => match op {
                        CompareOp::Eq => o.is_eq(),
                        CompareOp::Ne => o.is_ne(),
                        CompareOp::Gt => o.is_gt(),
                        CompareOp::Ge => o.is_ge(),
                        CompareOp::Lt => o.is_lt(),
                        CompareOp::Le => o.is_le(),
                        _ => unreachable!(),
                    },
                },
            })
        }
    }
}

fn pred_has_agg(p: &Predicate) -> bool {
    p.conditions().iter().any(|c| c.lhs.agg.is_some())
}

fn term_label(t: &Term) -> String {
    let e = match &t.expr {
        Expr::Star => "*".to_string(),
        Expr::Column(c) => c.to_string(),
        Expr::Binary { op, left, right } => format!("{left} {} {right}", op.symbol()),
    };
    match t.agg {
        Some(a) if t.distinct => format!("{}(DISTINCT {e})", a.name()),
        Some(a) => format!("{}({e})", a.name()),
        None => e,
    }
}

fn unique_labels(labels: Vec<String>) -> Vec<String> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let taken: HashSet<String> = labels.iter().cloned().collect();
    let mut out = Vec::with_capacity(labels.len());
    let mut used = HashSet::new();
    for l in labels {
        if used.insert(l.clone()) {
            out.push(l);
            continue;
        }
        let n = counts.entry(l.clone()).or_insert(0);
        loop {
            *n += 1;
            let cand = format!("{l}_{n}");
            if !taken.contains(&cand) && used.insert(cand.clone()) {
                out.push(cand);
                break;
            }
        }
    }
    out
}

struct Projected {
    group: Vec<usize>,
    values: Vec<Value>,
}

fn execute_unit(u: &UnitQuery, content: &DatabaseContent) -> Result<ResultTable, EvalError> {
    let rel = build_from(u, content)?;
    let filter = u.filter.as_ref().map(|p| rel.compile_pred(p, content)).transpose()?;
    if let Some(p) = &u.filter {
        if pred_has_agg(p) {
            return Err(EvalError::TypeError("aggregate in WHERE".into()));
        }
    }
    let having = u.having.as_ref().map(|p| rel.compile_pred(p, content)).transpose()?;
    let group_cols = u
        .group_by
        .iter()
        .map(|c| rel.resolve(c))
        .collect::<Result<Vec<_>, _>>()?;
    // select items; `*` expands to every column
    let mut select: Vec<CTerm> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for t in &u.select {
        if t.agg.is_none() && t.expr == Expr::Star {
            for (i, (_, c)) in rel.columns.iter().enumerate() {
                select.push(CTerm {
                    agg: None,
                    distinct: false,
                    expr: CExpr::Col(i),
                });
                labels.push(c.clone());
            }
        } else {
            select.push(rel.compile_term(t)?);
            labels.push(term_label(t));
        }
    }
    let order = u
        .order_by
        .as_ref()
        .map(|o| rel.compile_term(&o.key).map(|t| (t, o.dir)))
        .transpose()?;
    let aggregated = !u.group_by.is_empty()
        || u.has_aggregate()
        || u.having.is_some()
        || u.order_by.as_ref().is_some_and(|o| o.key.agg.is_some());

    // A lone min() or max() makes bare columns read the row holding the extreme.
    let mut aggs: Vec<&Term> = u.select.iter().filter(|t| t.agg.is_some()).collect();
    if let Some(h) = &u.having {
        aggs.extend(h.conditions().into_iter().map(|c| &c.lhs).filter(|t| t.agg.is_some()));
    }
    if let Some(o) = u.order_by.as_ref().filter(|o| o.key.agg.is_some()) {
        aggs.push(&o.key);
    }
    let mut distinct_aggs: Vec<&Term> = Vec::new();
    for t in aggs {
        if !distinct_aggs.contains(&t) {
            distinct_aggs.push(t);
        }
    }
    let extreme = match distinct_aggs.as_slice() {
        [t] if matches!(t.agg, Some(Aggregate::Max | Aggregate::Min)) && t.expr != Expr::Star => {
            Some((rel.compile_term(t)?, t.agg == Some(Aggregate::Max)))
        }
        _ => None,
    };
    let bare_row = |rows: &[&[Value]]| -> Result<usize, EvalError> {
        let Some((t, max)) = &extreme else {
            return Ok(0);
        };
        let mut best: Option<(usize, Value)> = None;
        for (i, r) in rows.iter().enumerate() {
            let v = eval_expr(&t.expr, r)?;
            if v.is_null() {
                continue;
            }
            let better = match &best {
                None => true,
                Some((_, b)) => {
                    let o = v.total_cmp(b);
                    if *max {
                        o.is_gt()
                    } else {
                        o.is_lt()
                    }
                }
            };
            if better {
                best = Some((i, v));
            }
        }
        Ok(best.map_or(0, |(i, _)| i))
    };
    let term_value = |t: &CTerm, rows: &[&[Value]]| -> Result<Value, EvalError> {
        if t.agg.is_none() && !rows.is_empty() {
            let i = bare_row(rows)?;
            eval_term(t, &rows[i..=i])
        } else {
            eval_term(t, rows)
        }
    };

    let mut kept: Vec<usize> = (0..rel.rows.len()).collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut out: Vec<Projected> = Vec::new();
    let rows_of = |g: &[usize]| -> Vec<&[Value]> { g.iter().map(|&i| rel.rows[i].as_slice()).collect() };

    for phase in EXECUTION_ORDER {
        match phase {
            Phase::Where => {
                if let Some(p) = &filter {
                    let mut next = Vec::with_capacity(kept.len());
                    for &i in &kept {
                        if eval_pred(p, &[rel.rows[i].as_slice()])? {
                            next.push(i);
                        }
                    }
                    kept = next;
                }
            }
            Phase::GroupBy => {
                if !group_cols.is_empty() {
                    let mut index: HashMap<Vec<GroupKey>, usize> = HashMap::new();
                    for &i in &kept {
                        let key: Vec<GroupKey> = group_cols.iter().map(|&c| rel.rows[i][c].group_key()).collect();
                        let slot = *index.entry(key).or_insert_with(|| {
                            groups.push(vec![]);
                            groups.len() - 1
                        });
                        groups[slot].push(i);
                    }
                } else if aggregated {
                    groups.push(kept.clone());
                } else {
                    groups = kept.iter().map(|&i| vec![i]).collect();
                }
            }
            Phase::Having => {
                if let Some(p) = &having {
                    let mut next = Vec::with_capacity(groups.len());
                    for g in std::mem::take(&mut groups) {
                        if eval_pred(p, &rows_of(&g))? {
                            next.push(g);
                        }
                    }
                    groups = next;
                }
            }
            Phase::Select => {
                let mut seen = HashSet::new();
                for g in std::mem::take(&mut groups) {
                    let rows = rows_of(&g);
                    let values = select
                        .iter()
                        .map(|t| term_value(t, &rows))
                        .collect::<Result<Vec<_>, _>>()?;
                    if u.distinct && !seen.insert(values.iter().map(Value::group_key).collect::<Vec<_>>()) {
                        continue;
                    }
                    out.push(Projected { group: g, values });
                }
            }
            Phase::OrderBy => {
                if let Some((key, dir)) = &order {
                    let mut keyed = Vec::with_capacity(out.len());
                    for p in std::mem::take(&mut out) {
                        let k = term_value(key, &rows_of(&p.group))?;
                        keyed.push((k, p));
                    }
                    keyed.sort_by(|(a, _), (b, _)| match dir {
                        crate::sql::Direction::Asc => a.total_cmp(b),
                        crate::sql::Direction::Desc => b.total_cmp(a),
                    });
                    out = keyed.into_iter().map(|(_, p)| p).collect();
                }
            }
            Phase::Limit => {
                if let Some(n) = u.limit {
                    out.truncate(n as usize);
                }
            }
        }
    }
    Ok(ResultTable {
        columns: unique_labels(labels),
        rows: out.into_iter().map(|p| p.values).collect(),
    })
}

impl fmt::Display for ResultTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_tsv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnType::*, Schema};
    use crate::sql::parse_sql;
    use std::sync::Arc;

    fn db() -> DatabaseContent {
        let s = Arc::new(
            Schema::new("wta")
                .with_table(
                    "matches",
                    &[("draw_size", Number), ("loser_age", Number), ("loser_name", Text)],
                    false,
                )
                .with_table("t", &[("a", Number), ("b", Number)], false)
                .with_table("e", &[("x", Number)], false),
        );
        DatabaseContent::from_rows(
            s,
            [
                (
                    "matches".to_string(),
                    vec![
                        vec![Value::Int(32), Value::Int(25), Value::Text("Ann".into())],
                        vec![Value::Int(64), Value::Int(9), Value::Text("Bea".into())],
                    ],
                ),
                (
                    "t".to_string(),
                    vec![vec![Value::Int(4), Value::Int(2)], vec![Value::Int(1), Value::Int(0)]],
                ),
            ],
        )
        .unwrap()
    }

    fn run(sql: &str) -> Result<ResultTable, EvalError> {
        let c = db();
        let q = parse_sql(sql, Some(&c.schema)).unwrap();
        execute(&q, &c)
    }

    #[test]
    fn case_study_query() {
        let r = run("SELECT draw_size FROM matches WHERE loser_age > 10").unwrap();
        assert_eq!(r.rows, vec![vec![Value::Int(32)]]);
    }

    #[test]
    fn count_on_empty_table() {
        let r = run("SELECT count(*) FROM e").unwrap();
        assert_eq!(r.rows, vec![vec![Value::Int(0)]]);
        let r = run("SELECT max(x) FROM e").unwrap();
        assert_eq!(r.rows, vec![vec![Value::Null]]);
    }

    #[test]
    fn divide_by_zero() {
        assert_eq!(run("SELECT a / b FROM t"), Err(EvalError::DivideByZero));
        assert_eq!(
            run("SELECT b / a FROM t").unwrap().rows,
            vec![vec![Value::Int(0)], vec![Value::Int(0)]]
        );
    }

    #[test]
    fn like_matching() {
        assert!(like("California", "%forn%"));
        assert!(like("abc", "a_c"));
        assert!(like("ABC", "abc"));
        assert!(!like("abc", "a_"));
        assert!(like("", "%"));
    }

    #[test]
    fn order_and_limit() {
        let r = run("SELECT loser_name FROM matches ORDER BY loser_age ASC LIMIT 1").unwrap();
        assert_eq!(r.rows, vec![vec![Value::Text("Bea".into())]]);
    }

    #[test]
    fn labels_are_disambiguated() {
        let r = run("SELECT a, a FROM t").unwrap();
        assert_eq!(r.columns, ["a", "a_1"]);
    }

    #[test]
    fn nested_scalar_and_in() {
        let r = run("SELECT loser_name FROM matches WHERE loser_age < (SELECT max(loser_age) FROM matches)").unwrap();
        assert_eq!(r.rows, vec![vec![Value::Text("Bea".into())]]);
        let r = run("SELECT a FROM t WHERE a NOT IN (SELECT draw_size FROM matches)").unwrap();
        assert_eq!(r.rows.len(), 2);
    }

    #[test]
    fn set_operations_deduplicate() {
        let r = run("SELECT b FROM t UNION SELECT b FROM t").unwrap();
        assert_eq!(r.rows.len(), 2);
        let r = run("SELECT a FROM t EXCEPT SELECT a FROM t WHERE b = 0").unwrap();
        assert_eq!(r.rows, vec![vec![Value::Int(4)]]);
    }
}
