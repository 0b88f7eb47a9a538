//! Filling sketch trees with database items to get executable queries.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eval::{execute, EvalError};
use crate::grammar::SketchTree;
use crate::schema::{join_path, Column, ColumnId, ColumnType, DatabaseContent, Schema};
use crate::sql::{
    extract_pattern, parse_pattern, serialize_sql, Aggregate, ArithOp, ColumnRef, CompareOp, CondShape, Condition,
    Conjunction, Direction, Expr, FromClause, OrderBy, Pattern, PatternError, PredShape, Predicate, Query, QueryShape,
    Rhs, RhsShape, Term, TermShape, UnitQuery, UnitShape, Value,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FillConfig {
    pub rng_seed: u64,
    pub max_fills: usize,
    /// Shift sampled integers by ±1 now and then, so literals may fall
    /// outside the column's content.
    pub allow_value_perturbation: bool,
}

impl Default for FillConfig {
    fn default() -> Self {
        FillConfig {
            rng_seed: 0,
            max_fills: 8,
            allow_value_perturbation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FillError {
    #[error("no compatible columns: {0}")]
    NoCompatibleColumns(String),
    #[error(transparent)]
    Pattern(#[from] PatternError),
}

const LIMITS: [u64; 3] = [1, 3, 5];
const ORDERING_OPS: [CompareOp; 6] = [
    CompareOp::Eq,
    CompareOp::Ne,
    CompareOp::Gt,
    CompareOp::Ge,
    CompareOp::Lt,
    CompareOp::Le,
];

/// Stable per-(seed, database, sketch) seed, independent of scheduling.
pub fn derive_seed(seed: u64, db_id: &str, sketch_id: usize) -> u64 {
    const PRIME: u64 = 0x100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    feed(&seed.to_le_bytes());
    feed(db_id.as_bytes());
    feed(&[0xff]);
    feed(&(sketch_id as u64).to_le_bytes());
    h
}

/// Fills a sketch; incompatibility is logged and yields no queries.
pub fn fill_sketch(sketch: &SketchTree, content: &DatabaseContent, cfg: &FillConfig) -> Vec<Query> {
    let pattern = sketch.flatten();
    match fill_pattern(&pattern, content, cfg) {
        Ok(qs) => qs,
        Err(e) => {
            log::debug!("{}: `{pattern}`: {e}", content.db_id());
            vec![]
        }
    }
}

/// Up to `cfg.max_fills` distinct queries whose pattern is `pattern`.
pub fn fill_pattern(pattern: &Pattern, content: &DatabaseContent, cfg: &FillConfig) -> Result<Vec<Query>, FillError> {
    let shape = parse_pattern(pattern)?;
    let schema = &*content.schema;
    let tables: Vec<usize> = (0..schema.tables.len())
        .filter(|&t| !schema.tables[t].columns.is_empty())
        .collect();
    if tables.is_empty() {
        return Err(FillError::NoCompatibleColumns("schema has no columns".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let attempts = cfg.max_fills.max(1) * 3 + 4;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut reason = None;
    for _ in 0..attempts {
        if out.len() >= cfg.max_fills {
            break;
        }
        let primary = *tables.choose(&mut rng).unwrap();
        let mut b = Builder {
            rng: &mut rng,
            content,
            schema,
            perturb: cfg.allow_value_perturbation,
        };
        match b.query(&shape, primary) {
            Ok(q) => {
                if extract_pattern(&q) != *pattern {
                    log::error!("fill of `{pattern}` produced `{}`", extract_pattern(&q));
                    continue;
                }
                if seen.insert(serialize_sql(&q)) {
                    out.push(q);
                }
            }
            Err(r) => reason = Some(r),
        }
    }
    if out.is_empty() {
        if let Some(r) = reason {
            return Err(FillError::NoCompatibleColumns(r));
        }
    }
    Ok(out)
}

/// Queries that execute without error, in input order, and the rest with
/// their errors.
#[derive(Debug, Clone, Default)]
pub struct Filtered {
    pub kept: Vec<Query>,
    pub rejected: Vec<(usize, EvalError)>,
}

pub fn filter_executable(queries: Vec<Query>, content: &DatabaseContent) -> Filtered {
    let mut f = Filtered::default();
    for (i, q) in queries.into_iter().enumerate() {
        match execute(&q, content) {
            Ok(_) => f.kept.push(q),
            Err(e) => {
                log::trace!("dropping `{}`: {e}", serialize_sql(&q));
                f.rejected.push((i, e));
            }
        }
    }
    f
}

// ---------------------------------------------------------------------------

type Fill<T> = Result<T, String>;

struct Scope {
    /// Primary table first, then its FK neighbours by name.
    pool: Vec<usize>,
    used: Vec<usize>,
}

impl Scope {
    fn touch(&mut self, t: usize) {
        if !self.used.contains(&t) {
            self.used.push(t);
        }
    }
}

struct Builder<'a, R: Rng> {
    rng: &'a mut R,
    content: &'a DatabaseContent,
    schema: &'a Schema,
    perturb: bool,
}

fn is_orderable(c: &Column) -> bool {
    matches!(c.kind, ColumnType::Number | ColumnType::Time)
}

impl<R: Rng> Builder<'_, R> {
    fn scope(&self, primary: usize, with_neighbours: bool) -> Scope {
        let mut pool = vec![primary];
        if with_neighbours {
            let mut n: Vec<usize> = self
                .schema
                .join_edges()
                .filter_map(|fk| {
                    if fk.from.table == primary {
                        Some(fk.to.table)
                    } else if fk.to.table == primary {
                        Some(fk.from.table)
                    } else {
                        None
                    }
                })
                .collect();
            n.sort_by_key(|&t| (self.schema.tables[t].name.to_lowercase(), t));
            n.dedup();
            pool.extend(n);
        }
        Scope { pool, used: vec![] }
    }

    fn candidates(&self, tables: &[usize], ok: &dyn Fn(ColumnId, &Column) -> bool) -> Vec<ColumnId> {
        let mut out = Vec::new();
        for &t in tables {
            for (c, col) in self.schema.tables[t].columns.iter().enumerate() {
                let id = ColumnId { table: t, column: c };
                if ok(id, col) {
                    out.push(id);
                }
            }
        }
        out
    }

    /// Picks a column from the primary table, or now and then from a neighbour.
    fn pick(&mut self, sc: &mut Scope, what: &str, ok: &dyn Fn(ColumnId, &Column) -> bool) -> Fill<ColumnId> {
        let primary = self.candidates(&sc.pool[..1], ok);
        let others = self.candidates(&sc.pool[1..], ok);
        let use_other = !others.is_empty() && (primary.is_empty() || self.rng.gen_bool(0.2));
        let set = if use_other { others } else { primary };
        let id = *set.choose(self.rng).ok_or_else(|| format!("no {what} column"))?;
        sc.touch(id.table);
        Ok(id)
    }

    fn has_values(&self, id: ColumnId) -> bool {
        !self.content.distinct_values(id).is_empty()
    }

    fn cref(&self, id: ColumnId) -> ColumnRef {
        ColumnRef::qualified(
            self.schema.tables[id.table].name.clone(),
            self.schema.col(id).name.clone(),
        )
    }

    fn sample_value(&mut self, id: ColumnId) -> Fill<Value> {
        let vals = self.content.distinct_values(id);
        let v = vals.choose(self.rng).cloned().ok_or("column has no values")?;
        Ok(match v {
            Value::Int(i) if self.perturb && self.rng.gen_bool(0.3) => {
                Value::Int(i.saturating_add(if self.rng.gen_bool(0.5) { 1 } else { -1 }))
            }
            other => other,
        })
    }

    fn query(&mut self, shape: &QueryShape, primary: usize) -> Fill<Query> {
        match shape {
            QueryShape::Unit(u) => {
                let mut sc = self.scope(primary, true);
                let unit = self.unit(u, &mut sc, None, true)?;
                Ok(Query::unit(self.finish(unit, &sc)?))
            }
            QueryShape::Compound { op, left, right } => {
                let mut lsc = self.scope(primary, true);
                let l = self.unit(left, &mut lsc, None, false)?;
                let mut rsc = self.scope(primary, true);
                let r = self.unit(right, &mut rsc, Some(&l.select), false)?;
                let (l, r) = (self.finish(l, &lsc)?, self.finish(r, &rsc)?);
                if l == r {
                    return Err("identical set operation branches".into());
                }
                Ok(Query::Compound {
                    op: *op,
                    left: Box::new(l),
                    right: Box::new(r),
                })
            }
        }
    }

    /// Sets FROM from the used tables and drops qualifiers on single-table queries.
    fn finish(&self, mut u: UnitQuery, sc: &Scope) -> Fill<UnitQuery> {
        let used: Vec<usize> = if sc.used.is_empty() {
            vec![sc.pool[0]]
        } else {
            sc.used.clone()
        };
        if used.len() == 1 {
            for_each_column(&mut u, &mut |c| c.table = None);
            u.from = FromClause::single(self.schema.tables[used[0]].name.clone());
        } else {
            let names: Vec<&str> = used.iter().map(|&t| self.schema.tables[t].name.as_str()).collect();
            let path = join_path(self.schema, &names).map_err(|e| e.to_string())?;
            u.from = FromClause {
                tables: path.tables,
                joins: path.edges,
            };
        }
        Ok(u)
    }

    fn calc_pair(&mut self, sc: &mut Scope) -> Fill<(ColumnId, ColumnId)> {
        let mut tables: Vec<usize> = sc
            .pool
            .iter()
            .copied()
            .filter(|&t| {
                self.schema.tables[t]
                    .columns
                    .iter()
                    .filter(|c| c.kind == ColumnType::Number)
                    .count()
                    >= 2
            })
            .collect();
        if tables.len() > 1 && tables[0] == sc.pool[0] && !self.rng.gen_bool(0.2) {
            tables.truncate(1);
        }
        let t = *tables.choose(self.rng).ok_or("no table with two number columns")?;
        let nums = self.candidates(&[t], &|_, c| c.kind == ColumnType::Number);
        let pair: Vec<ColumnId> = nums.choose_multiple(self.rng, 2).copied().collect();
        sc.touch(t);
        Ok((pair[0], pair[1]))
    }

    fn calc_expr(&mut self, sc: &mut Scope) -> Fill<(Expr, ColumnId)> {
        let (a, b) = self.calc_pair(sc)?;
        let op = *ArithOp::ALL.choose(self.rng).unwrap();
        Ok((
            Expr::Binary {
                op,
                left: self.cref(a),
                right: self.cref(b),
            },
            a,
        ))
    }

    /// Arithmetic over plain columns. Under GROUP BY both columns come from
    /// the grouped table so the value is fixed within a group.
    fn plain_calc(&mut self, sc: &mut Scope, grouped: bool) -> Fill<Expr> {
        if !grouped {
            return Ok(self.calc_expr(sc)?.0);
        }
        let mut own = Scope {
            pool: vec![sc.pool[0]],
            used: vec![],
        };
        let (e, _) = self.calc_expr(&mut own)?;
        sc.touch(sc.pool[0]);
        Ok(e)
    }

    /// Aggregated term over a column chosen to suit the aggregator.
    fn agg_term(&mut self, sc: &mut Scope, calc: bool, taken: &mut HashSet<String>) -> Fill<Term> {
        if calc {
            let agg = *[Aggregate::Max, Aggregate::Min, Aggregate::Sum, Aggregate::Avg]
                .choose(self.rng)
                .unwrap();
            let (e, _) = self.calc_expr(sc)?;
            return Ok(Term::aggregated(agg, e));
        }
        for _ in 0..4 {
            let any_num = !self
                .candidates(&sc.pool, &|_, c| c.kind == ColumnType::Number)
                .is_empty();
            let any_ord = !self.candidates(&sc.pool, &|_, c| is_orderable(c)).is_empty();
            let mut aggs = vec![Aggregate::Count];
            if any_ord {
                aggs.extend([Aggregate::Max, Aggregate::Min]);
            }
            if any_num {
                aggs.extend([Aggregate::Sum, Aggregate::Avg]);
            }
            let agg = *aggs.choose(self.rng).unwrap();
            let term = match agg {
                Aggregate::Count if self.rng.gen_bool(0.6) => Term::aggregated(agg, Expr::Star),
                Aggregate::Count => {
                    let id = self.pick(sc, "any", &|_, _| true)?;
                    Term::aggregated(agg, Expr::Column(self.cref(id)))
                }
                Aggregate::Sum | Aggregate::Avg => {
                    let id = self.pick(sc, "number", &|_, c| c.kind == ColumnType::Number)?;
                    Term::aggregated(agg, Expr::Column(self.cref(id)))
                }
                _ => {
                    let id = self.pick(sc, "orderable", &|_, c| is_orderable(c))?;
                    Term::aggregated(agg, Expr::Column(self.cref(id)))
                }
            };
            if taken.insert(term_key(&term)) {
                return Ok(term);
            }
        }
        Err("could not find a fresh aggregate".into())
    }

    fn unit(&mut self, s: &UnitShape, sc: &mut Scope, forced: Option<&[Term]>, allow_star: bool) -> Fill<UnitQuery> {
        let grouped = s.group_by > 0;
        let plain: Vec<&TermShape> = s.select.iter().filter(|t| !t.agg).collect();
        let aggregated = s.select.iter().any(|t| t.agg) || s.having.is_some() || s.order.is_some_and(|o| o.agg);
        if !grouped && aggregated && !plain.is_empty() {
            return Err("plain select item in an aggregate query without GROUP BY".into());
        }
        let primary = sc.pool[0];
        let mut u = UnitQuery::new(vec![], FromClause::default());

        // grouping columns come from the primary table
        let mut group: Vec<ColumnId> = Vec::new();
        let pk_mode = grouped && (plain.len() >= 2 || plain.iter().any(|t| t.calc));
        if grouped {
            let first = if pk_mode {
                let content = self.content;
                let pks = self.candidates(&[primary], &|id, c| {
                    c.primary_key && content.distinct_values(id).len() == content.rows(id.table).len()
                });
                *pks.choose(self.rng).ok_or("grouping needs a unique key")?
            } else {
                let natural = self.candidates(&[primary], &|_, c| !c.primary_key && c.kind == ColumnType::Text);
                let natural = if natural.is_empty() {
                    self.candidates(&[primary], &|_, _| true)
                } else {
                    natural
                };
                *natural.choose(self.rng).ok_or("no grouping column")?
            };
            group.push(first);
            while group.len() < s.group_by {
                let rest = self.candidates(&[primary], &|id, _| !group.contains(&id));
                group.push(*rest.choose(self.rng).ok_or("not enough grouping columns")?);
            }
            sc.touch(primary);
            u.group_by = group.iter().map(|&g| self.cref(g)).collect();
        }

        // select
        if let Some(f) = forced {
            for t in f {
                for c in t.expr.columns() {
                    if let Some(i) = c.table.as_deref().and_then(|n| self.schema.table_index(n)) {
                        sc.touch(i);
                    }
                }
            }
            u.select = f.to_vec();
        } else {
            let mut taken = HashSet::new();
            for t in &s.select {
                let term = if t.agg {
                    self.agg_term(sc, t.calc, &mut taken)?
                } else if t.calc {
                    Term::plain(self.plain_calc(sc, grouped)?)
                } else if grouped && !pk_mode {
                    Term::column(self.cref(group[0]))
                } else if grouped {
                    let ids = self.candidates(&[primary], &|_, _| true);
                    let fresh: Vec<ColumnId> = ids
                        .into_iter()
                        .filter(|id| !taken.contains(&term_key(&Term::column(self.cref(*id)))))
                        .collect();
                    let id = *fresh.choose(self.rng).ok_or("no fresh select column")?;
                    Term::column(self.cref(id))
                } else if allow_star && s.select.len() == 1 && self.rng.gen_bool(0.1) {
                    Term::plain(Expr::Star)
                } else {
                    let mut chosen = None;
                    for _ in 0..4 {
                        let id = self.pick(sc, "any", &|_, _| true)?;
                        let t = Term::column(self.cref(id));
                        if !taken.contains(&term_key(&t)) {
                            chosen = Some(t);
                            break;
                        }
                    }
                    chosen.ok_or("no fresh select column")?
                };
                taken.insert(term_key(&term));
                u.select.push(term);
            }
        }

        if let Some(p) = &s.filter {
            u.filter = Some(self.predicate(p, sc, false)?);
        }
        if let Some(p) = &s.having {
            u.having = Some(self.predicate(p, sc, true)?);
        }
        if let Some(o) = &s.order {
            let key = if o.agg {
                self.agg_term(sc, o.calc, &mut HashSet::new())?
            } else if o.calc {
                if grouped && !pk_mode {
                    return Err("arithmetic order key needs key grouping".into());
                }
                Term::plain(self.plain_calc(sc, grouped)?)
            } else if grouped && !pk_mode {
                Term::column(self.cref(group[0]))
            } else if grouped {
                let id = *self.candidates(&[primary], &|_, _| true).choose(self.rng).unwrap();
                Term::column(self.cref(id))
            } else {
                let id = self.pick(sc, "any", &|_, _| true)?;
                Term::column(self.cref(id))
            };
            let dir = if self.rng.gen_bool(0.5) {
                Direction::Asc
            } else {
                Direction::Desc
            };
            u.order_by = Some(OrderBy { key, dir });
        }
        if s.limit {
            u.limit = Some(*LIMITS.choose(self.rng).unwrap());
        }
        Ok(u)
    }

    fn predicate(&mut self, p: &PredShape, sc: &mut Scope, having: bool) -> Fill<Predicate> {
        let mut conds = vec![(Conjunction::And, self.condition(&p.first, sc, having)?)];
        for (conj, c) in &p.rest {
            conds.push((*conj, self.condition(c, sc, having)?));
        }
        Ok(fold_predicate(conds))
    }

    fn condition(&mut self, c: &CondShape, sc: &mut Scope, having: bool) -> Fill<Condition> {
        if having != c.lhs.agg {
            return Err(if having {
                "HAVING needs an aggregate".into()
            } else {
                "aggregate in WHERE".into()
            });
        }
        if having {
            return self.having_condition(c, sc);
        }
        if c.lhs.calc {
            let (e, first) = self.calc_expr(sc)?;
            if !self.has_values(first) {
                return Err("calc column has no values".into());
            }
            let lhs = Term::plain(e);
            return match &c.rhs {
                RhsShape::Value => Ok(Condition {
                    lhs,
                    op: *ORDERING_OPS.choose(self.rng).unwrap(),
                    rhs: Rhs::Value(self.sample_value(first)?),
                }),
                RhsShape::Between => {
                    let (lo, hi) = self.two_values(first)?;
                    Ok(Condition {
                        lhs,
                        op: CompareOp::Between,
                        rhs: Rhs::Between(lo, hi),
                    })
                }
                _ => Err("unsupported condition after arithmetic".into()),
            };
        }
        match &c.rhs {
            RhsShape::Value => {
                let content = self.content;
                let id = self.pick(sc, "valued", &|id, _| !content.distinct_values(id).is_empty())?;
                let col = self.schema.col(id);
                let ops: &[CompareOp] = match col.kind {
                    ColumnType::Number | ColumnType::Time => &ORDERING_OPS,
                    ColumnType::Text => &[CompareOp::Eq, CompareOp::Ne, CompareOp::Like],
                    ColumnType::Boolean => &[CompareOp::Eq, CompareOp::Ne],
                };
                let op = *ops.choose(self.rng).unwrap();
                let v = self.sample_value(id)?;
                let v = match (op, v) {
                    (CompareOp::Like, v) => Value::Text(format!("%{v}%")),
                    (_, v) => v,
                };
                Ok(Condition {
                    lhs: Term::column(self.cref(id)),
                    op,
                    rhs: Rhs::Value(v),
                })
            }
            RhsShape::Between => {
                let content = self.content;
                let id = self.pick(sc, "orderable valued", &|id, c| {
                    is_orderable(c) && !content.distinct_values(id).is_empty()
                })?;
                let (lo, hi) = self.two_values(id)?;
                Ok(Condition {
                    lhs: Term::column(self.cref(id)),
                    op: CompareOp::Between,
                    rhs: Rhs::Between(lo, hi),
                })
            }
            RhsShape::Column { calc: false } => {
                let a = self.pick(sc, "any", &|_, _| true)?;
                let kind = self.schema.col(a).kind;
                let t = a.table;
                let others = self.candidates(&[t], &|id, c| id != a && c.kind == kind);
                let b = *others.choose(self.rng).ok_or("no comparable column")?;
                let op = if is_orderable(self.schema.col(a)) {
                    *ORDERING_OPS.choose(self.rng).unwrap()
                } else {
                    *[CompareOp::Eq, CompareOp::Ne].choose(self.rng).unwrap()
                };
                Ok(Condition {
                    lhs: Term::column(self.cref(a)),
                    op,
                    rhs: Rhs::Column(Expr::Column(self.cref(b))),
                })
            }
            RhsShape::Column { calc: true } => Err("arithmetic on the right-hand side".into()),
            RhsShape::Nested(inner) => self.nested_condition(inner, sc),
        }
    }

    fn two_values(&mut self, id: ColumnId) -> Fill<(Value, Value)> {
        let vals = self.content.distinct_values(id);
        let (a, b) = if vals.len() >= 2 {
            let mut pair = vals.choose_multiple(self.rng, 2).cloned();
            (pair.next().unwrap(), pair.next().unwrap())
        } else {
            (self.sample_value(id)?, self.sample_value(id)?)
        };
        Ok(if a.total_cmp(&b).is_le() { (a, b) } else { (b, a) })
    }

    fn having_condition(&mut self, c: &CondShape, sc: &mut Scope) -> Fill<Condition> {
        if c.lhs.calc || c.rhs != RhsShape::Value {
            return Err("unsupported HAVING condition".into());
        }
        let content = self.content;
        let numeric = self.candidates(&sc.pool[..1], &|id, c| {
            c.kind == ColumnType::Number && !content.distinct_values(id).is_empty()
        });
        if numeric.is_empty() || self.rng.gen_bool(0.6) {
            let op = *[
                CompareOp::Gt,
                CompareOp::Ge,
                CompareOp::Lt,
                CompareOp::Le,
                CompareOp::Eq,
            ]
            .choose(self.rng)
            .unwrap();
            // counts are compared with small integers rather than column values
            let n = self.rng.gen_range(1..=3);
            return Ok(Condition {
                lhs: Term::aggregated(Aggregate::Count, Expr::Star),
                op,
                rhs: Rhs::Value(Value::Int(n)),
            });
        }
        let id = *numeric.choose(self.rng).unwrap();
        sc.touch(id.table);
        let agg = *[Aggregate::Max, Aggregate::Min, Aggregate::Sum, Aggregate::Avg]
            .choose(self.rng)
            .unwrap();
        Ok(Condition {
            lhs: Term::aggregated(agg, Expr::Column(self.cref(id))),
            op: *ORDERING_OPS.choose(self.rng).unwrap(),
            rhs: Rhs::Value(self.sample_value(id)?),
        })
    }

    /// Uncorrelated subquery: IN over one column, or a comparison with one
    /// aggregated value.
    fn nested_condition(&mut self, inner: &QueryShape, sc: &mut Scope) -> Fill<Condition> {
        let QueryShape::Unit(s) = inner else {
            return Err("set operation inside a subquery".into());
        };
        if s.select.len() != 1 || s.group_by > 0 || s.having.is_some() || s.order.is_some() || s.select[0].calc {
            return Err("unsupported subquery shape".into());
        }
        let scalar = s.select[0].agg;
        let (outer, inner_col, op, agg) = if scalar {
            let outer = self.pick(sc, "orderable", &|_, c| is_orderable(c))?;
            let aggs: &[Aggregate] = if self.schema.col(outer).kind == ColumnType::Number {
                &[Aggregate::Max, Aggregate::Min, Aggregate::Avg]
            } else {
                &[Aggregate::Max, Aggregate::Min]
            };
            let agg = *aggs.choose(self.rng).unwrap();
            (outer, outer, *ORDERING_OPS.choose(self.rng).unwrap(), Some(agg))
        } else {
            let outer = self.pick(sc, "any", &|_, _| true)?;
            let partners: Vec<ColumnId> = self
                .schema
                .join_edges()
                .filter_map(|fk| {
                    if fk.from == outer {
                        Some(fk.to)
                    } else if fk.to == outer {
                        Some(fk.from)
                    } else {
                        None
                    }
                })
                .collect();
            let inner_col = if !partners.is_empty() && self.rng.gen_bool(0.5) {
                *partners.choose(self.rng).unwrap()
            } else {
                outer
            };
            let op = if self.rng.gen_bool(0.5) {
                CompareOp::In
            } else {
                CompareOp::NotIn
            };
            (outer, inner_col, op, None)
        };
        let mut isc = self.scope(inner_col.table, false);
        let name = |id: ColumnId| ColumnRef::new(self.schema.col(id).name.clone());
        let expr = Expr::Column(name(inner_col));
        let mut q = UnitQuery::new(
            vec![match agg {
                Some(a) => Term::aggregated(a, expr),
                None => Term::plain(expr),
            }],
            FromClause::single(self.schema.tables[inner_col.table].name.clone()),
        );
        if let Some(p) = &s.filter {
            let mut pred = self.predicate(p, &mut isc, false)?;
            strip_predicate(&mut pred);
            q.filter = Some(pred);
        }
        Ok(Condition {
            lhs: Term::column(self.cref(outer)),
            op,
            rhs: Rhs::Subquery(Box::new(Query::unit(q))),
        })
    }
}

fn term_key(t: &Term) -> String {
    format!("{:?}", (t.agg, t.distinct, &t.expr))
}

/// Joins conditions the way the parser reads them: AND binds tighter than OR,
/// both left-associative.
fn fold_predicate(conds: Vec<(Conjunction, Condition)>) -> Predicate {
    let mut groups: Vec<Predicate> = Vec::new();
    for (conj, c) in conds {
        let leaf = Predicate::Cond(c);
        match (conj, groups.pop()) {
            (Conjunction::And, Some(g)) => groups.push(Predicate::and(g, leaf)),
            (Conjunction::Or, Some(g)) => {
                groups.push(g);
                groups.push(leaf);
            }
            (_, None) => groups.push(leaf),
        }
    }
    let mut it = groups.into_iter();
    let first = it.next().expect("at least one condition");
    it.fold(first, Predicate::or)
}

fn strip_predicate(p: &mut Predicate) {
    match p {
        Predicate::Cond(c) => strip_condition(c),
        Predicate::And(a, b) | Predicate::Or(a, b) => {
            strip_predicate(a);
            strip_predicate(b);
        }
    }
}

fn strip_condition(c: &mut Condition) {
    expr_columns_mut(&mut c.lhs.expr, &mut |r| r.table = None);
    if let Rhs::Column(e) = &mut c.rhs {
        expr_columns_mut(e, &mut |r| r.table = None);
    }
}

fn expr_columns_mut(e: &mut Expr, f: &mut dyn FnMut(&mut ColumnRef)) {
    match e {
        Expr::Star => {}
        Expr::Column(c) => f(c),
        Expr::Binary { left, right, .. } => {
            f(left);
            f(right);
        }
    }
}

fn pred_columns_mut(p: &mut Predicate, f: &mut dyn FnMut(&mut ColumnRef)) {
    match p {
        Predicate::Cond(c) => {
            expr_columns_mut(&mut c.lhs.expr, f);
            if let Rhs::Column(e) = &mut c.rhs {
                expr_columns_mut(e, f);
            }
        }
        Predicate::And(a, b) | Predicate::Or(a, b) => {
            pred_columns_mut(a, f);
            pred_columns_mut(b, f);
        }
    }
}

/// Visits the column references of one unit query, not of its subqueries.
fn for_each_column(u: &mut UnitQuery, f: &mut dyn FnMut(&mut ColumnRef)) {
    for t in &mut u.select {
        expr_columns_mut(&mut t.expr, f);
    }
    if let Some(p) = &mut u.filter {
        pred_columns_mut(p, f);
    }
    for c in &mut u.group_by {
        f(c);
    }
    if let Some(p) = &mut u.having {
        pred_columns_mut(p, f);
    }
    if let Some(o) = &mut u.order_by {
        expr_columns_mut(&mut o.key.expr, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ColumnType::*;
    use std::sync::Arc;

    fn matches_db() -> DatabaseContent {
        let s =
            Arc::new(Schema::new("wta").with_table("matches", &[("draw_size", Number), ("loser_age", Number)], false));
        DatabaseContent::from_rows(
            s,
            [(
                "matches".to_string(),
                vec![
                    vec![Value::Int(32), Value::Int(10)],
                    vec![Value::Int(64), Value::Int(10)],
                ],
            )],
        )
        .unwrap()
    }

    #[test]
    fn case_study_fill() {
        let c = matches_db();
        let p: Pattern = "SELECT A WHERE C OP V".parse().unwrap();
        let cfg = FillConfig {
            rng_seed: 7,
            max_fills: 64,
            ..FillConfig::default()
        };
        let got: Vec<String> = fill_pattern(&p, &c, &cfg).unwrap().iter().map(serialize_sql).collect();
        assert!(
            got.contains(&"SELECT draw_size FROM matches WHERE loser_age > 10".to_string()),
            "{got:?}"
        );
        assert_eq!(
            fill_pattern(&p, &c, &cfg)
                .unwrap()
                .iter()
                .map(serialize_sql)
                .collect::<Vec<_>>(),
            got
        );
    }

    #[test]
    fn numeric_slot_without_numbers() {
        let s = Arc::new(Schema::new("t").with_table("t", &[("name", Text)], false));
        let c = DatabaseContent::from_rows(s, [("t".to_string(), vec![vec![Value::Text("x".into())]])]).unwrap();
        let p: Pattern = "SELECT A CALC A".parse().unwrap();
        assert!(matches!(
            fill_pattern(&p, &c, &FillConfig::default()),
            Err(FillError::NoCompatibleColumns(_))
        ));
    }

    #[test]
    fn filter_keeps_order_and_reports_errors() {
        let s = Arc::new(Schema::new("t").with_table("t", &[("a", Number), ("b", Number)], false));
        let c = DatabaseContent::from_rows(s, [("t".to_string(), vec![vec![Value::Int(1), Value::Int(0)]])]).unwrap();
        let qs: Vec<Query> = ["SELECT a FROM t", "SELECT a / b FROM t", "SELECT b FROM t"]
            .iter()
            .map(|q| crate::sql::parse_sql(q, None).unwrap())
            .collect();
        let f = filter_executable(qs, &c);
        assert_eq!(
            f.kept.iter().map(serialize_sql).collect::<Vec<_>>(),
            ["SELECT a FROM t", "SELECT b FROM t"]
        );
        assert_eq!(f.rejected, vec![(1, EvalError::DivideByZero)]);
    }

    #[test]
    fn fold_respects_precedence() {
        let c = |v: i64| Condition {
            lhs: Term::column(ColumnRef::new("a")),
            op: CompareOp::Eq,
            rhs: Rhs::Value(Value::Int(v)),
        };
        let p = fold_predicate(vec![
            (Conjunction::And, c(1)),
            (Conjunction::Or, c(2)),
            (Conjunction::And, c(3)),
        ]);
        assert!(matches!(&p, Predicate::Or(_, b) if matches!(**b, Predicate::And(..))));
    }

    #[test]
    fn seeds_are_stable() {
        assert_eq!(derive_seed(1, "wta", 3), derive_seed(1, "wta", 3));
        assert_ne!(derive_seed(1, "wta", 3), derive_seed(1, "wta", 4));
        assert_ne!(derive_seed(1, "wta", 3), derive_seed(2, "wta", 3));
    }
}
