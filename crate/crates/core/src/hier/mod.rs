//! Hierarchical SQL-to-question generation: split a query into clauses,
//! translate each clause, and join the pieces in execution order.

mod translate;

use std::fmt;
use std::ops::Range;

use thiserror::Error;

pub use translate::{
    Naming, SubprocessTranslator, TemplatePack, TemplateTranslator, TranslateError, Translator, DEFAULT_TEMPLATES,
};

use crate::sql::{render_tokens, sql_tokens, Part, Phase, Query, SetOperator, SqlToken, UnitQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClauseKind {
    Select,
    SelectGroupBy,
    Where,
    WhereNestedSelect,
    GroupByHaving,
    OrderBy,
    OrderByLimit,
    OrderByGroupBy,
    SetOp,
}

impl ClauseKind {
    pub const ALL: [ClauseKind; 9] = [
        ClauseKind::Select,
        ClauseKind::SelectGroupBy,
        ClauseKind::Where,
        ClauseKind::WhereNestedSelect,
        ClauseKind::GroupByHaving,
        ClauseKind::OrderBy,
        ClauseKind::OrderByLimit,
        ClauseKind::OrderByGroupBy,
        ClauseKind::SetOp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClauseKind::Select => "SELECT",
            ClauseKind::SelectGroupBy => "SELECT+GROUP_BY",
            ClauseKind::Where => "WHERE",
            ClauseKind::WhereNestedSelect => "WHERE+NESTED_SELECT",
            ClauseKind::GroupByHaving => "GROUP_BY+HAVING",
            ClauseKind::OrderBy => "ORDER_BY",
            ClauseKind::OrderByLimit => "ORDER_BY+LIMIT",
            ClauseKind::OrderByGroupBy => "ORDER_BY+GROUP_BY",
            ClauseKind::SetOp => "SET_OP",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Position of the clause's leading phase in execution order.
    pub fn phase(self) -> Phase {
        match self {
            ClauseKind::Where | ClauseKind::WhereNestedSelect | ClauseKind::SetOp => Phase::Where,
            ClauseKind::GroupByHaving => Phase::GroupBy,
            ClauseKind::Select | ClauseKind::SelectGroupBy => Phase::Select,
            ClauseKind::OrderBy | ClauseKind::OrderByLimit | ClauseKind::OrderByGroupBy => Phase::OrderBy,
        }
    }

    pub fn is_select(self) -> bool {
        matches!(self, ClauseKind::Select | ClauseKind::SelectGroupBy)
    }

    pub fn is_where(self) -> bool {
        matches!(self, ClauseKind::Where | ClauseKind::WhereNestedSelect)
    }

    pub fn is_order(self) -> bool {
        matches!(
            self,
            ClauseKind::OrderBy | ClauseKind::OrderByLimit | ClauseKind::OrderByGroupBy
        )
    }
}

impl fmt::Display for ClauseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClauseSource {
    Unit(Box<UnitQuery>),
    SetOp(SetOperator),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub kind: ClauseKind,
    /// 0 for the left (or only) unit query, 1 for the right one.
    pub branch: usize,
    /// Clause tokens in query order. SELECT clauses also carry the FROM
    /// tokens, as do WHERE clauses with a nested query.
    pub tokens: Vec<SqlToken>,
    /// Ranges into `sql_tokens` of the query; FROM tokens are never included.
    pub spans: Vec<Range<usize>>,
    /// 1 when the clause holds a nested query.
    pub depth: usize,
    pub source: ClauseSource,
}

impl Clause {
    pub fn text(&self) -> String {
        render_tokens(&self.tokens)
    }

    pub fn unit(&self) -> Option<&UnitQuery> {
        match &self.source {
            ClauseSource::Unit(u) => Some(u),
            ClauseSource::SetOp(_) => None,
        }
    }

    /// Token range of the clause's first span; used for source ordering.
    fn start(&self) -> usize {
        self.spans.first().map_or(0, |r| r.start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Slot {
    Select,
    Where,
    Group,
    Order,
    SetOp,
}

/// Splits a query into clauses, in query order.
pub fn decompose(q: &Query) -> Vec<Clause> {
    let tokens = sql_tokens(q);
    let units: Vec<&UnitQuery> = q.units();
    // bare GROUP BY goes with SELECT unless only ORDER BY aggregates
    let group_target = |u: &UnitQuery| -> Slot {
        if u.group_by.is_empty() {
            return Slot::Group;
        }
        if u.having.is_some() {
            return Slot::Group;
        }
        let order_agg = u.order_by.as_ref().is_some_and(|o| o.key.agg.is_some());
        if order_agg && !u.has_aggregate() {
            Slot::Order
        } else {
            Slot::Select
        }
    };
    let mut slots: Vec<(usize, Slot, Vec<usize>)> = Vec::new();
    let mut from_idx: Vec<Vec<usize>> = vec![vec![]; units.len()];
    for (i, t) in tokens.iter().enumerate() {
        let u = units[t.branch.min(units.len() - 1)];
        let slot = match t.part {
            Part::From => {
                from_idx[t.branch].push(i);
                continue;
            }
            Part::Select => Slot::Select,
            Part::Where => Slot::Where,
            Part::GroupBy => group_target(u),
            Part::Having => Slot::Group,
            Part::OrderBy | Part::Limit => Slot::Order,
            Part::SetOp => Slot::SetOp,
        };
        match slots.iter_mut().find(|(b, s, _)| *b == t.branch && *s == slot) {
            Some((_, _, idx)) => idx.push(i),
            None => slots.push((t.branch, slot, vec![i])),
        }
    }
    let mut out: Vec<Clause> = slots
        .into_iter()
        .map(|(branch, slot, idx)| {
            let u = units[branch.min(units.len() - 1)];
            let kind = match slot {
                Slot::Select if group_target(u) == Slot::Select => ClauseKind::SelectGroupBy,
                Slot::Select => ClauseKind::Select,
                Slot::Where if u.filter.as_ref().is_some_and(|p| p.has_subquery()) => ClauseKind::WhereNestedSelect,
                Slot::Where => ClauseKind::Where,
                Slot::Group => ClauseKind::GroupByHaving,
                Slot::Order if group_target(u) == Slot::Order => ClauseKind::OrderByGroupBy,
                Slot::Order if u.limit.is_some() => ClauseKind::OrderByLimit,
                Slot::Order => ClauseKind::OrderBy,
                Slot::SetOp => ClauseKind::SetOp,
            };
            let depth = usize::from(idx.iter().any(|&i| tokens[i].nested));
            let mut spans: Vec<Range<usize>> = Vec::new();
            for &i in &idx {
                match spans.last_mut() {
                    Some(r) if r.end == i => r.end = i + 1,
                    _ => spans.push(i..i + 1),
                }
            }
            let mut all = idx.clone();
            if kind.is_select() || kind == ClauseKind::WhereNestedSelect {
                all.extend(&from_idx[branch]);
                all.sort_unstable();
            }
            let source = match (slot, q) {
                (Slot::SetOp, Query::Compound { op, .. }) => ClauseSource::SetOp(*op),
                _ => ClauseSource::Unit(Box::new(u.clone())),
            };
            Clause {
                kind,
                branch: if slot == Slot::SetOp { 0 } else { branch },
                tokens: all.iter().map(|&i| tokens[i].clone()).collect(),
                spans,
                depth,
                source,
            }
        })
        .collect();
    out.sort_by_key(|c| c.start());
    out
}

/// Sort key: left unit, set operator, right unit; inside a unit, the
/// execution rank of the clause's leading phase.
fn order_key(c: &Clause) -> (usize, usize) {
    let slot = match (c.kind, c.branch) {
        (ClauseKind::SetOp, _) => 1,
        (_, 0) => 0,
        _ => 2,
    };
    (slot, c.kind.phase().rank())
}

/// Stable reorder into execution order.
pub fn execution_order(mut clauses: Vec<Clause>) -> Vec<Clause> {
    clauses.sort_by_key(order_key);
    clauses
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subquestion {
    pub text: String,
    pub kind: ClauseKind,
    pub variant: Option<usize>,
    /// Fragments of nested queries embedded in `text`.
    pub embedded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComposeError {
    #[error("no subquestions to compose")]
    EmptySubquestionList,
    #[error("{0} subquestions for {1} clauses")]
    LengthMismatch(usize, usize),
}

/// The composed question with the byte range each kept fragment occupies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Composition {
    pub text: String,
    /// (index into the input lists, byte range in `text`)
    pub fragments: Vec<(usize, Range<usize>)>,
}

const INTERROGATIVES: [&str; 12] = [
    "what", "which", "who", "whom", "whose", "how", "when", "where", "is", "are", "do", "does",
];

fn norm_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Joins subquestions already in execution order.
pub fn compose(subs: &[Subquestion], clauses: &[Clause]) -> Result<String, ComposeError> {
    compose_detailed(subs, clauses).map(|c| c.text)
}

pub fn compose_detailed(subs: &[Subquestion], clauses: &[Clause]) -> Result<Composition, ComposeError> {
    if subs.is_empty() {
        return Err(ComposeError::EmptySubquestionList);
    }
    if subs.len() != clauses.len() {
        return Err(ComposeError::LengthMismatch(subs.len(), clauses.len()));
    }
    // identical SELECT fragments on both sides of a set operation: keep the last
    let mut skip = vec![false; subs.len()];
    let selects: Vec<usize> = (0..subs.len()).filter(|&i| clauses[i].kind.is_select()).collect();
    if clauses.iter().any(|c| c.kind == ClauseKind::SetOp) && selects.len() == 2 {
        let (a, b) = (selects[0], selects[1]);
        if subs[a].text.trim().eq_ignore_ascii_case(subs[b].text.trim()) {
            skip[a] = true;
        }
    }
    let mut text = String::new();
    let mut fragments = Vec::new();
    let mut prev_setop = false;
    for (i, s) in subs.iter().enumerate() {
        if skip[i] {
            continue;
        }
        let frag = s.text.trim();
        if frag.is_empty() {
            continue;
        }
        let is_setop = clauses[i].kind == ClauseKind::SetOp;
        let mut frag = frag.to_string();
        if !text.is_empty() {
            let sep = if is_setop || prev_setop { " " } else { ", " };
            // collapse a word repeated across the boundary
            let last = text.split_whitespace().last().map(norm_word);
            let first = frag.split_whitespace().next().map(norm_word);
            if last.is_some() && last == first && frag.split_whitespace().count() > 1 {
                let cut = frag.find(char::is_whitespace).unwrap();
                frag = frag[cut..].trim_start().to_string();
            }
            text.push_str(sep);
        }
        let start = text.len();
        text.push_str(&frag);
        fragments.push((i, start..text.len()));
        prev_setop = is_setop;
    }
    let select_text = (0..subs.len())
        .rev()
        .find(|&i| !skip[i] && clauses[i].kind.is_select())
        .map(|i| subs[i].text.as_str());
    let interrogative = select_text
        .and_then(|t| t.split_whitespace().next())
        .is_some_and(|w| INTERROGATIVES.contains(&norm_word(w).as_str()));
    if let Some(c) = text.chars().next() {
        let upper: String = c.to_uppercase().collect();
        let shift = upper.len() as isize - c.len_utf8() as isize;
        text.replace_range(..c.len_utf8(), &upper);
        if shift != 0 {
            for (k, (_, r)) in fragments.iter_mut().enumerate() {
                let s = if k == 0 {
                    r.start
                } else {
                    (r.start as isize + shift) as usize
                };
                *r = s..(r.end as isize + shift) as usize;
            }
        }
    }
    text.push(if interrogative { '?' } else { '.' });
    Ok(Composition { text, fragments })
}

/// How clause variants are chosen end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantPolicy {
    /// The same variant for every clause.
    Fixed(usize),
    /// A stable hash of (seed, query text, clause kind and text); identical
    /// clauses of one query share a variant.
    Hashed(u64),
}

impl VariantPolicy {
    pub fn pick(self, sql: &str, clause: &Clause, count: usize) -> usize {
        match self {
            VariantPolicy::Fixed(v) => v,
            VariantPolicy::Hashed(seed) => {
                if count == 0 {
                    return 0;
                }
                let key = format!("{sql}\u{1f}{}\u{1f}{}", clause.kind, clause.text());
                let h = crate::generator::derive_seed(seed, &key, 0);
                (h % count as u64) as usize
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum HierError {
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
}

/// Result of the full decompose, translate and compose path.
#[derive(Debug, Clone)]
pub struct Generated {
    pub question: String,
    pub clauses: Vec<Clause>,
    pub subquestions: Vec<Subquestion>,
    pub composition: Composition,
}

pub fn generate_question(
    q: &Query,
    translator: &dyn Translator,
    names: &Naming,
    policy: VariantPolicy,
) -> Result<Generated, HierError> {
    let sql = crate::sql::serialize_sql(q);
    let clauses = execution_order(decompose(q));
    let mut subs = Vec::with_capacity(clauses.len());
    for c in &clauses {
        let v = policy.pick(&sql, c, translator.variant_count(c));
        subs.push(translator.translate(c, names, Some(v))?);
    }
    let composition = compose_detailed(&subs, &clauses)?;
    Ok(Generated {
        question: composition.text.clone(),
        clauses,
        subquestions: subs,
        composition,
    })
}

pub fn sql_to_question(q: &Query, translator: &dyn Translator, names: &Naming) -> Result<String, HierError> {
    generate_question(q, translator, names, VariantPolicy::Fixed(0)).map(|g| g.question)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{parse_sql, serialize_sql};

    fn kinds(sql: &str) -> Vec<ClauseKind> {
        decompose(&parse_sql(sql, None).unwrap())
            .iter()
            .map(|c| c.kind)
            .collect()
    }

    #[test]
    fn head_example() {
        assert_eq!(
            kinds("SELECT name FROM head WHERE born_state != 'California'"),
            [ClauseKind::Select, ClauseKind::Where]
        );
    }

    #[test]
    fn nested_where_keeps_inner_query() {
        let q = parse_sql(
            "SELECT name FROM Wine WHERE Price > (SELECT max(Price) FROM Wine)",
            None,
        )
        .unwrap();
        let c = decompose(&q);
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].kind, ClauseKind::WhereNestedSelect);
        let text = c[1].text();
        assert!(text.contains("FROM Wine WHERE Price >"), "{text}");
        assert!(text.contains("SELECT max(Price) FROM Wine"), "{text}");
        assert_eq!(c[1].depth, 1);
    }

    #[test]
    fn bundling_rules() {
        assert_eq!(
            kinds("SELECT c, count(*) FROM t GROUP BY c HAVING count(*) > 3 ORDER BY count(*) DESC LIMIT 5"),
            [ClauseKind::Select, ClauseKind::GroupByHaving, ClauseKind::OrderByLimit]
        );
        assert_eq!(
            kinds("SELECT c, count(*) FROM t GROUP BY c"),
            [ClauseKind::SelectGroupBy]
        );
        assert_eq!(
            kinds("SELECT c FROM t GROUP BY c ORDER BY count(*) DESC LIMIT 1"),
            [ClauseKind::Select, ClauseKind::OrderByGroupBy]
        );
        assert_eq!(
            kinds("SELECT c, count(*) FROM t GROUP BY c ORDER BY count(*) DESC"),
            [ClauseKind::SelectGroupBy, ClauseKind::OrderBy]
        );
    }

    #[test]
    fn set_operation_clauses() {
        assert_eq!(
            kinds("SELECT a FROM t WHERE b = 1 INTERSECT SELECT a FROM t WHERE c = 2"),
            [
                ClauseKind::Select,
                ClauseKind::Where,
                ClauseKind::SetOp,
                ClauseKind::Select,
                ClauseKind::Where
            ]
        );
    }

    #[test]
    fn spans_partition_non_from_tokens() {
        let q = parse_sql(
            "SELECT a, count(*) FROM t JOIN u ON t.x = u.y WHERE b > (SELECT max(b) FROM t) GROUP BY a ORDER BY count(*) DESC LIMIT 1",
            None,
        )
        .unwrap();
        let toks = sql_tokens(&q);
        let mut covered: Vec<usize> = decompose(&q)
            .iter()
            .flat_map(|c| c.spans.iter().cloned().flatten())
            .collect();
        covered.sort_unstable();
        let expected: Vec<usize> = (0..toks.len()).filter(|&i| toks[i].part != Part::From).collect();
        assert_eq!(covered, expected);
        let _ = serialize_sql(&q);
    }

    #[test]
    fn execution_order_examples() {
        let q = parse_sql("SELECT a FROM t WHERE b = 1", None).unwrap();
        let got: Vec<ClauseKind> = execution_order(decompose(&q)).iter().map(|c| c.kind).collect();
        assert_eq!(got, [ClauseKind::Where, ClauseKind::Select]);
        let q = parse_sql(
            "SELECT c, count(*) FROM t WHERE b = 1 GROUP BY c HAVING count(*) > 3 ORDER BY count(*) DESC LIMIT 5",
            None,
        )
        .unwrap();
        let got: Vec<ClauseKind> = execution_order(decompose(&q)).iter().map(|c| c.kind).collect();
        assert_eq!(
            got,
            [
                ClauseKind::Where,
                ClauseKind::GroupByHaving,
                ClauseKind::Select,
                ClauseKind::OrderByLimit
            ]
        );
    }

    fn sub(kind: ClauseKind, text: &str) -> Subquestion {
        Subquestion {
            text: text.into(),
            kind,
            variant: None,
            embedded: vec![],
        }
    }

    fn clause(kind: ClauseKind, branch: usize) -> Clause {
        Clause {
            kind,
            branch,
            tokens: vec![],
            spans: vec![],
            depth: 0,
            source: ClauseSource::SetOp(SetOperator::Union),
        }
    }

    #[test]
    fn compose_case_study() {
        let subs = [
            sub(ClauseKind::Where, "with losers who are older than 10"),
            sub(ClauseKind::Select, "find the draw size of the matches"),
        ];
        let cl = [clause(ClauseKind::Where, 0), clause(ClauseKind::Select, 0)];
        assert_eq!(
            compose(&subs, &cl).unwrap(),
            "With losers who are older than 10, find the draw size of the matches."
        );
        assert_eq!(
            compose(
                &[sub(ClauseKind::Select, "show all names")],
                &[clause(ClauseKind::Select, 0)]
            )
            .unwrap(),
            "Show all names."
        );
        assert_eq!(
            compose(
                &[sub(ClauseKind::Select, "what are the names")],
                &[clause(ClauseKind::Select, 0)]
            )
            .unwrap(),
            "What are the names?"
        );
        assert_eq!(compose(&[], &[]), Err(ComposeError::EmptySubquestionList));
    }

    #[test]
    fn compose_drops_repeated_select() {
        let subs = [
            sub(ClauseKind::Where, "with age higher than 30"),
            sub(ClauseKind::Select, "find the name of the singer"),
            sub(ClauseKind::SetOp, "and also"),
            sub(ClauseKind::Where, "with country equal to France"),
            sub(ClauseKind::Select, "find the name of the singer"),
        ];
        let cl = [
            clause(ClauseKind::Where, 0),
            clause(ClauseKind::Select, 0),
            clause(ClauseKind::SetOp, 0),
            clause(ClauseKind::Where, 1),
            clause(ClauseKind::Select, 1),
        ];
        assert_eq!(
            compose(&subs, &cl).unwrap(),
            "With age higher than 30 and also with country equal to France, find the name of the singer."
        );
    }

    #[test]
    fn compose_collapses_repeated_boundary_word() {
        let subs = [
            sub(ClauseKind::Where, "with the name"),
            sub(ClauseKind::Select, "name the singers"),
        ];
        let cl = [clause(ClauseKind::Where, 0), clause(ClauseKind::Select, 0)];
        assert_eq!(compose(&subs, &cl).unwrap(), "With the name, the singers.");
    }
}
