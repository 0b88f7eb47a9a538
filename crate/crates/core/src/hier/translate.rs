use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::Deserialize;
use thiserror::Error;

use super::{Clause, ClauseKind, ClauseSource, Subquestion};
use crate::schema::{naturalize, Schema};
use crate::sql::{Aggregate, ColumnRef, CompareOp, Condition, Expr, Predicate, Query, Rhs, Term, UnitQuery, Value};

pub const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates_en.toml");

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("no template for clause kind {0}")]
    UnsupportedClauseKind(ClauseKind),
    #[error("translation failed: {0}")]
    TranslationFailed(String),
}

/// Maps identifiers to the natural names used in questions.
#[derive(Debug, Clone, Copy, Default)]
pub struct Naming<'a> {
    pub schema: Option<&'a Schema>,
}

impl<'a> Naming<'a> {
    pub fn new(schema: &'a Schema) -> Self {
        Naming { schema: Some(schema) }
    }

    pub fn table(&self, name: &str) -> String {
        self.schema
            .and_then(|s| s.table(name))
            .map_or_else(|| naturalize(name), |t| t.natural_name.clone())
    }

    pub fn column(&self, c: &ColumnRef, from: &[String]) -> String {
        let found = self.schema.and_then(|s| {
            let id = match &c.table {
                Some(t) => s.column_id(t, &c.column),
                None => s.owner_of(&c.column, from),
            }?;
            Some(s.col(id).natural_name.clone())
        });
        found.unwrap_or_else(|| naturalize(&c.column))
    }
}

pub trait Translator: Send + Sync {
    fn id(&self) -> String;
    fn variant_count(&self, clause: &Clause) -> usize;
    fn translate(&self, clause: &Clause, names: &Naming, variant: Option<usize>)
        -> Result<Subquestion, TranslateError>;
}

#[derive(Debug, Clone, Deserialize)]
struct Phrases {
    condition: String,
    between: String,
    nested: String,
    inner: String,
    inner_filtered: String,
    aggregate: String,
    aggregate_distinct: String,
    calc: String,
    count_star_select: String,
    count_star: String,
    all_columns: String,
    limit_one: String,
    limit_many: String,
    limit_tail: String,
    and: String,
    or: String,
    list: String,
}

/// Clause templates and word tables, loaded from TOML.
#[derive(Debug, Clone, Deserialize)]
pub struct TemplatePack {
    #[serde(default)]
    pub interrogatives: Vec<String>,
    templates: BTreeMap<String, Vec<String>>,
    phrases: Phrases,
    ops: HashMap<String, String>,
    aggregates: HashMap<String, String>,
    arith: HashMap<String, String>,
    direction: HashMap<String, String>,
    extreme: HashMap<String, String>,
    connectives: HashMap<String, Vec<String>>,
}

impl TemplatePack {
    pub fn from_toml(text: &str) -> Result<Self, TranslateError> {
        let pack: TemplatePack = toml::from_str(text).map_err(|e| TranslateError::TranslationFailed(e.to_string()))?;
        for k in pack.templates.keys() {
            if ClauseKind::from_name(k).is_none() {
                return Err(TranslateError::TranslationFailed(format!(
                    "unknown clause kind {k} in templates"
                )));
            }
        }
        Ok(pack)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TranslateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| TranslateError::TranslationFailed(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn english() -> Self {
        Self::from_toml(DEFAULT_TEMPLATES).expect("bundled templates parse")
    }

    pub fn templates(&self, kind: ClauseKind) -> &[String] {
        self.templates.get(kind.as_str()).map_or(&[], |v| v.as_slice())
    }
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut s = template.to_string();
    for (k, v) in slots {
        s = s.replace(&format!("{{{k}}}"), v);
    }
    s
}

fn word<'m>(map: &'m HashMap<String, String>, key: &str) -> Result<&'m str, TranslateError> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| TranslateError::TranslationFailed(format!("no phrase for {key}")))
}

/// Deterministic template translator. Learned paraphrases, keyed by clause
/// text, slot in as variants right after the first template.
#[derive(Debug, Clone)]
pub struct TemplateTranslator {
    pack: TemplatePack,
    paraphrases: HashMap<String, Vec<String>>,
}

struct Ctx<'a, 'n> {
    from: &'a [String],
    names: &'a Naming<'n>,
    embedded: Vec<String>,
}

impl TemplateTranslator {
    pub fn new(pack: TemplatePack) -> Self {
        TemplateTranslator {
            pack,
            paraphrases: HashMap::new(),
        }
    }

    pub fn english() -> Self {
        Self::new(TemplatePack::english())
    }

    pub fn with_paraphrases(mut self, table: HashMap<String, Vec<String>>) -> Self {
        self.paraphrases = table;
        self
    }

    pub fn pack(&self) -> &TemplatePack {
        &self.pack
    }

    fn list(&self, parts: Vec<String>) -> String {
        match parts.len() {
            0 => String::new(),
            1 => parts.into_iter().next().unwrap(),
            n => format!(
                "{} {} {}",
                parts[..n - 1].join(", "),
                self.pack.phrases.list,
                parts[n - 1]
            ),
        }
    }

    fn expr(&self, e: &Expr, cx: &Ctx) -> Result<String, TranslateError> {
        Ok(match e {
            Expr::Star => self.pack.phrases.all_columns.clone(),
            Expr::Column(c) => cx.names.column(c, cx.from),
            Expr::Binary { op, left, right } => fill(
                &self.pack.phrases.calc,
                &[
                    ("left", &cx.names.column(left, cx.from)),
                    ("arith", word(&self.pack.arith, op.symbol())?),
                    ("right", &cx.names.column(right, cx.from)),
                ],
            ),
        })
    }

    fn term(&self, t: &Term, cx: &Ctx, in_select: bool) -> Result<String, TranslateError> {
        let p = &self.pack.phrases;
        Ok(match (t.agg, &t.expr) {
            (Some(Aggregate::Count), Expr::Star) if in_select => p.count_star_select.clone(),
            (Some(Aggregate::Count), Expr::Star) => {
                let table = cx.from.first().map(|t| cx.names.table(t)).unwrap_or_default();
                fill(&p.count_star, &[("table", &table)])
            }
            (Some(a), e) => {
                let template = if t.distinct {
                    &p.aggregate_distinct
                } else {
                    &p.aggregate
                };
                fill(
                    template,
                    &[
                        ("agg", word(&self.pack.aggregates, a.name())?),
                        ("expr", &self.expr(e, cx)?),
                    ],
                )
            }
            (None, e) => self.expr(e, cx)?,
        })
    }

    fn items(&self, u: &UnitQuery, cx: &Ctx) -> Result<String, TranslateError> {
        let parts = u
            .select
            .iter()
            .map(|t| self.term(t, cx, true))
            .collect::<Result<Vec<_>, _>>()?;
        let items = self.list(parts);
        Ok(if u.distinct { format!("distinct {items}") } else { items })
    }

    fn tables(&self, from: &[String], names: &Naming) -> String {
        self.list(from.iter().map(|t| names.table(t)).collect())
    }

    fn value(v: &Value, op: CompareOp) -> String {
        match (v, op) {
            (Value::Text(s), CompareOp::Like) => s.trim_matches('%').to_string(),
            _ => v.to_string(),
        }
    }

    fn condition(&self, c: &Condition, cx: &mut Ctx) -> Result<String, TranslateError> {
        let p = &self.pack.phrases;
        let column = self.term(&c.lhs, cx, false)?;
        Ok(match &c.rhs {
            Rhs::Between(lo, hi) => fill(
                &p.between,
                &[("column", &column), ("low", &lo.to_string()), ("high", &hi.to_string())],
            ),
            Rhs::Value(v) => fill(
                &p.condition,
                &[
                    ("column", &column),
                    ("op", word(&self.pack.ops, c.op.symbol())?),
                    ("value", &Self::value(v, c.op)),
                ],
            ),
            Rhs::Column(e) => fill(
                &p.condition,
                &[
                    ("column", &column),
                    ("op", word(&self.pack.ops, c.op.symbol())?),
                    ("value", &self.expr(e, cx)?),
                ],
            ),
            Rhs::Subquery(q) => {
                let inner = self.inner(q, cx.names)?;
                cx.embedded.push(inner.clone());
                fill(
                    &p.nested,
                    &[
                        ("column", &column),
                        ("op", word(&self.pack.ops, c.op.symbol())?),
                        ("inner", &inner),
                    ],
                )
            }
        })
    }

    fn predicate(&self, p: &Predicate, cx: &mut Ctx) -> Result<String, TranslateError> {
        Ok(match p {
            Predicate::Cond(c) => self.condition(c, cx)?,
            Predicate::And(a, b) => format!(
                "{} {} {}",
                self.predicate(a, cx)?,
                self.pack.phrases.and,
                self.predicate(b, cx)?
            ),
            Predicate::Or(a, b) => format!(
                "{} {} {}",
                self.predicate(a, cx)?,
                self.pack.phrases.or,
                self.predicate(b, cx)?
            ),
        })
    }

    /// Noun phrase for a nested query, built before the host clause.
    fn inner(&self, q: &Query, names: &Naming) -> Result<String, TranslateError> {
        match q {
            Query::Unit(u) => self.inner_unit(u, names),
            Query::Compound { op, left, right } => {
                let conn = self
                    .pack
                    .connectives
                    .get(op.keyword())
                    .and_then(|c| c.first())
                    .ok_or_else(|| TranslateError::TranslationFailed(format!("no connective for {}", op.keyword())))?;
                Ok(format!(
                    "{} {conn} {}",
                    self.inner_unit(left, names)?,
                    self.inner_unit(right, names)?
                ))
            }
        }
    }

    fn inner_unit(&self, u: &UnitQuery, names: &Naming) -> Result<String, TranslateError> {
        let mut cx = Ctx {
            from: &u.from.tables,
            names,
            embedded: vec![],
        };
        let items = self.items(u, &cx)?;
        let tables = self.tables(&u.from.tables, names);
        Ok(match &u.filter {
            None => fill(&self.pack.phrases.inner, &[("items", &items), ("tables", &tables)]),
            Some(f) => {
                let conditions = self.predicate(f, &mut cx)?;
                fill(
                    &self.pack.phrases.inner_filtered,
                    &[("items", &items), ("tables", &tables), ("conditions", &conditions)],
                )
            }
        })
    }

    fn unit_fragment(
        &self,
        kind: ClauseKind,
        u: &UnitQuery,
        template: &str,
        names: &Naming,
    ) -> Result<(String, Vec<String>), TranslateError> {
        let mut cx = Ctx {
            from: &u.from.tables,
            names,
            embedded: vec![],
        };
        let p = &self.pack.phrases;
        let group = self.list(u.group_by.iter().map(|c| names.column(c, &u.from.tables)).collect());
        let tables = self.tables(&u.from.tables, names);
        let text = match kind {
            ClauseKind::Select | ClauseKind::SelectGroupBy => {
                let items = self.items(u, &cx)?;
                fill(template, &[("items", &items), ("tables", &tables), ("group", &group)])
            }
            ClauseKind::Where | ClauseKind::WhereNestedSelect => {
                let conditions = match &u.filter {
                    Some(f) => self.predicate(f, &mut cx)?,
                    None => {
                        return Err(TranslateError::TranslationFailed(
                            "WHERE clause without a filter".into(),
                        ))
                    }
                };
                fill(template, &[("conditions", &conditions), ("tables", &tables)])
            }
            ClauseKind::GroupByHaving => {
                let conditions = match &u.having {
                    Some(h) => self.predicate(h, &mut cx)?,
                    None => {
                        return Err(TranslateError::TranslationFailed(
                            "HAVING clause without a condition".into(),
                        ))
                    }
                };
                fill(template, &[("group", &group), ("conditions", &conditions)])
            }
            ClauseKind::OrderBy | ClauseKind::OrderByLimit | ClauseKind::OrderByGroupBy => {
                let (key, dir) = match &u.order_by {
                    Some(o) => (self.term(&o.key, &cx, false)?, o.dir.keyword()),
                    None => (self.items(u, &cx)?, "ASC"),
                };
                let n = u.limit.map(|n| n.to_string()).unwrap_or_default();
                let limit = match u.limit {
                    Some(1) => p.limit_one.clone(),
                    _ => fill(&p.limit_many, &[("n", &n)]),
                };
                let limit_tail = if u.limit.is_some() {
                    fill(&p.limit_tail, &[("n", &n)])
                } else {
                    String::new()
                };
                fill(
                    template,
                    &[
                        ("key", &key),
                        ("direction", word(&self.pack.direction, dir)?),
                        ("extreme", word(&self.pack.extreme, dir)?),
                        ("limit_tail", &limit_tail),
                        ("limit", &limit),
                        ("n", &n),
                        ("group", &group),
                    ],
                )
            }
            ClauseKind::SetOp => unreachable!(),
        };
        Ok((text, cx.embedded))
    }

    fn variants(&self, clause: &Clause) -> Vec<Variant<'_>> {
        let mut out: Vec<Variant> = Vec::new();
        if let ClauseSource::SetOp(op) = &clause.source {
            if let Some(c) = self.pack.connectives.get(op.keyword()) {
                out.extend(c.iter().map(|s| Variant::Literal(s)));
            }
            return out;
        }
        let templates = self.pack.templates(clause.kind);
        let learned = self.paraphrases.get(&clause.text());
        out.extend(templates.first().map(|t| Variant::Template(t)));
        if !out.is_empty() {
            out.extend(learned.into_iter().flatten().map(|s| Variant::Literal(s)));
        }
        out.extend(templates.iter().skip(1).map(|t| Variant::Template(t)));
        out
    }
}

enum Variant<'a> {
    Template(&'a str),
    Literal(&'a str),
}

impl Translator for TemplateTranslator {
    fn id(&self) -> String {
        "template-en".into()
    }

    fn variant_count(&self, clause: &Clause) -> usize {
        self.variants(clause).len()
    }

    fn translate(
        &self,
        clause: &Clause,
        names: &Naming,
        variant: Option<usize>,
    ) -> Result<Subquestion, TranslateError> {
        let variants = self.variants(clause);
        if variants.is_empty() {
            return Err(TranslateError::UnsupportedClauseKind(clause.kind));
        }
        let v = variant.unwrap_or(0) % variants.len();
        let (text, embedded) = match (&variants[v], &clause.source) {
            (Variant::Literal(s), _) => (s.to_string(), vec![]),
            (Variant::Template(t), ClauseSource::Unit(u)) => self.unit_fragment(clause.kind, u, t, names)?,
            (Variant::Template(_), ClauseSource::SetOp(_)) => unreachable!(),
        };
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        if text.is_empty() {
            return Err(TranslateError::TranslationFailed(format!(
                "empty fragment for {}",
                clause.kind
            )));
        }
        if let Some(start) = text.find('{') {
            if text[start..].contains('}') {
                return Err(TranslateError::TranslationFailed(format!("unfilled slot in '{text}'")));
            }
        }
        Ok(Subquestion {
            text,
            kind: clause.kind,
            variant: Some(v),
            embedded,
        })
    }
}

/// Line-delimited JSON protocol with an external model. Each request is
/// `{"kind", "tokens", "types", "variant"}`; the reply is `{"text": ...}` or a
/// bare line of text.
pub struct SubprocessTranslator {
    command: Vec<String>,
    io: Mutex<(Child, ChildStdin, BufReader<ChildStdout>)>,
    variants: usize,
}

impl SubprocessTranslator {
    pub fn spawn(command: &[String], variants: usize) -> Result<Self, TranslateError> {
        let (prog, args) = command
            .split_first()
            .ok_or_else(|| TranslateError::TranslationFailed("empty translator command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| TranslateError::TranslationFailed(format!("{prog}: {e}")))?;
        let stdin = child.stdin.take().unwrap();
        let stdout = BufReader::new(child.stdout.take().unwrap());
        Ok(SubprocessTranslator {
            command: command.to_vec(),
            io: Mutex::new((child, stdin, stdout)),
            variants: variants.max(1),
        })
    }
}

impl Drop for SubprocessTranslator {
    fn drop(&mut self) {
        if let Ok(mut io) = self.io.lock() {
            let _ = io.0.kill();
            let _ = io.0.wait();
        }
    }
}

#[derive(Deserialize)]
struct Reply {
    text: String,
}

impl Translator for SubprocessTranslator {
    fn id(&self) -> String {
        format!("subprocess:{}", self.command.join(" "))
    }

    fn variant_count(&self, _clause: &Clause) -> usize {
        self.variants
    }

    fn translate(
        &self,
        clause: &Clause,
        _names: &Naming,
        variant: Option<usize>,
    ) -> Result<Subquestion, TranslateError> {
        let failed = |e: String| TranslateError::TranslationFailed(e);
        let request = serde_json::json!({
            "kind": clause.kind.as_str(),
            "tokens": clause.tokens.iter().map(|t| t.display()).collect::<Vec<_>>(),
            "types": clause.tokens.iter().map(|t| t.kind.as_str()).collect::<Vec<_>>(),
            "variant": variant.unwrap_or(0),
        });
        let mut io = self.io.lock().map_err(|_| failed("translator lock poisoned".into()))?;
        let (_, stdin, stdout) = &mut *io;
        writeln!(stdin, "{request}")
            .and_then(|_| stdin.flush())
            .map_err(|e| failed(e.to_string()))?;
        let mut line = String::new();
        let n = stdout.read_line(&mut line).map_err(|e| failed(e.to_string()))?;
        if n == 0 {
            return Err(failed("translator closed its output".into()));
        }
        let line = line.trim();
        let text = match serde_json::from_str::<Reply>(line) {
            Ok(r) => r.text,
            Err(_) => line.to_string(),
        };
        if text.trim().is_empty() {
            return Err(failed(format!("empty reply for {}", clause.kind)));
        }
        Ok(Subquestion {
            text: text.trim().to_string(),
            kind: clause.kind,
            variant,
            embedded: vec![],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hier::{decompose, execution_order, sql_to_question};
    use crate::schema::ColumnType::*;
    use crate::sql::parse_sql;

    fn wta() -> Schema {
        Schema::new("wta_1").with_table(
            "matches",
            &[("draw_size", Number), ("loser_age", Number), ("loser_name", Text)],
            false,
        )
    }

    #[test]
    fn case_study_question() {
        let s = wta();
        let q = parse_sql("SELECT draw_size FROM matches WHERE loser_age > 10", Some(&s)).unwrap();
        let t = TemplateTranslator::english();
        assert_eq!(
            sql_to_question(&q, &t, &Naming::new(&s)).unwrap(),
            "With loser age higher than 10, find the draw size of the matches."
        );
    }

    #[test]
    fn order_variants_and_paraphrases() {
        let q = parse_sql("SELECT name FROM singer ORDER BY age ASC", None).unwrap();
        let c = decompose(&q).pop().unwrap();
        let names = Naming::default();
        let t = TemplateTranslator::english();
        assert_eq!(
            t.translate(&c, &names, Some(0)).unwrap().text,
            "in ascending order of the age"
        );
        let learned = HashMap::from([(c.text(), vec!["from youngest to oldest".to_string()])]);
        let t = t.with_paraphrases(learned);
        assert_eq!(t.variant_count(&c), 3);
        assert_eq!(
            t.translate(&c, &names, Some(1)).unwrap().text,
            "from youngest to oldest"
        );
        assert_eq!(
            t.translate(&c, &names, Some(0)).unwrap().text,
            "in ascending order of the age"
        );
    }

    #[test]
    fn nested_fragment_embeds_inner_phrase() {
        let q = parse_sql(
            "SELECT Name FROM Wine WHERE Price > (SELECT max(Price) FROM Wine)",
            None,
        )
        .unwrap();
        let cl = execution_order(decompose(&q));
        let t = TemplateTranslator::english();
        let sub = t.translate(&cl[0], &Naming::default(), None).unwrap();
        assert_eq!(sub.embedded, ["the maximum price of the wine"]);
        assert_eq!(sub.text, "with price higher than the maximum price of the wine");
    }

    #[test]
    fn missing_kind_is_unsupported() {
        let text = DEFAULT_TEMPLATES.replace("ORDER_BY = [", "UNUSED_ORDER = [");
        assert!(TemplatePack::from_toml(&text).is_err());
        let text = DEFAULT_TEMPLATES.replace(
            "ORDER_BY = [\n    \"in {direction} order of the {key}\",\n    \"sorted by the {key} in {direction} order\",\n]\n",
            "",
        );
        let t = TemplateTranslator::new(TemplatePack::from_toml(&text).unwrap());
        let q = parse_sql("SELECT name FROM singer ORDER BY age ASC", None).unwrap();
        let c = decompose(&q).pop().unwrap();
        assert!(matches!(
            t.translate(&c, &Naming::default(), None),
            Err(TranslateError::UnsupportedClauseKind(ClauseKind::OrderBy))
        ));
    }

    #[test]
    fn having_and_limit_phrases() {
        let q = parse_sql(
            "SELECT country, count(*) FROM singer GROUP BY country HAVING count(*) > 2 ORDER BY count(*) DESC LIMIT 1",
            None,
        )
        .unwrap();
        let t = TemplateTranslator::english();
        assert_eq!(
            sql_to_question(&q, &t, &Naming::default()).unwrap(),
            "For each country with number of singer higher than 2, find the country and number of the singer, with the highest number of singer."
        );
    }
}
