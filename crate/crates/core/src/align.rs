//! Clause/subquestion pairs mined from labeled question/SQL data by n-gram
//! string matching.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hier::{decompose, Clause, ClauseKind, ClauseSource, Naming};
use crate::schema::Schema;
use crate::sql::{parse_sql, ColumnRef, CompareOp, Expr, Predicate, Query, Rhs, Term, TokenKind, UnitQuery, Value};

pub const MAX_NGRAM: usize = 6;

/// A question word with its byte offsets in the original text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on whitespace and peels punctuation off word edges into separate
/// tokens.
pub fn tokenize_question(text: &str) -> Vec<QToken> {
    let mut out = Vec::new();
    let mut push = |s: usize, e: usize| {
        if e > s {
            out.push(QToken {
                text: text[s..e].to_string(),
                start: s,
                end: e,
            })
        }
    };
    let is_word = |c: char| c.is_alphanumeric() || c == '%';
    let mut chunk_start = None;
    let bytes: Vec<(usize, char)> = text.char_indices().chain(std::iter::once((text.len(), ' '))).collect();
    for &(i, c) in &bytes {
        match (c.is_whitespace(), chunk_start) {
            (false, None) => chunk_start = Some(i),
            (true, Some(s)) => {
                let chunk = &text[s..i];
                let lead = chunk.find(is_word).unwrap_or(chunk.len());
                let trail = chunk
                    .rfind(is_word)
                    .map_or(lead, |p| p + chunk[p..].chars().next().unwrap().len_utf8());
                for (k, ch) in chunk[..lead].char_indices() {
                    push(s + k, s + k + ch.len_utf8());
                }
                push(s + lead, s + trail.max(lead));
                for (k, ch) in chunk[trail.max(lead)..].char_indices() {
                    let at = s + trail.max(lead) + k;
                    push(at, at + ch.len_utf8());
                }
                chunk_start = None;
            }
            _ => {}
        }
    }
    out
}

/// Lowercase, punctuation stripped, naive singular ("-ies" to "-y", trailing
/// "s" dropped from longer words).
pub fn normalize_word(w: &str) -> String {
    let mut s: String = w
        .chars()
        .filter(|c| c.is_alphanumeric() || *c == '.')
        .flat_map(char::to_lowercase)
        .collect();
    s = s.trim_matches('.').to_string();
    if s.chars().count() > 4 && s.ends_with("ies") {
        s.truncate(s.len() - 3);
        s.push('y');
    } else if s.chars().count() > 3 && s.ends_with('s') && !s.ends_with("ss") {
        s.pop();
    }
    s
}

fn normalize_phrase(text: &str) -> Vec<String> {
    text.replace('_', " ")
        .split_whitespace()
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .collect()
}

/// A column, table, or literal value referenced by a query.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DbElement {
    Column {
        table: Option<String>,
        column: String,
    },
    Table(String),
    /// Display form; LIKE patterns lose their `%` wildcards.
    Value(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub span: Range<usize>,
    pub element: DbElement,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenAlignment {
    pub links: Vec<Link>,
}

impl TokenAlignment {
    pub fn spans_for(&self, e: &DbElement) -> Vec<Range<usize>> {
        self.links
            .iter()
            .filter(|l| &l.element == e)
            .map(|l| l.span.clone())
            .collect()
    }
}

struct Collector<'a> {
    names: Naming<'a>,
    out: Vec<(DbElement, String)>,
}

impl Collector<'_> {
    fn push(&mut self, e: DbElement, natural: String) {
        if !self.out.iter().any(|(x, _)| *x == e) {
            self.out.push((e, natural));
        }
    }

    fn column(&mut self, c: &ColumnRef, from: &[String]) {
        let (table, column) = match self.names.schema {
            Some(s) => {
                let id = match &c.table {
                    Some(t) => s.column_id(t, &c.column),
                    None => s.owner_of(&c.column, from),
                };
                match id {
                    Some(id) => (Some(s.tables[id.table].name.clone()), s.col(id).name.clone()),
                    None => (c.table.clone(), c.column.clone()),
                }
            }
            None => (None, c.column.to_lowercase()),
        };
        let natural = self.names.column(c, from);
        self.push(DbElement::Column { table, column }, natural);
    }

    fn expr(&mut self, e: &Expr, from: &[String]) {
        for c in e.columns() {
            self.column(c, from);
        }
    }

    fn term(&mut self, t: &Term, from: &[String]) {
        self.expr(&t.expr, from);
    }

    fn table(&mut self, t: &str) {
        let natural = self.names.table(t);
        let id = self
            .names
            .schema
            .and_then(|s| s.table(t))
            .map_or_else(|| t.to_lowercase(), |x| x.name.clone());
        self.push(DbElement::Table(id), natural);
    }

    fn value(&mut self, v: &Value, op: CompareOp) {
        let text = match (v, op) {
            (Value::Text(s), CompareOp::Like) => s.trim_matches('%').to_string(),
            _ => v.to_string(),
        };
        self.push(DbElement::Value(text.clone()), text);
    }

    fn predicate(&mut self, p: &Predicate, from: &[String]) {
        for c in p.conditions() {
            self.term(&c.lhs, from);
            match &c.rhs {
                Rhs::Value(v) => self.value(v, c.op),
                Rhs::Between(a, b) => {
                    self.value(a, c.op);
                    self.value(b, c.op);
                }
                Rhs::Column(e) => self.expr(e, from),
                Rhs::Subquery(q) => {
                    for u in q.units() {
                        self.unit(u);
                    }
                }
            }
        }
    }

    /// Everything a nested query mentions, FROM tables excluded.
    fn unit(&mut self, u: &UnitQuery) {
        let from = &u.from.tables;
        for t in &u.select {
            self.term(t, from);
        }
        if let Some(f) = &u.filter {
            self.predicate(f, from);
        }
        for g in &u.group_by {
            self.column(g, from);
        }
        if let Some(h) = &u.having {
            self.predicate(h, from);
        }
        if let Some(o) = &u.order_by {
            self.term(&o.key, from);
        }
    }
}

/// DB elements a clause must cover, each with its natural-language form.
/// SELECT clauses include their FROM tables; LIMIT counts are not elements.
pub fn clause_elements(clause: &Clause, names: &Naming) -> Vec<(DbElement, String)> {
    let mut c = Collector {
        names: *names,
        out: vec![],
    };
    let ClauseSource::Unit(u) = &clause.source else {
        return vec![];
    };
    let from = &u.from.tables;
    match clause.kind {
        ClauseKind::Select | ClauseKind::SelectGroupBy => {
            for t in &u.select {
                c.term(t, from);
            }
            if clause.kind == ClauseKind::SelectGroupBy {
                for g in &u.group_by {
                    c.column(g, from);
                }
            }
            for t in from {
                c.table(t);
            }
        }
        ClauseKind::Where | ClauseKind::WhereNestedSelect => {
            if let Some(f) = &u.filter {
                c.predicate(f, from);
            }
        }
        ClauseKind::GroupByHaving => {
            for g in &u.group_by {
                c.column(g, from);
            }
            if let Some(h) = &u.having {
                c.predicate(h, from);
            }
        }
        ClauseKind::OrderBy | ClauseKind::OrderByLimit | ClauseKind::OrderByGroupBy => {
            if clause.kind == ClauseKind::OrderByGroupBy {
                for g in &u.group_by {
                    c.column(g, from);
                }
            }
            if let Some(o) = &u.order_by {
                c.term(&o.key, from);
            }
        }
        ClauseKind::SetOp => {}
    }
    c.out
}

/// Every DB element of the query, FROM tables included.
pub fn query_elements(q: &Query, names: &Naming) -> Vec<(DbElement, String)> {
    let mut c = Collector {
        names: *names,
        out: vec![],
    };
    for u in q.units() {
        c.unit(u);
        for t in &u.from.tables {
            c.table(t);
        }
    }
    c.out
}

fn as_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|f| f.is_finite())
}

/// Spans whose words equal `phrase`. Multi-word phrases with no exact hit
/// fall back to spans that start with the first word, end with the last,
/// and contain every word in order.
fn match_spans(words: &[String], phrase: &str, is_value: bool) -> (Vec<Range<usize>>, bool) {
    let target = normalize_phrase(phrase);
    if target.is_empty() || target.len() > MAX_NGRAM {
        return (vec![], true);
    }
    let mut out = Vec::new();
    if is_value {
        if let Some(x) = as_number(phrase.trim()) {
            for (i, w) in words.iter().enumerate() {
                if as_number(w).is_some_and(|y| y == x) {
                    out.push(i..i + 1);
                }
            }
            return (out, true);
        }
    }
    let n = target.len();
    for i in 0..words.len().saturating_sub(n - 1) {
        if words[i..i + n] == target[..] {
            out.push(i..i + n);
        }
    }
    if !out.is_empty() || n == 1 || is_value {
        return (out, true);
    }
    {
        for i in 0..words.len() {
            if words[i] != target[0] {
                continue;
            }
            for j in i + n..=(i + MAX_NGRAM).min(words.len()) {
                if words[j - 1] != target[n - 1] {
                    continue;
                }
                let mut k = 0;
                for w in &words[i..j] {
                    if k < n && *w == target[k] {
                        k += 1;
                    }
                }
                if k == n {
                    out.push(i..j);
                    break;
                }
            }
        }
    }
    (out, false)
}

/// Links question n-grams (n ≤ 6) to the query's DB elements. On overlaps a
/// strictly longer exact link wins; gapped matches never displace others.
pub fn link_schema(question: &[QToken], q: &Query, names: &Naming) -> TokenAlignment {
    let words: Vec<String> = question.iter().map(|t| normalize_word(&t.text)).collect();
    let mut cands: Vec<(Link, bool)> = Vec::new();
    for (e, natural) in query_elements(q, names) {
        let is_value = matches!(e, DbElement::Value(_));
        let (spans, exact) = match_spans(&words, &natural, is_value);
        for span in spans {
            cands.push((
                Link {
                    span,
                    element: e.clone(),
                },
                exact,
            ));
        }
    }
    let overlaps = |a: &Range<usize>, b: &Range<usize>| a.start < b.end && b.start < a.end;
    let mut links: Vec<Link> = cands
        .iter()
        .filter(|(l, exact)| {
            !exact
                || !cands
                    .iter()
                    .any(|(m, m_exact)| *m_exact && m.span.len() > l.span.len() && overlaps(&m.span, &l.span))
        })
        .map(|(l, _)| l.clone())
        .collect();
    links.sort_by(|a, b| (a.span.start, a.span.end, &a.element).cmp(&(b.span.start, b.span.end, &b.element)));
    TokenAlignment { links }
}

/// Shortest window holding one span per group; leftmost on ties.
pub fn minimal_cover(groups: &[Vec<Range<usize>>]) -> Option<Range<usize>> {
    if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
        return None;
    }
    let mut starts: Vec<usize> = groups.iter().flatten().map(|r| r.start).collect();
    starts.sort_unstable();
    starts.dedup();
    let mut best: Option<Range<usize>> = None;
    for &l in &starts {
        let mut r = l;
        let mut ok = true;
        for g in groups {
            match g.iter().filter(|s| s.start >= l).map(|s| s.end).min() {
                Some(e) => r = r.max(e),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && best.as_ref().is_none_or(|b| r - l < b.len()) {
            best = Some(l..r);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClausePair {
    pub question_id: usize,
    pub clause_index: usize,
    pub clause: Clause,
    /// Token span in the question.
    pub span: Range<usize>,
    pub subquestion: String,
    pub confidence: Confidence,
    pub variant: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub pairs: Vec<ClausePair>,
    /// Clauses considered (set operators are skipped).
    pub clauses: usize,
    pub unaligned: usize,
}

/// One pair per clause whose elements are all linked.
pub fn extract_pairs(
    question_id: usize,
    question: &str,
    tokens: &[QToken],
    q: &Query,
    alignment: &TokenAlignment,
    names: &Naming,
) -> Extraction {
    let mut ex = Extraction::default();
    for (i, clause) in decompose(q).into_iter().enumerate() {
        if clause.kind == ClauseKind::SetOp {
            continue;
        }
        ex.clauses += 1;
        let elements = clause_elements(&clause, names);
        let has_required = elements.iter().any(|(e, _)| !matches!(e, DbElement::Table(_)));
        // tables are optional next to columns or values, and join the cover only when linked
        let groups: Vec<Vec<Range<usize>>> = elements
            .iter()
            .map(|(e, _)| alignment.spans_for(e))
            .enumerate()
            .filter(|(i, g)| !(has_required && matches!(elements[*i].0, DbElement::Table(_)) && g.is_empty()))
            .map(|(_, g)| g)
            .collect();
        match minimal_cover(&groups) {
            Some(span) => {
                let text = question[tokens[span.start].start..tokens[span.end - 1].end].to_string();
                ex.pairs.push(ClausePair {
                    question_id,
                    clause_index: i,
                    clause,
                    span,
                    subquestion: text,
                    confidence: Confidence::Low,
                    variant: 0,
                });
            }
            None => ex.unaligned += 1,
        }
    }
    ex
}

fn strictly_contains(a: &Range<usize>, b: &Range<usize>) -> bool {
    a.start <= b.start && b.end <= a.end && a != b
}

/// Within one question, drops a pair whose span strictly contains another
/// clause's span, and both pairs when spans are equal.
pub fn filter_pairs(pairs: Vec<ClausePair>) -> Vec<ClausePair> {
    let keep: Vec<bool> = pairs
        .iter()
        .map(|a| {
            !pairs.iter().any(|b| {
                a.question_id == b.question_id
                    && a.clause_index != b.clause_index
                    && (strictly_contains(&a.span, &b.span) || a.span == b.span)
            })
        })
        .collect();
    pairs
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(mut p, _)| {
            p.confidence = Confidence::High;
            p
        })
        .collect()
}

/// Clause tokens with columns, tables and values replaced by slot names.
pub fn clause_key(clause: &Clause) -> String {
    clause
        .tokens
        .iter()
        .map(|t| match t.kind {
            TokenKind::Column => "C",
            TokenKind::Table => "T",
            TokenKind::Value => "V",
            _ => t.text.as_str(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub clause_tokens: Vec<String>,
    pub token_types: Vec<String>,
    pub variant: usize,
    pub subquestion: String,
    pub count: usize,
}

/// Training pairs grouped by clause key, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub records: Vec<CorpusRecord>,
    pub keys: Vec<String>,
}

impl Corpus {
    /// Learned phrasings keyed by clause text, for the template translator.
    pub fn paraphrase_table(&self) -> HashMap<String, Vec<String>> {
        let mut out: HashMap<String, Vec<String>> = HashMap::new();
        for r in &self.records {
            let text = r.clause_tokens.join(" ");
            let v = out.entry(text).or_default();
            if !v.contains(&r.subquestion) {
                v.push(r.subquestion.clone());
            }
        }
        out
    }
}

/// Numbers distinct subquestions per clause key; repeats only raise the count.
pub fn collect_variants(pairs: &[ClausePair]) -> Corpus {
    let mut sorted: Vec<&ClausePair> = pairs.iter().collect();
    sorted.sort_by_key(|p| (p.question_id, p.clause_index));
    let mut corpus = Corpus::default();
    let mut next_variant: HashMap<String, usize> = HashMap::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    for p in sorted {
        let key = clause_key(&p.clause);
        if let Some(&i) = seen.get(&(key.clone(), p.subquestion.clone())) {
            corpus.records[i].count += 1;
            continue;
        }
        let v = next_variant.entry(key.clone()).or_insert(0);
        seen.insert((key.clone(), p.subquestion.clone()), corpus.records.len());
        corpus.records.push(CorpusRecord {
            clause_tokens: p.clause.tokens.iter().map(|t| t.text.clone()).collect(),
            token_types: p.clause.tokens.iter().map(|t| t.kind.as_str().to_string()).collect(),
            variant: *v,
            subquestion: p.subquestion.clone(),
            count: 1,
        });
        corpus.keys.push(key);
        *v += 1;
    }
    corpus
}

pub fn export_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in &corpus.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// One labeled example, Spider field names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub question: String,
    #[serde(alias = "sql")]
    pub query: String,
    pub db_id: String,
}

/// Reads JSONL, or a JSON array when the file starts with `[`.
pub fn load_labeled(path: impl AsRef<Path>) -> io::Result<Vec<LabeledExample>> {
    let text = fs::read_to_string(path)?;
    let bad = |e: serde_json::Error| io::Error::new(io::ErrorKind::InvalidData, e);
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(bad);
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(bad))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AlignReport {
    pub examples: usize,
    pub parse_failures: usize,
    pub unknown_db: usize,
    pub clauses: usize,
    pub aligned: usize,
    pub kept: usize,
    /// Aligned clauses over considered clauses.
    pub alignment_rate: f64,
}

/// Mines the whole labeled set; examples run in parallel, results merge by
/// example index.
pub fn mine_corpus(
    examples: &[LabeledExample],
    schemas: &BTreeMap<String, Arc<Schema>>,
) -> (Corpus, Vec<ClausePair>, AlignReport) {
    enum Outcome {
        UnknownDb,
        ParseFailure,
        Mined(Extraction),
    }
    let outcomes: Vec<Outcome> = examples
        .par_iter()
        .enumerate()
        .map(|(id, ex)| {
            let Some(schema) = schemas.get(&ex.db_id) else {
                return Outcome::UnknownDb;
            };
            let q = match parse_sql(&ex.query, Some(schema)) {
                Ok(q) => q,
                Err(e) => {
                    log::debug!("example {id}: {e}");
                    return Outcome::ParseFailure;
                }
            };
            let names = Naming::new(schema);
            let tokens = tokenize_question(&ex.question);
            let alignment = link_schema(&tokens, &q, &names);
            Outcome::Mined(extract_pairs(id, &ex.question, &tokens, &q, &alignment, &names))
        })
        .collect();
    let mut report = AlignReport {
        examples: examples.len(),
        ..Default::default()
    };
    let mut pairs = Vec::new();
    for o in outcomes {
        match o {
            Outcome::UnknownDb => report.unknown_db += 1,
            Outcome::ParseFailure => report.parse_failures += 1,
            Outcome::Mined(ex) => {
                report.clauses += ex.clauses;
                report.aligned += ex.pairs.len();
                pairs.extend(ex.pairs);
            }
        }
    }
    let mut kept = filter_pairs(pairs);
    report.kept = kept.len();
    report.alignment_rate = if report.clauses == 0 {
        0.0
    } else {
        report.aligned as f64 / report.clauses as f64
    };
    let corpus = collect_variants(&kept);
    for p in kept.iter_mut() {
        let key = clause_key(&p.clause);
        if let Some(r) = corpus
            .records
            .iter()
            .zip(&corpus.keys)
            .find(|(r, k)| **k == key && r.subquestion == p.subquestion)
        {
            p.variant = r.0.variant;
        }
    }
    (corpus, kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_peels_punctuation() {
        let t: Vec<String> = tokenize_question("What's the age, in years (of heads)?")
            .into_iter()
            .map(|t| t.text)
            .collect();
        assert_eq!(
            t,
            ["What's", "the", "age", ",", "in", "years", "(", "of", "heads", ")", "?"]
        );
        assert_eq!(tokenize_question("  ").len(), 0);
        assert_eq!(tokenize_question("3.5 %ab%")[0].text, "3.5");
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_word("Heads"), "head");
        assert_eq!(normalize_word("California"), "california");
        assert_eq!(normalize_word("class"), "class");
        assert_eq!(normalize_word("10."), "10");
        assert_eq!(normalize_phrase("loser_age"), ["loser", "age"]);
    }

    #[test]
    #[allow(clippy::single_range_in_vec_init)]
    fn minimal_cover_examples() {
        assert_eq!(minimal_cover(&[vec![2..3]]), Some(2..3));
        assert_eq!(minimal_cover(&[vec![0..1, 8..9], vec![5..6]]), Some(5..9));
        assert_eq!(minimal_cover(&[vec![0..1], vec![]]), None);
        assert_eq!(minimal_cover(&[]), None);
        // equal length windows: leftmost
        assert_eq!(minimal_cover(&[vec![0..1, 4..5], vec![1..2, 5..6]]), Some(0..2));
    }
}
