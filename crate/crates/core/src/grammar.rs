//! The abstract syntax tree grammar (ASTG): rules, bounded enumeration of
//! sketch trees, and the coverage-driven level loop.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::sql::{Pattern, PatternToken};

pub const DEFAULT_GRAMMAR: &str = include_str!("../data/astg.default");
pub const START_SYMBOL: &str = "SQLs";
pub const DEFAULT_HARD_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("undeclared symbol `{symbol}` on line {line}")]
    UndeclaredSymbol { symbol: String, line: usize },
    #[error("nonterminal `{0}` derives no terminal string")]
    UnproductiveNonterminal(String),
    #[error("start symbol `SQLs` has no rule")]
    MissingStart,
    #[error("no sketch fits level {0}")]
    Exhausted(ComplexityLevel),
    #[error("level {level} admits {count} sketches, above the cap of {cap}")]
    CapExceeded {
        level: ComplexityLevel,
        count: u128,
        cap: usize,
    },
    #[error("corpus has no patterns")]
    EmptyCorpus,
    #[error("threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("caps reached at coverage {:.4} before the threshold", .0.coverage)]
    CapExceededBeforeThreshold(Box<CoverageRun>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbol {
    Terminal(PatternToken),
    Nonterminal(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub lhs: usize,
    pub rhs: Vec<Symbol>,
}

#[derive(Debug, Clone)]
pub struct Grammar {
    pub nonterminals: Vec<String>,
    pub rules: Vec<Rule>,
    pub start: usize,
    /// Rule indices per nonterminal, in file order.
    by_lhs: Vec<Vec<usize>>,
}

impl Grammar {
    pub fn nonterminal(&self, name: &str) -> Option<usize> {
        self.nonterminals.iter().position(|n| n == name)
    }

    pub fn terminals(&self) -> BTreeSet<PatternToken> {
        self.rules
            .iter()
            .flat_map(|r| r.rhs.iter())
            .filter_map(|s| match s {
                Symbol::Terminal(t) => Some(*t),
                Symbol::Nonterminal(_) => None,
            })
            .collect()
    }

    pub fn rules_for(&self, nt: usize) -> &[usize] {
        &self.by_lhs[nt]
    }

    /// Renders rule `i` in file syntax.
    pub fn rule_text(&self, i: usize) -> String {
        let r = &self.rules[i];
        let rhs: Vec<&str> = r.rhs.iter().map(|s| self.symbol_name(*s)).collect();
        format!("{} -> {}", self.nonterminals[r.lhs], rhs.join(" "))
    }

    fn symbol_name(&self, s: Symbol) -> &str {
        match s {
            Symbol::Terminal(t) => t.as_str(),
            Symbol::Nonterminal(n) => &self.nonterminals[n],
        }
    }

    pub fn has_rule(&self, text: &str) -> bool {
        let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        let want = norm(&text.replace('→', "->"));
        (0..self.rules.len()).any(|i| self.rule_text(i) == want)
    }
}

/// Parses grammar text: one `LHS -> RHS...` rule per line, `#` comments.
/// A `|` separates alternatives for the same left-hand side.
pub fn parse_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let mut raw: Vec<(usize, String, Vec<String>)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (lhs, rhs) = line.split_once("->").ok_or_else(|| GrammarError::Parse {
            line: line_no,
            message: "expected `LHS -> RHS`".into(),
        })?;
        let lhs = lhs.trim();
        if lhs.is_empty() || lhs.contains(char::is_whitespace) {
            return Err(GrammarError::Parse {
                line: line_no,
                message: format!("bad left-hand side `{lhs}`"),
            });
        }
        if PatternToken::from_symbol(lhs).is_some() {
            return Err(GrammarError::Parse {
                line: line_no,
                message: format!("terminal `{lhs}` cannot have rules"),
            });
        }
        for alt in rhs.split('|') {
            let syms: Vec<String> = alt.split_whitespace().map(str::to_string).collect();
            if syms.is_empty() {
                return Err(GrammarError::Parse {
                    line: line_no,
                    message: "empty right-hand side".into(),
                });
            }
            raw.push((line_no, lhs.to_string(), syms));
        }
    }
    let mut nonterminals: Vec<String> = Vec::new();
    for (_, lhs, _) in &raw {
        if !nonterminals.contains(lhs) {
            nonterminals.push(lhs.clone());
        }
    }
    let start = nonterminals
        .iter()
        .position(|n| n == START_SYMBOL)
        .ok_or(GrammarError::MissingStart)?;
    let mut rules = Vec::with_capacity(raw.len());
    for (line, lhs, syms) in raw {
        let lhs = nonterminals.iter().position(|n| *n == lhs).unwrap();
        let rhs = syms
            .into_iter()
            .map(|s| {
                if let Some(t) = PatternToken::from_symbol(&s) {
                    Ok(Symbol::Terminal(t))
                } else if let Some(i) = nonterminals.iter().position(|n| *n == s) {
                    Ok(Symbol::Nonterminal(i))
                } else {
                    Err(GrammarError::UndeclaredSymbol { symbol: s, line })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rules.push(Rule { lhs, rhs });
    }
    let mut by_lhs = vec![vec![]; nonterminals.len()];
    for (i, r) in rules.iter().enumerate() {
        by_lhs[r.lhs].push(i);
    }
    let g = Grammar {
        nonterminals,
        rules,
        start,
        by_lhs,
    };
    check_productive(&g)?;
    Ok(g)
}

fn check_productive(g: &Grammar) -> Result<(), GrammarError> {
    let mut productive = vec![false; g.nonterminals.len()];
    loop {
        let mut changed = false;
        for r in &g.rules {
            if productive[r.lhs] {
                continue;
            }
            let ok = r.rhs.iter().all(|s| match s {
                Symbol::Terminal(_) => true,
                Symbol::Nonterminal(n) => productive[*n],
            });
            if ok {
                productive[r.lhs] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    match productive.iter().position(|p| !p) {
        Some(i) => Err(GrammarError::UnproductiveNonterminal(g.nonterminals[i].clone())),
        None => Ok(()),
    }
}

pub fn load_grammar(path: impl AsRef<Path>) -> Result<Grammar, GrammarError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GrammarError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_grammar(&text)
}

pub fn default_grammar() -> Grammar {
    parse_grammar(DEFAULT_GRAMMAR).expect("shipped grammar is valid")
}

// ---------------------------------------------------------------------------
// Sketch trees

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SketchChild {
    Leaf(PatternToken),
    Node(Arc<SketchNode>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchNode {
    pub rule: usize,
    pub children: Vec<SketchChild>,
    /// Nonterminal levels from this node down, counting itself.
    pub depth: usize,
    /// Largest child count in this subtree.
    pub breadth: usize,
}

impl SketchNode {
    fn preorder_rules(&self, out: &mut Vec<usize>) {
        out.push(self.rule);
        for c in &self.children {
            if let SketchChild::Node(n) = c {
                n.preorder_rules(out);
            }
        }
    }

    fn leaves(&self, out: &mut Vec<PatternToken>) {
        for c in &self.children {
            match c {
                SketchChild::Leaf(t) => out.push(*t),
                SketchChild::Node(n) => n.leaves(out),
            }
        }
    }
}

/// A derivation tree of the grammar with all database slots unfilled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchTree {
    pub root: Arc<SketchNode>,
}

impl SketchTree {
    pub fn depth(&self) -> usize {
        self.root.depth
    }

    pub fn breadth(&self) -> usize {
        self.root.breadth
    }

    pub fn flatten(&self) -> Pattern {
        let mut out = Vec::new();
        self.root.leaves(&mut out);
        Pattern(out)
    }

    /// Rule indices in preorder; the canonical sort key.
    pub fn rule_sequence(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.root.preorder_rules(&mut out);
        out
    }

    /// Bracketed rendering such as `SQLs(SQL(Select(SELECT A)))`.
    pub fn render(&self, g: &Grammar) -> String {
        fn go(n: &SketchNode, g: &Grammar, out: &mut String) {
            out.push_str(&g.nonterminals[g.rules[n.rule].lhs]);
            out.push('(');
            for (i, c) in n.children.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                match c {
                    SketchChild::Leaf(t) => out.push_str(t.as_str()),
                    SketchChild::Node(m) => go(m, g, out),
                }
            }
            out.push(')');
        }
        let mut s = String::new();
        go(&self.root, g, &mut s);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComplexityLevel {
    pub depth: usize,
    pub breadth: usize,
}

impl ComplexityLevel {
    pub const fn new(depth: usize, breadth: usize) -> Self {
        ComplexityLevel { depth, breadth }
    }
}

impl fmt::Display for ComplexityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(depth {}, breadth {})", self.depth, self.breadth)
    }
}

/// Number of trees with depth ≤ `level.depth` and breadth ≤ `level.breadth`,
/// saturating just above `cap`.
pub fn count_sketches(g: &Grammar, level: ComplexityLevel, cap: usize) -> u128 {
    let limit = cap as u128 + 1;
    // counts[d][nt]
    let mut prev = vec![0u128; g.nonterminals.len()];
    for _ in 0..level.depth {
        let mut cur = vec![0u128; g.nonterminals.len()];
        for (nt, slot) in cur.iter_mut().enumerate() {
            let mut total = 0u128;
            for &ri in g.rules_for(nt) {
                let rule = &g.rules[ri];
                if rule.rhs.len() > level.breadth {
                    continue;
                }
                let mut prod = 1u128;
                for s in &rule.rhs {
                    if let Symbol::Nonterminal(c) = s {
                        prod = prod.saturating_mul(prev[*c]).min(limit);
                    }
                }
                total = total.saturating_add(prod).min(limit);
            }
            *slot = total;
        }
        prev = cur;
    }
    prev[g.start]
}

/// All sketch trees within `level`, in canonical rule-index order.
pub fn enumerate_sketches(g: &Grammar, level: ComplexityLevel) -> Result<Vec<SketchTree>, GrammarError> {
    enumerate_sketches_capped(g, level, DEFAULT_HARD_CAP)
}

pub fn enumerate_sketches_capped(
    g: &Grammar,
    level: ComplexityLevel,
    cap: usize,
) -> Result<Vec<SketchTree>, GrammarError> {
    let count = count_sketches(g, level, cap);
    if count > cap as u128 {
        return Err(GrammarError::CapExceeded { level, count, cap });
    }
    if count == 0 {
        return Err(GrammarError::Exhausted(level));
    }
    let mut memo: HashMap<(usize, usize), Arc<Vec<Arc<SketchNode>>>> = HashMap::new();
    let roots = expand(g, g.start, level.depth, level.breadth, &mut memo);
    Ok(roots.iter().map(|r| SketchTree { root: r.clone() }).collect())
}

fn expand(
    g: &Grammar,
    nt: usize,
    depth: usize,
    breadth: usize,
    memo: &mut HashMap<(usize, usize), Arc<Vec<Arc<SketchNode>>>>,
) -> Arc<Vec<Arc<SketchNode>>> {
    if depth == 0 {
        return Arc::new(vec![]);
    }
    if let Some(v) = memo.get(&(nt, depth)) {
        return v.clone();
    }
    let mut out = Vec::new();
    for &ri in g.rules_for(nt) {
        let rule = &g.rules[ri];
        if rule.rhs.len() > breadth {
            continue;
        }
        // options per position
        let options: Vec<Vec<SketchChild>> = rule
            .rhs
            .iter()
            .map(|s| match s {
                Symbol::Terminal(t) => vec![SketchChild::Leaf(*t)],
                Symbol::Nonterminal(c) => expand(g, *c, depth - 1, breadth, memo)
                    .iter()
                    .map(|n| SketchChild::Node(n.clone()))
                    .collect(),
            })
            .collect();
        if options.iter().any(|o| o.is_empty()) {
            continue;
        }
        // odometer over positions, last position fastest
        let mut idx = vec![0usize; options.len()];
        loop {
            let children: Vec<SketchChild> = idx.iter().zip(&options).map(|(&i, o)| o[i].clone()).collect();
            let (mut d, mut b) = (0, children.len());
            for c in &children {
                if let SketchChild::Node(n) = c {
                    d = d.max(n.depth);
                    b = b.max(n.breadth);
                }
            }
            out.push(Arc::new(SketchNode {
                rule: ri,
                children,
                depth: d + 1,
                breadth: b,
            }));
            let mut pos = options.len();
            let advanced = loop {
                if pos == 0 {
                    break false;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < options[pos].len() {
                    break true;
                }
                idx[pos] = 0;
            };
            if !advanced {
                break;
            }
        }
    }
    let v = Arc::new(out);
    memo.insert((nt, depth), v.clone());
    v
}

// ---------------------------------------------------------------------------
// Recognition

/// Earley recognizer: does the grammar derive exactly this pattern?
pub fn recognizes(g: &Grammar, pattern: &Pattern) -> bool {
    #[derive(Clone, Copy, PartialEq, Eq, Hash)]
    struct Item {
        rule: usize,
        dot: usize,
        origin: usize,
    }
    let toks = pattern.tokens();
    let n = toks.len();
    let mut sets: Vec<Vec<Item>> = vec![vec![]; n + 1];
    let mut seen: Vec<HashSet<Item>> = vec![HashSet::new(); n + 1];
    let push = |sets: &mut Vec<Vec<Item>>, seen: &mut Vec<HashSet<Item>>, k: usize, it: Item| {
        if seen[k].insert(it) {
            sets[k].push(it);
        }
    };
    for &ri in g.rules_for(g.start) {
        push(
            &mut sets,
            &mut seen,
            0,
            Item {
                rule: ri,
                dot: 0,
                origin: 0,
            },
        );
    }
    for k in 0..=n {
        let mut i = 0;
        while i < sets[k].len() {
            let it = sets[k][i];
            i += 1;
            let rule = &g.rules[it.rule];
            match rule.rhs.get(it.dot) {
                Some(Symbol::Nonterminal(c)) => {
                    for &ri in g.rules_for(*c) {
                        push(
                            &mut sets,
                            &mut seen,
                            k,
                            Item {
                                rule: ri,
                                dot: 0,
                                origin: k,
                            },
                        );
                    }
                }
                Some(Symbol::Terminal(t)) => {
                    if k < n && toks[k] == *t {
                        push(&mut sets, &mut seen, k + 1, Item { dot: it.dot + 1, ..it });
                    }
                }
                None => {
                    let done = rule.lhs;
                    let parents: Vec<Item> = sets[it.origin]
                        .iter()
                        .filter(|p| g.rules[p.rule].rhs.get(p.dot) == Some(&Symbol::Nonterminal(done)))
                        .copied()
                        .collect();
                    for p in parents {
                        push(&mut sets, &mut seen, k, Item { dot: p.dot + 1, ..p });
                    }
                }
            }
        }
    }
    sets[n]
        .iter()
        .any(|it| it.origin == 0 && g.rules[it.rule].lhs == g.start && it.dot == g.rules[it.rule].rhs.len())
}

// ---------------------------------------------------------------------------
// Coverage

/// Share of distinct corpus patterns present in `generated`.
pub fn coverage<'a>(
    generated: &HashSet<Pattern>,
    corpus: impl IntoIterator<Item = &'a Pattern>,
) -> Result<f64, GrammarError> {
    let distinct: HashSet<&Pattern> = corpus.into_iter().collect();
    if distinct.is_empty() {
        return Err(GrammarError::EmptyCorpus);
    }
    let hit = distinct.iter().filter(|p| generated.contains(**p)).count();
    Ok(hit as f64 / distinct.len() as f64)
}

/// Level sequence from simple to complex: depth and breadth are raised
/// alternately, depth first, until both reach their maxima.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelSchedule {
    pub start: ComplexityLevel,
    pub max: ComplexityLevel,
    pub hard_cap: usize,
}

impl Default for LevelSchedule {
    fn default() -> Self {
        LevelSchedule {
            start: ComplexityLevel::new(2, 2),
            max: ComplexityLevel::new(10, 6),
            hard_cap: DEFAULT_HARD_CAP,
        }
    }
}

impl LevelSchedule {
    pub fn levels(&self) -> Vec<ComplexityLevel> {
        let mut out = vec![self.start];
        let mut cur = self.start;
        loop {
            let next = if cur.depth > cur.breadth && cur.breadth < self.max.breadth {
                ComplexityLevel::new(cur.depth, cur.breadth + 1)
            } else if cur.depth < self.max.depth {
                ComplexityLevel::new(cur.depth + 1, cur.breadth)
            } else if cur.breadth < self.max.breadth {
                ComplexityLevel::new(cur.depth, cur.breadth + 1)
            } else {
                break;
            };
            out.push(next);
            cur = next;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct LevelReport {
    pub level: ComplexityLevel,
    pub new_patterns: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone)]
pub struct CoverageRun {
    /// One sketch per distinct pattern, in first-seen order.
    pub sketches: Vec<SketchTree>,
    pub coverage: f64,
    pub final_level: ComplexityLevel,
    pub levels: Vec<LevelReport>,
}

/// Accumulates sketches level by level until `threshold` of the distinct
/// corpus patterns are covered.
pub fn generate_until_coverage(
    g: &Grammar,
    corpus: &[Pattern],
    threshold: f64,
    schedule: &LevelSchedule,
) -> Result<CoverageRun, GrammarError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(GrammarError::InvalidThreshold(threshold));
    }
    let targets: HashSet<&Pattern> = corpus.iter().collect();
    if targets.is_empty() {
        return Err(GrammarError::EmptyCorpus);
    }
    let mut run = CoverageRun {
        sketches: vec![],
        coverage: 0.0,
        final_level: schedule.start,
        levels: vec![],
    };
    let mut seen: HashSet<Pattern> = HashSet::new();
    let mut hit = 0usize;
    for level in schedule.levels() {
        run.final_level = level;
        let trees = match enumerate_sketches_capped(g, level, schedule.hard_cap) {
            Ok(t) => t,
            Err(GrammarError::Exhausted(_)) => vec![],
            Err(GrammarError::CapExceeded { count, .. }) => {
                log::warn!("level {level} would produce {count} sketches; stopping");
                return Err(GrammarError::CapExceededBeforeThreshold(Box::new(run)));
            }
            Err(e) => return Err(e),
        };
        let mut new_patterns = 0;
        for t in trees {
            let p = t.flatten();
            if seen.contains(&p) {
                continue;
            }
            if targets.contains(&p) {
                hit += 1;
            }
            seen.insert(p);
            run.sketches.push(t);
            new_patterns += 1;
        }
        run.coverage = hit as f64 / targets.len() as f64;
        log::debug!(
            "level {level}: {new_patterns} new patterns, coverage {:.4}",
            run.coverage
        );
        run.levels.push(LevelReport {
            level,
            new_patterns,
            coverage: run.coverage,
        });
        if run.coverage >= threshold {
            return Ok(run);
        }
    }
    Err(GrammarError::CapExceededBeforeThreshold(Box::new(run)))
}
