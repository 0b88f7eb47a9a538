//! Canonical token stream and single-line rendering of a [`Query`].

use super::ast::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Keyword,
    Column,
    Table,
    Value,
    Other,
}

impl TokenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Keyword => "keyword",
            TokenKind::Column => "column",
            TokenKind::Table => "table",
            TokenKind::Value => "value",
            TokenKind::Other => "other",
        }
    }
}

/// Syntactic region of a unit query a token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Select,
    From,
    Where,
    GroupBy,
    Having,
    OrderBy,
    Limit,
    SetOp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqlToken {
    /// `ORDER BY` and `GROUP BY` are single tokens spelled `ORDER_BY` / `GROUP_BY`.
    pub text: String,
    pub kind: TokenKind,
    /// 0 for the left (or only) unit query, 1 for the right side of a set operation.
    pub branch: usize,
    pub part: Part,
    /// True for tokens inside a nested subquery; `part` is then the outer region.
    pub nested: bool,
    glue_left: bool,
    glue_right: bool,
}

impl SqlToken {
    pub fn display(&self) -> &str {
        match self.text.as_str() {
            "ORDER_BY" => "ORDER BY",
            "GROUP_BY" => "GROUP BY",
            t => t,
        }
    }
}

struct Writer {
    out: Vec<SqlToken>,
    branch: usize,
    part: Part,
    nested: bool,
}

impl Writer {
    fn push(&mut self, text: impl Into<String>, kind: TokenKind) {
        self.push_glued(text, kind, false, false);
    }

    fn push_glued(&mut self, text: impl Into<String>, kind: TokenKind, left: bool, right: bool) {
        self.out.push(SqlToken {
            text: text.into(),
            kind,
            branch: self.branch,
            part: self.part,
            nested: self.nested,
            glue_left: left,
            glue_right: right,
        });
    }

    fn column(&mut self, c: &ColumnRef) {
        self.push(c.to_string(), TokenKind::Column);
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Star => self.push("*", TokenKind::Column),
            Expr::Column(c) => self.column(c),
            Expr::Binary { op, left, right } => {
                self.column(left);
                self.push(op.symbol(), TokenKind::Other);
                self.column(right);
            }
        }
    }

    fn term(&mut self, t: &Term) {
        match t.agg {
            Some(agg) => {
                self.push(agg.name(), TokenKind::Keyword);
                self.push_glued("(", TokenKind::Other, true, true);
                if t.distinct {
                    self.push("DISTINCT", TokenKind::Keyword);
                }
                self.expr(&t.expr);
                self.push_glued(")", TokenKind::Other, true, false);
            }
            None => self.expr(&t.expr),
        }
    }

    fn condition(&mut self, c: &Condition) {
        self.term(&c.lhs);
        let op_kind = if c.op.symbol().chars().all(|ch| ch.is_ascii_alphabetic() || ch == ' ') {
            TokenKind::Keyword
        } else {
            TokenKind::Other
        };
        self.push(c.op.symbol(), op_kind);
        match &c.rhs {
            Rhs::Value(v) => self.push(v.to_sql_literal(), TokenKind::Value),
            Rhs::Between(lo, hi) => {
                self.push(lo.to_sql_literal(), TokenKind::Value);
                self.push("AND", TokenKind::Keyword);
                self.push(hi.to_sql_literal(), TokenKind::Value);
            }
            Rhs::Column(e) => self.expr(e),
            Rhs::Subquery(q) => {
                self.push("(", TokenKind::Other);
                let saved = self.nested;
                self.nested = true;
                let (branch, part) = (self.branch, self.part);
                self.query_inner(q);
                self.branch = branch;
                self.part = part;
                self.nested = saved;
                self.push(")", TokenKind::Other);
            }
        }
    }

    fn predicate(&mut self, p: &Predicate) {
        match p {
            Predicate::Cond(c) => self.condition(c),
            Predicate::And(a, b) => {
                self.grouped(a, matches!(**a, Predicate::Or(..)));
                self.push("AND", TokenKind::Keyword);
                self.grouped(b, !matches!(**b, Predicate::Cond(_)));
            }
            Predicate::Or(a, b) => {
                self.grouped(a, false);
                self.push("OR", TokenKind::Keyword);
                self.grouped(b, matches!(**b, Predicate::Or(..)));
            }
        }
    }

    fn grouped(&mut self, p: &Predicate, parens: bool) {
        if parens {
            self.push_glued("(", TokenKind::Other, false, true);
            self.predicate(p);
            self.push_glued(")", TokenKind::Other, true, false);
        } else {
            self.predicate(p);
        }
    }

    fn unit(&mut self, u: &UnitQuery) {
        // nested tokens keep the enclosing region
        let set = |w: &mut Writer, part: Part| {
            if !w.nested {
                w.part = part;
            }
        };
        set(self, Part::Select);
        self.push("SELECT", TokenKind::Keyword);
        if u.distinct {
            self.push("DISTINCT", TokenKind::Keyword);
        }
        for (i, t) in u.select.iter().enumerate() {
            if i > 0 {
                self.push_glued(",", TokenKind::Other, true, false);
            }
            self.term(t);
        }
        set(self, Part::From);
        self.push("FROM", TokenKind::Keyword);
        self.from(&u.from);
        if let Some(p) = &u.filter {
            set(self, Part::Where);
            self.push("WHERE", TokenKind::Keyword);
            self.predicate(p);
        }
        if !u.group_by.is_empty() {
            set(self, Part::GroupBy);
            self.push("GROUP_BY", TokenKind::Keyword);
            for (i, c) in u.group_by.iter().enumerate() {
                if i > 0 {
                    self.push_glued(",", TokenKind::Other, true, false);
                }
                self.column(c);
            }
        }
        if let Some(p) = &u.having {
            set(self, Part::Having);
            self.push("HAVING", TokenKind::Keyword);
            self.predicate(p);
        }
        if let Some(o) = &u.order_by {
            set(self, Part::OrderBy);
            self.push("ORDER_BY", TokenKind::Keyword);
            self.term(&o.key);
            self.push(o.dir.keyword(), TokenKind::Keyword);
        }
        if let Some(n) = u.limit {
            set(self, Part::Limit);
            self.push("LIMIT", TokenKind::Keyword);
            self.push(n.to_string(), TokenKind::Value);
        }
    }

    /// Tables in order; each joined table carries the ON edges whose later
    /// endpoint it is.
    fn from(&mut self, f: &FromClause) {
        let pos = |t: &Option<String>| {
            t.as_ref()
                .and_then(|t| f.tables.iter().position(|x| x.eq_ignore_ascii_case(t)))
        };
        let owner = |e: &JoinEdge| -> usize {
            match (pos(&e.left.table), pos(&e.right.table)) {
                (Some(a), Some(b)) => a.max(b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => f.tables.len().saturating_sub(1),
            }
            .max(1)
        };
        for (i, t) in f.tables.iter().enumerate() {
            if i > 0 {
                self.push("JOIN", TokenKind::Keyword);
            }
            self.push(t.clone(), TokenKind::Table);
            if i == 0 {
                continue;
            }
            let edges: Vec<&JoinEdge> = f.joins.iter().filter(|e| owner(e) == i).collect();
            for (k, e) in edges.iter().enumerate() {
                self.push(if k == 0 { "ON" } else { "AND" }, TokenKind::Keyword);
                self.column(&e.left);
                self.push("=", TokenKind::Other);
                self.column(&e.right);
            }
        }
    }

    fn query_inner(&mut self, q: &Query) {
        match q {
            Query::Unit(u) => self.unit(u),
            Query::Compound { op, left, right } => {
                self.unit(left);
                if !self.nested {
                    self.part = Part::SetOp;
                }
                self.push(op.keyword(), TokenKind::Keyword);
                if !self.nested {
                    self.branch = 1;
                }
                self.unit(right);
            }
        }
    }
}

/// Canonical token stream of the query, tagged with branch and region.
pub fn sql_tokens(q: &Query) -> Vec<SqlToken> {
    let mut w = Writer {
        out: Vec::new(),
        branch: 0,
        part: Part::Select,
        nested: false,
    };
    w.query_inner(q);
    w.out
}

/// Joins tokens with single spaces, except inside function-call parentheses
/// and before commas.
pub fn render_tokens(tokens: &[SqlToken]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 && !t.glue_left && !tokens[i - 1].glue_right {
            s.push(' ');
        }
        s.push_str(t.display());
    }
    s
}

/// Canonical single-line SQL text.
pub fn serialize_sql(q: &Query) -> String {
    render_tokens(&sql_tokens(q))
}
