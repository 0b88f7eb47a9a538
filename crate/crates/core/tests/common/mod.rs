#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use sqlaug::align::{load_labeled, LabeledExample};
use sqlaug::schema::{load_content_dir, load_schema, DatabaseContent, Schema};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn schemas() -> Vec<Arc<Schema>> {
    load_schema(fixtures().join("tables.json"))
        .unwrap()
        .into_iter()
        .map(Arc::new)
        .collect()
}

pub fn schema_map() -> BTreeMap<String, Arc<Schema>> {
    schemas().into_iter().map(|s| (s.db_id.clone(), s)).collect()
}

pub fn contents() -> HashMap<String, DatabaseContent> {
    load_content_dir(fixtures().join("content"), &schemas()).unwrap()
}

pub fn train() -> Vec<LabeledExample> {
    load_labeled(fixtures().join("train.jsonl")).unwrap()
}

use sqlaug::hier::{ClauseKind, Generated};

/// (sql, expected clause kinds in source order)
pub const DECOMPOSITION_CASES: [(&str, &[ClauseKind]); 6] = {
    use ClauseKind::*;
    [
        (
            "SELECT name FROM head WHERE born_state != 'California'",
            &[Select, Where],
        ),
        (
            "SELECT name FROM Wine WHERE Price > (SELECT max(Price) FROM Wine)",
            &[Select, WhereNestedSelect],
        ),
        (
            "SELECT c, count(*) FROM t GROUP BY c HAVING count(*) > 3 ORDER BY count(*) DESC LIMIT 5",
            &[Select, GroupByHaving, OrderByLimit],
        ),
        (
            "SELECT name FROM singer ORDER BY age DESC LIMIT 1",
            &[Select, OrderByLimit],
        ),
        (
            "SELECT country, count(*) FROM singer GROUP BY country",
            &[SelectGroupBy],
        ),
        (
            "SELECT name FROM singer WHERE age > 30 INTERSECT SELECT name FROM singer WHERE country = 'France'",
            &[Select, Where, SetOp, Select, Where],
        ),
    ]
};

fn rank(k: ClauseKind) -> usize {
    use ClauseKind::*;
    match k {
        Where | WhereNestedSelect => 0,
        GroupByHaving => 1,
        Select | SelectGroupBy => 2,
        OrderBy | OrderByLimit | OrderByGroupBy => 3,
        SetOp => 4,
    }
}

/// Fragments appear left to right in WHERE, GROUP BY + HAVING, SELECT,
/// ORDER BY rank within each side of a set operation, and a nested query's
/// phrase sits inside its WHERE fragment.
pub fn check_composition_order(g: &Generated) -> Result<(), String> {
    let frags = &g.composition.fragments;
    let text = &g.question;
    let mut last_end = 0;
    let mut last_rank: Option<usize> = None;
    let mut side = 0;
    for (i, r) in frags {
        if r.start < last_end {
            return Err(format!("fragments overlap in `{text}`"));
        }
        last_end = r.end;
        let sub = &g.subquestions[*i];
        let piece = text[r.clone()].to_lowercase();
        if !sub.text.to_lowercase().ends_with(&piece) {
            return Err(format!("fragment `{piece}` is not from `{}`", sub.text));
        }
        let c = &g.clauses[*i];
        if c.kind == ClauseKind::SetOp {
            side += 1;
            last_rank = None;
            continue;
        }
        if c.branch != side {
            return Err(format!("clause of side {} inside side {side}", c.branch));
        }
        let k = rank(c.kind);
        if last_rank.is_some_and(|p| p > k) {
            return Err(format!("{} after a later-phase fragment in `{text}`", c.kind));
        }
        last_rank = Some(k);
        for inner in &sub.embedded {
            if !piece.contains(&inner.to_lowercase()) {
                return Err(format!("inner phrase `{inner}` missing from `{piece}`"));
            }
        }
    }
    Ok(())
}

use rusqlite::types::ValueRef;
use sqlaug::eval::execute;
use sqlaug::generator::{fill_pattern, FillConfig};
use sqlaug::grammar::{default_grammar, enumerate_sketches, ComplexityLevel};
use sqlaug::sql::{parse_sql, serialize_sql, Query, Value};

/// The content loaded into an in-memory SQLite database.
pub fn sqlite_of(content: &DatabaseContent) -> rusqlite::Connection {
    let conn = rusqlite::Connection::open_in_memory().unwrap();
    for (ti, t) in content.schema.tables.iter().enumerate() {
        // untyped columns keep every value's storage class as loaded
        let cols: Vec<String> = t.columns.iter().map(|c| format!("\"{}\"", c.name)).collect();
        conn.execute(&format!("CREATE TABLE \"{}\" ({})", t.name, cols.join(", ")), [])
            .unwrap();
        let marks = vec!["?"; t.columns.len()].join(", ");
        let mut stmt = conn
            .prepare(&format!("INSERT INTO \"{}\" VALUES ({marks})", t.name))
            .unwrap();
        for row in content.rows(ti) {
            let params: Vec<rusqlite::types::Value> = row
                .iter()
                .map(|v| match v {
                    Value::Null => rusqlite::types::Value::Null,
                    Value::Int(i) => rusqlite::types::Value::Integer(*i),
                    Value::Real(r) => rusqlite::types::Value::Real(*r),
                    Value::Text(s) => rusqlite::types::Value::Text(s.clone()),
                })
                .collect();
            stmt.execute(rusqlite::params_from_iter(params)).unwrap();
        }
    }
    conn
}

pub fn sqlite_rows(conn: &rusqlite::Connection, sql: &str) -> Result<Vec<Vec<Value>>, String> {
    let mut stmt = conn.prepare(sql).map_err(|e| e.to_string())?;
    let n = stmt.column_count();
    let rows = stmt
        .query_map([], |r| {
            (0..n)
                .map(|i| {
                    Ok(match r.get_ref(i)? {
                        ValueRef::Null => Value::Null,
                        ValueRef::Integer(i) => Value::Int(i),
                        ValueRef::Real(f) => Value::Real(f),
                        ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
                        ValueRef::Blob(_) => Value::Text("<blob>".into()),
                    })
                })
                .collect()
        })
        .map_err(|e| e.to_string())?;
    rows.collect::<Result<_, _>>().map_err(|e| e.to_string())
}

fn same_value(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0),
        _ => a == b,
    }
}

fn sorted(mut rows: Vec<Vec<Value>>) -> Vec<Vec<Value>> {
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows
}

fn same_multiset(a: Vec<Vec<Value>>, b: Vec<Vec<Value>>) -> bool {
    a.len() == b.len()
        && sorted(a)
            .iter()
            .zip(&sorted(b))
            .all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(u, v)| same_value(u, v)))
}

fn sub_multiset(small: &[Vec<Value>], big: &[Vec<Value>]) -> bool {
    let mut used = vec![false; big.len()];
    small.iter().all(|r| {
        let hit = big
            .iter()
            .enumerate()
            .position(|(i, b)| !used[i] && b.len() == r.len() && b.iter().zip(r).all(|(u, v)| same_value(u, v)));
        hit.map(|i| used[i] = true).is_some()
    })
}

/// None when the evaluator and SQLite agree on the result multiset. With
/// ORDER BY ... LIMIT, tied rows may be cut differently; the query is then
/// compared without LIMIT and each limited result must come from it.
pub fn oracle_mismatch(q: &Query, content: &DatabaseContent, conn: &rusqlite::Connection) -> Option<String> {
    let sql = serialize_sql(q);
    let ours = match execute(q, content) {
        Ok(t) => t.rows,
        Err(e) => return Some(format!("evaluator failed on `{sql}`: {e}")),
    };
    let theirs = match sqlite_rows(conn, &sql) {
        Ok(r) => r,
        Err(e) => return Some(format!("sqlite failed on `{sql}`: {e}")),
    };
    if same_multiset(ours.clone(), theirs.clone()) {
        return None;
    }
    if let Some(cut) = sql.rfind(" LIMIT ") {
        let full = &sql[..cut];
        let ours_full = execute(&parse_sql(full, Some(&content.schema)).unwrap(), content)
            .map(|t| t.rows)
            .unwrap_or_default();
        let theirs_full = sqlite_rows(conn, full).unwrap_or_default();
        if ours.len() == theirs.len()
            && same_multiset(ours_full, theirs_full.clone())
            && sub_multiset(&ours, &theirs_full)
            && sub_multiset(&theirs, &theirs_full)
        {
            return None;
        }
    }
    Some(format!(
        "`{sql}` on {}: ours {ours:?}, sqlite {theirs:?}",
        content.db_id()
    ))
}

/// Distinct executable queries filled from every sketch up to depth 4 and
/// breadth 4, cycling through the fixture databases. Returns (query, db index).
pub fn generated_queries(dbs: &[DatabaseContent], n: usize, seed: u64) -> Vec<(Query, usize)> {
    let patterns: Vec<_> = enumerate_sketches(&default_grammar(), ComplexityLevel::new(4, 4))
        .unwrap()
        .iter()
        .map(|t| t.flatten())
        .collect();
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut i = 0u64;
    while out.len() < n && i < 50 * n as u64 {
        let d = (i as usize) % dbs.len();
        let p = &patterns[(i.wrapping_mul(7919).wrapping_add(seed) as usize) % patterns.len()];
        let cfg = FillConfig {
            rng_seed: seed ^ i,
            max_fills: 1,
            ..FillConfig::default()
        };
        i += 1;
        let Ok(qs) = fill_pattern(p, &dbs[d], &cfg) else {
            continue;
        };
        for q in qs {
            if execute(&q, &dbs[d]).is_ok() && seen.insert((d, serialize_sql(&q))) {
                out.push((q, d));
            }
        }
    }
    out
}
