use std::collections::{BTreeSet, VecDeque};

use super::{ForeignKey, Schema, SchemaError};
use crate::sql::{ColumnRef, JoinEdge};

/// Tables and FK edges connecting a requested table set.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinPath {
    /// Breadth-first order from the first requested table; includes any
    /// intermediate tables the path passes through.
    pub tables: Vec<String>,
    /// One edge per non-root table; `left` belongs to the earlier table.
    pub edges: Vec<JoinEdge>,
}

// Exhaustive search over intermediate sets stops here and falls back to a
// union of shortest paths.
const EXACT_SEARCH_LIMIT: usize = 200_000;

/// Finds a minimum-edge FK tree spanning `tables`.
///
/// Among trees of equal size the one whose intermediate tables come first by
/// name wins, and edges between the same pair of tables are picked by
/// (table name, column name).
pub fn join_path(schema: &Schema, tables: &[&str]) -> Result<JoinPath, SchemaError> {
    let mut terminals: Vec<usize> = Vec::new();
    for t in tables {
        let i = schema
            .table_index(t)
            .ok_or_else(|| SchemaError::UnknownTable(t.to_string()))?;
        if !terminals.contains(&i) {
            terminals.push(i);
        }
    }
    if terminals.is_empty() {
        return Ok(JoinPath {
            tables: vec![],
            edges: vec![],
        });
    }
    let graph = Graph::new(schema);
    let reach = graph.component(terminals[0], &|_| true);
    if terminals.iter().any(|t| !reach.contains(t)) {
        return Err(SchemaError::Disconnected(
            terminals.iter().map(|&i| schema.tables[i].name.clone()).collect(),
        ));
    }
    let mut others: Vec<usize> = reach.iter().copied().filter(|t| !terminals.contains(t)).collect();
    others.sort_by_key(|&i| schema.tables[i].name.to_lowercase());

    let is_connected = |extra: &[usize]| {
        let allowed = |t: usize| terminals.contains(&t) || extra.contains(&t);
        let seen = graph.component(terminals[0], &allowed);
        terminals.iter().all(|t| seen.contains(t))
    };

    let mut chosen: Option<Vec<usize>> = None;
    let mut budget = EXACT_SEARCH_LIMIT;
    'sizes: for k in 0..=others.len() {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            if budget == 0 {
                break 'sizes;
            }
            budget -= 1;
            let extra: Vec<usize> = idx.iter().map(|&i| others[i]).collect();
            if is_connected(&extra) {
                chosen = Some(extra);
                break 'sizes;
            }
            if !next_combination(&mut idx, others.len()) {
                break;
            }
        }
    }
    let extra = match chosen {
        Some(e) => e,
        None => {
            log::debug!("{}: join search budget exhausted, using shortest paths", schema.db_id);
            graph.shortest_path_union(&terminals)
        }
    };
    let allowed = |t: usize| terminals.contains(&t) || extra.contains(&t);
    Ok(graph.bfs_tree(schema, terminals[0], &allowed))
}

/// Advances `idx` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

struct Graph {
    /// Per table: neighbor table and the preferred edge, sorted by neighbor name.
    adj: Vec<Vec<(usize, ForeignKey)>>,
}

impl Graph {
    fn new(schema: &Schema) -> Self {
        let n = schema.tables.len();
        let mut adj: Vec<Vec<(usize, ForeignKey)>> = vec![vec![]; n];
        let key = |fk: &ForeignKey, from_side: usize| {
            // edge described from `from_side`'s point of view
            let (a, b) = if fk.from.table == from_side {
                (fk.from, fk.to)
            } else {
                (fk.to, fk.from)
            };
            (schema.col(a).name.to_lowercase(), schema.col(b).name.to_lowercase())
        };
        for fk in schema.join_edges() {
            for (u, v) in [(fk.from.table, fk.to.table), (fk.to.table, fk.from.table)] {
                match adj[u].iter_mut().find(|(w, _)| *w == v) {
                    Some(slot) => {
                        if key(fk, u) < key(&slot.1, u) {
                            slot.1 = *fk;
                        }
                    }
                    None => adj[u].push((v, *fk)),
                }
            }
        }
        for list in &mut adj {
            list.sort_by_key(|(v, _)| (schema.tables[*v].name.to_lowercase(), *v));
        }
        Graph { adj }
    }

    fn component(&self, start: usize, allowed: &dyn Fn(usize) -> bool) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adj[u] {
                if allowed(v) && seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    fn shortest_path(&self, from: usize, to: usize) -> Vec<usize> {
        let mut prev = vec![usize::MAX; self.adj.len()];
        prev[from] = from;
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            if u == to {
                break;
            }
            for &(v, _) in &self.adj[u] {
                if prev[v] == usize::MAX {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        let mut path = vec![to];
        let mut cur = to;
        while cur != from {
            cur = prev[cur];
            path.push(cur);
        }
        path
    }

    fn shortest_path_union(&self, terminals: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        for &t in &terminals[1..] {
            for v in self.shortest_path(terminals[0], t) {
                if !terminals.contains(&v) && !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    fn bfs_tree(&self, schema: &Schema, root: usize, allowed: &dyn Fn(usize) -> bool) -> JoinPath {
        let mut order = vec![root];
        let mut edges = Vec::new();
        let mut seen = BTreeSet::from([root]);
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(v, fk) in &self.adj[u] {
                if !allowed(v) || !seen.insert(v) {
                    continue;
                }
                let (near, far) = if fk.from.table == u {
                    (fk.from, fk.to)
                } else {
                    (fk.to, fk.from)
                };
                edges.push(JoinEdge {
                    left: ColumnRef::qualified(schema.tables[u].name.clone(), schema.col(near).name.clone()),
                    right: ColumnRef::qualified(schema.tables[v].name.clone(), schema.col(far).name.clone()),
                });
                order.push(v);
                queue.push_back(v);
            }
        }
        JoinPath {
            tables: order.iter().map(|&i| schema.tables[i].name.clone()).collect(),
            edges,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ColumnType::*;

    fn cars() -> Schema {
        Schema::new("car")
            .with_table("car_makers", &[("Id", Number), ("Maker", Text)], true)
            .with_table(
                "model_list",
                &[("ModelId", Number), ("Maker", Number), ("Model", Text)],
                true,
            )
            .with_table("car_names", &[("MakeId", Number), ("Model", Text)], true)
            .with_table("cars_data", &[("Id", Number), ("Horsepower", Number)], true)
            .with_table("orphan", &[("x", Number)], false)
            .with_foreign_key(("model_list", "Maker"), ("car_makers", "Id"))
            .with_foreign_key(("car_names", "Model"), ("model_list", "Model"))
            .with_foreign_key(("cars_data", "Id"), ("car_names", "MakeId"))
    }

    #[test]
    fn chain_passes_through_intermediates() {
        let s = cars();
        let p = join_path(&s, &["car_makers", "cars_data"]).unwrap();
        assert_eq!(p.tables, ["car_makers", "model_list", "car_names", "cars_data"]);
        assert_eq!(p.edges.len(), 3);
        assert_eq!(p.edges[0].left.to_string(), "car_makers.Id");
        assert_eq!(p.edges[0].right.to_string(), "model_list.Maker");
    }

    #[test]
    fn single_table_has_no_edges() {
        let p = join_path(&cars(), &["cars_data"]).unwrap();
        assert_eq!(p.tables, ["cars_data"]);
        assert!(p.edges.is_empty());
    }

    #[test]
    fn disconnected_tables() {
        assert!(matches!(
            join_path(&cars(), &["orphan", "cars_data"]),
            Err(SchemaError::Disconnected(_))
        ));
        assert!(matches!(
            join_path(&cars(), &["nope"]),
            Err(SchemaError::UnknownTable(_))
        ));
    }

    #[test]
    fn prefers_fewest_edges() {
        // a - b - c and a - d - e - c: the path via b wins
        let s = Schema::new("g")
            .with_table("a", &[("id", Number), ("b", Number), ("d", Number)], true)
            .with_table("b", &[("id", Number), ("c", Number)], true)
            .with_table("c", &[("id", Number)], true)
            .with_table("d", &[("id", Number), ("e", Number)], true)
            .with_table("e", &[("id", Number), ("c", Number)], true)
            .with_foreign_key(("a", "b"), ("b", "id"))
            .with_foreign_key(("b", "c"), ("c", "id"))
            .with_foreign_key(("a", "d"), ("d", "id"))
            .with_foreign_key(("d", "e"), ("e", "id"))
            .with_foreign_key(("e", "c"), ("c", "id"));
        let p = join_path(&s, &["a", "c"]).unwrap();
        assert_eq!(p.tables, ["a", "b", "c"]);
    }

    #[test]
    fn combinations_are_lexicographic() {
        let mut idx = vec![0, 1];
        let mut all = vec![idx.clone()];
        while next_combination(&mut idx, 4) {
            all.push(idx.clone());
        }
        assert_eq!(all, [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]);
    }
}
