use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::{ColumnId, ColumnType, Schema, SchemaError};
use crate::sql::Value;

/// Rows of every table in one database, with a per-column index of distinct
/// non-null values in first-seen order.
#[derive(Debug, Clone)]
pub struct DatabaseContent {
    pub schema: Arc<Schema>,
    rows: Vec<Vec<Vec<Value>>>,
    distinct: Vec<Vec<Vec<Value>>>,
}

impl DatabaseContent {
    pub fn empty(schema: Arc<Schema>) -> Self {
        let n = schema.tables.len();
        let distinct = schema.tables.iter().map(|t| vec![vec![]; t.columns.len()]).collect();
        DatabaseContent {
            schema,
            rows: vec![vec![]; n],
            distinct,
        }
    }

    /// Builds content from already-typed rows, keyed by table name.
    pub fn from_rows(
        schema: Arc<Schema>,
        tables: impl IntoIterator<Item = (String, Vec<Vec<Value>>)>,
    ) -> Result<Self, SchemaError> {
        let mut c = DatabaseContent::empty(schema);
        for (name, rows) in tables {
            let t = c
                .schema
                .table_index(&name)
                .ok_or_else(|| SchemaError::UnknownTable(name.clone()))?;
            let width = c.schema.tables[t].columns.len();
            for (r, row) in rows.iter().enumerate() {
                if row.len() != width {
                    return Err(SchemaError::ArityMismatch {
                        table: name.clone(),
                        row: r,
                        expected: width,
                        found: row.len(),
                    });
                }
            }
            c.rows[t] = rows;
        }
        c.reindex();
        Ok(c)
    }

    fn reindex(&mut self) {
        for (t, rows) in self.rows.iter().enumerate() {
            for (ci, slot) in self.distinct[t].iter_mut().enumerate() {
                let mut seen = HashSet::new();
                slot.clear();
                for row in rows {
                    let v = &row[ci];
                    if !v.is_null() && seen.insert(v.group_key()) {
                        slot.push(v.clone());
                    }
                }
            }
        }
    }

    pub fn db_id(&self) -> &str {
        &self.schema.db_id
    }

    pub fn rows(&self, table: usize) -> &[Vec<Value>] {
        &self.rows[table]
    }

    pub fn table_rows(&self, name: &str) -> Option<&[Vec<Value>]> {
        self.schema.table_index(name).map(|t| self.rows(t))
    }

    pub fn distinct_values(&self, id: ColumnId) -> &[Value] {
        &self.distinct[id.table][id.column]
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|r| r.is_empty())
    }
}

fn coerce_json(v: &serde_json::Value, kind: ColumnType) -> Option<Value> {
    use serde_json::Value as J;
    Some(match (v, kind) {
        (J::Null, _) => Value::Null,
        (J::String(s), _) => return coerce_text(s, kind),
        (J::Number(n), ColumnType::Text | ColumnType::Time) => Value::Text(n.to_string()),
        (J::Number(n), ColumnType::Number) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Real(n.as_f64()?),
        },
        (J::Number(n), ColumnType::Boolean) => match n.as_i64() {
            Some(b @ (0 | 1)) => Value::Int(b),
            _ => return None,
        },
        (J::Bool(b), ColumnType::Boolean | ColumnType::Number) => Value::Int(*b as i64),
        (J::Bool(b), _) => Value::Text(b.to_string()),
        _ => return None,
    })
}

fn coerce_text(s: &str, kind: ColumnType) -> Option<Value> {
    Some(match kind {
        ColumnType::Text | ColumnType::Time => Value::Text(s.to_string()),
        ColumnType::Number => {
            let t = s.trim();
            if t.is_empty() {
                Value::Null
            } else if let Ok(i) = t.parse::<i64>() {
                Value::Int(i)
            } else {
                Value::Real(t.parse::<f64>().ok().filter(|f| f.is_finite())?)
            }
        }
        ColumnType::Boolean => match s.trim().to_ascii_lowercase().as_str() {
            "" => Value::Null,
            "1" | "t" | "true" | "y" | "yes" => Value::Int(1),
            "0" | "f" | "false" | "n" | "no" => Value::Int(0),
            _ => return None,
        },
    })
}

fn mismatch(table: &str, row: usize, column: &str, value: impl ToString) -> SchemaError {
    SchemaError::TypeMismatch {
        table: table.to_string(),
        row,
        column: column.to_string(),
        value: value.to_string(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SchemaError + '_ {
    move |source| SchemaError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_json(path: &Path, schema: Arc<Schema>) -> Result<DatabaseContent, SchemaError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let raw: BTreeMap<String, Vec<Vec<serde_json::Value>>> =
        serde_json::from_str(&text).map_err(|e| SchemaError::Format(format!("{}: {e}", path.display())))?;
    let mut tables = Vec::new();
    for (name, rows) in raw {
        let table = schema
            .table(&name)
            .ok_or_else(|| SchemaError::UnknownTable(name.clone()))?;
        let mut typed = Vec::with_capacity(rows.len());
        for (r, row) in rows.iter().enumerate() {
            if row.len() != table.columns.len() {
                return Err(SchemaError::ArityMismatch {
                    table: name.clone(),
                    row: r,
                    expected: table.columns.len(),
                    found: row.len(),
                });
            }
            let vals = row
                .iter()
                .zip(&table.columns)
                .map(|(v, col)| coerce_json(v, col.kind).ok_or_else(|| mismatch(&name, r, &col.name, v)))
                .collect::<Result<Vec<_>, _>>()?;
            typed.push(vals);
        }
        tables.push((name, typed));
    }
    DatabaseContent::from_rows(schema, tables)
}

fn load_csv_dir(dir: &Path, schema: Arc<Schema>) -> Result<DatabaseContent, SchemaError> {
    let mut tables = Vec::new();
    for table in &schema.tables {
        let path = dir.join(format!("{}.csv", table.name));
        if !path.exists() {
            continue;
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(&path)
            .map_err(|e| SchemaError::Format(format!("{}: {e}", path.display())))?;
        let mut typed = Vec::new();
        for (r, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| SchemaError::Format(format!("{}: {e}", path.display())))?;
            if rec.len() != table.columns.len() {
                return Err(SchemaError::ArityMismatch {
                    table: table.name.clone(),
                    row: r,
                    expected: table.columns.len(),
                    found: rec.len(),
                });
            }
            let vals = rec
                .iter()
                .zip(&table.columns)
                .map(|(cell, col)| {
                    if cell.is_empty() {
                        Ok(Value::Null)
                    } else {
                        coerce_text(cell, col.kind).ok_or_else(|| mismatch(&table.name, r, &col.name, cell))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            typed.push(vals);
        }
        tables.push((table.name.clone(), typed));
    }
    DatabaseContent::from_rows(schema, tables)
}

/// Loads one database's rows from a JSON file (`{"table": [[cell, ...]]}`)
/// or a directory holding one headed CSV file per table.
pub fn load_content(path: impl AsRef<Path>, schema: Arc<Schema>) -> Result<DatabaseContent, SchemaError> {
    let path = path.as_ref();
    if path.is_dir() {
        load_csv_dir(path, schema)
    } else {
        load_json(path, schema)
    }
}

/// Loads content for every schema from `dir`, looking for `<db_id>.json` or
/// a `<db_id>/` CSV directory. Databases without content load empty.
pub fn load_content_dir(
    dir: impl AsRef<Path>,
    schemas: &[Arc<Schema>],
) -> Result<HashMap<String, DatabaseContent>, SchemaError> {
    let dir = dir.as_ref();
    let mut out = HashMap::new();
    for s in schemas {
        let json = dir.join(format!("{}.json", s.db_id));
        let csv_dir = dir.join(&s.db_id);
        let content = if json.is_file() {
            load_content(&json, s.clone())?
        } else if csv_dir.is_dir() {
            load_content(&csv_dir, s.clone())?
        } else {
            log::warn!("no content for database {}", s.db_id);
            DatabaseContent::empty(s.clone())
        };
        out.insert(s.db_id.clone(), content);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ColumnType::*;

    fn schema() -> Arc<Schema> {
        Arc::new(Schema::new("wta").with_table(
            "matches",
            &[
                ("draw_size", Number),
                ("loser_name", Text),
                ("tourney_date", Time),
                ("won", Boolean),
            ],
            false,
        ))
    }

    #[test]
    fn json_rows_are_coerced() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("wta.json");
        fs::write(
            &p,
            r#"{"matches": [[32, "Ann", 20160101, true], ["64", "Bea", "2016-02-01", "f"], [32, null, null, 1]]}"#,
        )
        .unwrap();
        let c = load_content(&p, schema()).unwrap();
        let rows = c.table_rows("matches").unwrap();
        assert_eq!(
            rows[0],
            vec![
                Value::Int(32),
                Value::Text("Ann".into()),
                Value::Text("20160101".into()),
                Value::Int(1)
            ]
        );
        assert_eq!(rows[1][0], Value::Int(64));
        assert_eq!(rows[1][3], Value::Int(0));
        let draw = c.distinct_values(ColumnId { table: 0, column: 0 });
        assert_eq!(draw, [Value::Int(32), Value::Int(64)]);
        assert_eq!(c.distinct_values(ColumnId { table: 0, column: 1 }).len(), 2);
    }

    #[test]
    fn arity_and_type_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("wta.json");
        fs::write(&p, r#"{"matches": [[32, "Ann"]]}"#).unwrap();
        assert!(matches!(
            load_content(&p, schema()),
            Err(SchemaError::ArityMismatch { .. })
        ));
        fs::write(&p, r#"{"matches": [["big", "Ann", null, 1]]}"#).unwrap();
        assert!(matches!(
            load_content(&p, schema()),
            Err(SchemaError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn csv_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("matches.csv"),
            "draw_size,loser_name,tourney_date,won\n32,Ann,2016,yes\n,Bea,,no\n",
        )
        .unwrap();
        let c = load_content(dir.path(), schema()).unwrap();
        let rows = c.table_rows("matches").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1][0], Value::Null);
        assert_eq!(rows[0][3], Value::Int(1));
    }
}
