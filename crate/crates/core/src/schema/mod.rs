//! Relational schemas, table contents, and foreign-key join paths.

mod content;
mod join;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

pub use content::{load_content, load_content_dir, DatabaseContent};
pub use join::{join_path, JoinPath};

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("format error: {0}")]
    Format(String),
    #[error("{db_id}: foreign key {index} references a missing column")]
    DanglingForeignKey { db_id: String, index: usize },
    #[error("{db_id}: duplicate name `{name}`")]
    DuplicateName { db_id: String, name: String },
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("tables {0:?} are not connected by foreign keys")]
    Disconnected(Vec<String>),
    #[error("table `{table}` row {row}: expected {expected} cells, found {found}")]
    ArityMismatch {
        table: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("table `{table}` row {row}: value {value} does not fit column `{column}`")]
    TypeMismatch {
        table: String,
        row: usize,
        column: String,
        value: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnType {
    Text,
    Number,
    Time,
    Boolean,
}

impl ColumnType {
    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "others" => Some(ColumnType::Text),
            "number" => Some(ColumnType::Number),
            "time" => Some(ColumnType::Time),
            "boolean" => Some(ColumnType::Boolean),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Text => "text",
            ColumnType::Number => "number",
            ColumnType::Time => "time",
            ColumnType::Boolean => "boolean",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub natural_name: String,
    pub kind: ColumnType,
    pub primary_key: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub natural_name: String,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnId {
    pub table: usize,
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ForeignKey {
    pub from: ColumnId,
    pub to: ColumnId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub db_id: String,
    pub tables: Vec<Table>,
    pub foreign_keys: Vec<ForeignKey>,
}

/// Natural-language form of an identifier: underscores to spaces, lowercased.
pub fn naturalize(ident: &str) -> String {
    ident.replace('_', " ").to_lowercase()
}

impl Schema {
    pub fn new(db_id: impl Into<String>) -> Self {
        Schema {
            db_id: db_id.into(),
            tables: vec![],
            foreign_keys: vec![],
        }
    }

    /// Adds a table whose columns are `(name, type)`; the first column is the
    /// primary key when `pk_first` is set.
    pub fn with_table(mut self, name: &str, columns: &[(&str, ColumnType)], pk_first: bool) -> Self {
        self.tables.push(Table {
            name: name.to_string(),
            natural_name: naturalize(name),
            columns: columns
                .iter()
                .enumerate()
                .map(|(i, (c, k))| Column {
                    name: c.to_string(),
                    natural_name: naturalize(c),
                    kind: *k,
                    primary_key: pk_first && i == 0,
                })
                .collect(),
        });
        self
    }

    /// Adds a foreign key `from_table.from_col -> to_table.to_col`.
    pub fn with_foreign_key(mut self, from: (&str, &str), to: (&str, &str)) -> Self {
        let f = self.column_id(from.0, from.1).expect("fk source exists");
        let t = self.column_id(to.0, to.1).expect("fk target exists");
        self.foreign_keys.push(ForeignKey { from: f, to: t });
        self
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.table_index(name).map(|i| &self.tables[i])
    }

    pub fn column_id(&self, table: &str, column: &str) -> Option<ColumnId> {
        let t = self.table_index(table)?;
        let c = self.tables[t].column_index(column)?;
        Some(ColumnId { table: t, column: c })
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&Column> {
        self.column_id(table, column).map(|id| self.col(id))
    }

    pub fn col(&self, id: ColumnId) -> &Column {
        &self.tables[id.table].columns[id.column]
    }

    /// Finds the table owning an unqualified column among `tables`.
    pub fn owner_of(&self, column: &str, tables: &[String]) -> Option<ColumnId> {
        tables.iter().find_map(|t| self.column_id(t, column))
    }

    /// Foreign keys joining two distinct tables.
    pub fn join_edges(&self) -> impl Iterator<Item = &ForeignKey> {
        self.foreign_keys.iter().filter(|fk| fk.from.table != fk.to.table)
    }

    fn validate(&self) -> Result<(), SchemaError> {
        let mut seen = HashSet::new();
        for t in &self.tables {
            if !seen.insert(t.name.to_lowercase()) {
                return Err(SchemaError::DuplicateName {
                    db_id: self.db_id.clone(),
                    name: t.name.clone(),
                });
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.to_lowercase()) {
                    return Err(SchemaError::DuplicateName {
                        db_id: self.db_id.clone(),
                        name: format!("{}.{}", t.name, c.name),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PrimaryKeyEntry {
    Single(usize),
    Composite(Vec<usize>),
}

/// Spider `tables.json` record.
#[derive(Deserialize)]
struct RawSchema {
    db_id: String,
    table_names: Vec<String>,
    #[serde(default)]
    table_names_original: Option<Vec<String>>,
    column_names: Vec<(i64, String)>,
    #[serde(default)]
    column_names_original: Option<Vec<(i64, String)>>,
    column_types: Vec<String>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
    #[serde(default)]
    primary_keys: Vec<PrimaryKeyEntry>,
}

impl RawSchema {
    fn build(self) -> Result<Schema, SchemaError> {
        let fmt = |m: String| SchemaError::Format(format!("{}: {m}", self.db_id));
        let table_idents = self
            .table_names_original
            .clone()
            .unwrap_or_else(|| self.table_names.clone());
        if table_idents.len() != self.table_names.len() {
            return Err(fmt("table_names and table_names_original differ in length".into()));
        }
        let col_idents = self
            .column_names_original
            .clone()
            .unwrap_or_else(|| self.column_names.clone());
        if col_idents.len() != self.column_names.len() || self.column_types.len() != self.column_names.len() {
            return Err(fmt(
                "column_names, column_names_original and column_types differ in length".into(),
            ));
        }
        let has_natural_tables = self.table_names_original.is_some();
        let has_natural_cols = self.column_names_original.is_some();
        let mut tables: Vec<Table> = table_idents
            .iter()
            .zip(&self.table_names)
            .map(|(ident, nat)| Table {
                name: ident.clone(),
                natural_name: if has_natural_tables {
                    nat.to_lowercase()
                } else {
                    naturalize(ident)
                },
                columns: vec![],
            })
            .collect();
        // global column index -> ColumnId
        let mut ids: Vec<Option<ColumnId>> = Vec::with_capacity(col_idents.len());
        for (i, ((tidx, ident), (_, nat))) in col_idents.iter().zip(&self.column_names).enumerate() {
            if *tidx < 0 {
                ids.push(None);
                continue;
            }
            let t = *tidx as usize;
            let table = tables
                .get_mut(t)
                .ok_or_else(|| fmt(format!("column {i} references table {t}")))?;
            let kind = ColumnType::parse(&self.column_types[i])
                .ok_or_else(|| fmt(format!("unknown column type `{}`", self.column_types[i])))?;
            ids.push(Some(ColumnId {
                table: t,
                column: table.columns.len(),
            }));
            table.columns.push(Column {
                name: ident.clone(),
                natural_name: if has_natural_cols {
                    nat.to_lowercase()
                } else {
                    naturalize(ident)
                },
                kind,
                primary_key: false,
            });
        }
        let lookup = |i: usize| ids.get(i).copied().flatten();
        let mut foreign_keys = Vec::new();
        for (n, (a, b)) in self.foreign_keys.iter().enumerate() {
            match (lookup(*a), lookup(*b)) {
                (Some(from), Some(to)) => foreign_keys.push(ForeignKey { from, to }),
                _ => {
                    return Err(SchemaError::DanglingForeignKey {
                        db_id: self.db_id.clone(),
                        index: n,
                    })
                }
            }
        }
        for pk in &self.primary_keys {
            let cols = match pk {
                PrimaryKeyEntry::Single(c) => vec![*c],
                PrimaryKeyEntry::Composite(cs) => cs.clone(),
            };
            for c in cols {
                let id = lookup(c).ok_or_else(|| fmt(format!("primary key {c} is not a column")))?;
                tables[id.table].columns[id.column].primary_key = true;
            }
        }
        let schema = Schema {
            db_id: self.db_id,
            tables,
            foreign_keys,
        };
        schema.validate()?;
        Ok(schema)
    }
}

/// Parses a Spider-style `tables.json` document (an array of schemas, or a
/// single schema object).
pub fn parse_schemas(text: &str) -> Result<Vec<Schema>, SchemaError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| SchemaError::Format(e.to_string()))?;
    let raws: Vec<RawSchema> = match value {
        serde_json::Value::Array(_) => serde_json::from_value(value),
        other => serde_json::from_value(other).map(|r| vec![r]),
    }
    .map_err(|e| SchemaError::Format(e.to_string()))?;
    let schemas = raws.into_iter().map(RawSchema::build).collect::<Result<Vec<_>, _>>()?;
    let mut ids = HashSet::new();
    for s in &schemas {
        if !ids.insert(s.db_id.clone()) {
            return Err(SchemaError::DuplicateName {
                db_id: s.db_id.clone(),
                name: s.db_id.clone(),
            });
        }
    }
    Ok(schemas)
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<Vec<Schema>, SchemaError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_schemas(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MATCHES: &str = r#"[{
        "db_id": "wta_1",
        "table_names": ["matches"],
        "table_names_original": ["matches"],
        "column_names": [[-1, "*"], [0, "draw size"], [0, "loser age"], [0, "loser name"]],
        "column_names_original": [[-1, "*"], [0, "draw_size"], [0, "loser_age"], [0, "loser_name"]],
        "column_types": ["text", "number", "number", "text"],
        "foreign_keys": [],
        "primary_keys": []
    }]"#;

    #[test]
    fn loads_spider_layout() {
        let s = parse_schemas(MATCHES).unwrap();
        assert_eq!(s.len(), 1);
        let t = s[0].table("MATCHES").unwrap();
        assert_eq!(t.columns.len(), 3);
        assert_eq!(t.columns[1].name, "loser_age");
        assert_eq!(t.columns[1].natural_name, "loser age");
        assert_eq!(t.columns[1].kind, ColumnType::Number);
        assert_eq!(t.columns[2].kind, ColumnType::Text);
    }

    #[test]
    fn dangling_foreign_key() {
        let text = MATCHES.replace(r#""foreign_keys": []"#, r#""foreign_keys": [[1, 9]]"#);
        assert!(matches!(
            parse_schemas(&text),
            Err(SchemaError::DanglingForeignKey { index: 0, .. })
        ));
    }

    #[test]
    fn duplicate_column_name() {
        let text = MATCHES.replace(r#"[0, "loser_name"]"#, r#"[0, "LOSER_AGE"]"#);
        assert!(matches!(parse_schemas(&text), Err(SchemaError::DuplicateName { .. })));
    }

    #[test]
    fn empty_table_list_is_valid() {
        let text = r#"{"db_id": "empty", "table_names": [], "column_names": [[-1, "*"]],
            "column_types": ["text"], "foreign_keys": [], "primary_keys": []}"#;
        let s = parse_schemas(text).unwrap();
        assert!(s[0].tables.is_empty());
    }

    #[test]
    fn natural_names_derive_from_identifiers_without_originals() {
        let text = r#"{"db_id": "x", "table_names": ["cars_data"], "column_names": [[-1, "*"], [0, "Horse_Power"]],
            "column_types": ["text", "number"], "primary_keys": [[1]]}"#;
        let s = parse_schemas(text).unwrap();
        assert_eq!(s[0].tables[0].natural_name, "cars data");
        assert_eq!(s[0].tables[0].columns[0].natural_name, "horse power");
        assert!(s[0].tables[0].columns[0].primary_key);
    }
}
