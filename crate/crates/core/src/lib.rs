//! Data augmentation for text-to-SQL: SQL generation from an abstract syntax
//! tree grammar, hierarchical SQL-to-question translation, and clause-level
//! alignment corpora.

pub mod align;
pub mod eval;
pub mod generator;
pub mod grammar;
pub mod hier;
pub mod pipeline;
pub mod schema;
pub mod sql;
