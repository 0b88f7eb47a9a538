//! SQL subset: AST, parser, canonical renderer and pattern extraction.

mod ast;
mod lexer;
mod parser;
mod pattern;
mod render;
mod value;

pub use ast::*;
pub use parser::{parse_sql, ParseError};
pub use pattern::{
    extract_pattern, parse_pattern, CondShape, Conjunction, Pattern, PatternError, PatternToken, PredShape, QueryShape,
    RhsShape, TermShape, UnitShape, PATTERN_ALPHABET_VERSION,
};
pub use render::{render_tokens, serialize_sql, sql_tokens, Part, SqlToken, TokenKind};
pub use value::{format_real, GroupKey, Value};
