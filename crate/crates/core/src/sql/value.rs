use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A typed cell or literal value.
///
/// Numbers keep the integer/real distinction so that arithmetic follows the
/// usual SQL rules (integer division truncates).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn is_number(&self) -> bool {
        matches!(self, Value::Int(_) | Value::Real(_))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Total order used for sorting and min/max: NULL < numbers < text.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Null, _) => Ordering::Less,
            (_, Value::Null) => Ordering::Greater,
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (a, b) if a.is_number() && b.is_number() => {
                let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
                x.partial_cmp(&y).unwrap_or(Ordering::Equal)
            }
            (Value::Text(a), Value::Text(b)) => a.as_bytes().cmp(b.as_bytes()),
            (a, _) if a.is_number() => Ordering::Less,
            _ => Ordering::Greater,
        }
    }

    /// Key that is equal for values SQL considers equal (1 and 1.0 group together).
    pub fn group_key(&self) -> GroupKey {
        match self {
            Value::Null => GroupKey::Null,
            Value::Int(i) => GroupKey::Num((*i as f64).to_bits()),
            Value::Real(r) => {
                let r = if *r == 0.0 { 0.0 } else { *r };
                GroupKey::Num(r.to_bits())
            }
            Value::Text(s) => GroupKey::Text(s.clone()),
        }
    }

    /// Literal form used in SQL text.
    pub fn to_sql_literal(&self) -> String {
        match self {
            Value::Null => "NULL".to_string(),
            Value::Int(i) => i.to_string(),
            Value::Real(r) => format_real(*r),
            Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Real(a), Value::Real(b)) => a.to_bits() == b.to_bits() || a == b,
            (Value::Text(a), Value::Text(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupKey {
    Null,
    Num(u64),
    Text(String),
}

/// Real numbers always carry a fractional part or exponent so they re-parse as reals.
pub fn format_real(r: f64) -> String {
    let s = format!("{r:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

impl fmt::Display for Value {
    /// Plain rendering used in questions and TSV output (no quotes).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => f.write_str(&format_real(*r)),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_puts_null_first_and_text_last() {
        let mut v = vec![
            Value::Text("b".into()),
            Value::Int(3),
            Value::Null,
            Value::Real(1.5),
            Value::Text("a".into()),
        ];
        v.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(
            v,
            vec![
                Value::Null,
                Value::Real(1.5),
                Value::Int(3),
                Value::Text("a".into()),
                Value::Text("b".into()),
            ]
        );
    }

    #[test]
    fn int_and_real_share_group_key() {
        assert_eq!(Value::Int(1).group_key(), Value::Real(1.0).group_key());
        assert_ne!(Value::Int(1).group_key(), Value::Text("1".into()).group_key());
    }

    #[test]
    fn literal_rendering() {
        assert_eq!(Value::Real(10.0).to_sql_literal(), "10.0");
        assert_eq!(Value::Text("O'Neil".into()).to_sql_literal(), "'O''Neil'");
        assert_eq!(Value::Int(-4).to_sql_literal(), "-4");
    }
}
