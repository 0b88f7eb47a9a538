use super::parser::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    /// Bare word: keyword or identifier.
    Word(String),
    /// Backtick- or bracket-quoted identifier.
    QuotedIdent(String),
    /// Double-quoted text; an identifier or a string depending on position.
    DoubleQuoted(String),
    Str(String),
    Num(String),
    Sym(&'static str),
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Word(w) => w.clone(),
            Tok::QuotedIdent(w) => format!("`{w}`"),
            Tok::DoubleQuoted(w) => format!("\"{w}\""),
            Tok::Str(s) => format!("'{s}'"),
            Tok::Num(n) => n.clone(),
            Tok::Sym(s) => s.to_string(),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Lexeme {
    pub tok: Tok,
    pub pos: usize,
}

const SYMBOLS: [&str; 16] = [
    "!=", "<>", "<=", ">=", "=", "<", ">", "(", ")", ",", ".", "*", "+", "-", "/", ";",
];

pub(crate) fn lex(text: &str) -> Result<Vec<Lexeme>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] >= 0x80) {
                i += 1;
            }
            out.push(Lexeme {
                tok: Tok::Word(text[start..i].to_string()),
                pos: start,
            });
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            out.push(Lexeme {
                tok: Tok::Num(text[start..i].to_string()),
                pos: start,
            });
        } else if c == b'\'' || c == b'"' || c == b'`' || c == b'[' {
            let close = match c {
                b'[' => b']',
                other => other,
            };
            i += 1;
            let mut buf = String::new();
            loop {
                if i >= bytes.len() {
                    return Err(ParseError::Syntax {
                        position: start,
                        expected: vec![format!("closing {}", close as char)],
                        found: "end of input".into(),
                    });
                }
                if bytes[i] == close {
                    // doubled quote escapes itself
                    if close != b']' && i + 1 < bytes.len() && bytes[i + 1] == close {
                        buf.push(close as char);
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                let ch = text[i..].chars().next().unwrap();
                buf.push(ch);
                i += ch.len_utf8();
            }
            let tok = match c {
                b'\'' => Tok::Str(buf),
                b'"' => Tok::DoubleQuoted(buf),
                _ => Tok::QuotedIdent(buf),
            };
            out.push(Lexeme { tok, pos: start });
        } else {
            let rest = &text[i..];
            match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
                Some(s) => {
                    i += s.len();
                    out.push(Lexeme {
                        tok: Tok::Sym(s),
                        pos: start,
                    });
                }
                None => {
                    let ch = rest.chars().next().unwrap();
                    return Err(ParseError::Syntax {
                        position: start,
                        expected: vec!["token".into()],
                        found: ch.to_string(),
                    });
                }
            }
        }
    }
    out.push(Lexeme {
        tok: Tok::Eof,
        pos: text.len(),
    });
    Ok(out)
}
