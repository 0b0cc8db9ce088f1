//! A small parser for the Python/JSON literal subset models emit when asked for a
//! dictionary: dicts, lists, quoted strings, numbers, `None`/`null`, booleans.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Dict(Vec<(String, Literal)>),
    List(Vec<Literal>),
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Null,
    /// Unquoted word that is not a known constant.
    Ident(String),
}

impl Literal {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Literal::Int(i) => Some(*i as f64),
            Literal::Float(f) => Some(*f),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiteralError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for LiteralError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at byte {}", self.message, self.offset)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, LiteralError> {
        Err(LiteralError {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn expect(&mut self, want: char) -> Result<(), LiteralError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == want => {
                self.bump();
                Ok(())
            }
            Some(c) => self.err(format!("expected `{want}`, found `{c}`")),
            None => self.err(format!("expected `{want}`, found end of input")),
        }
    }

    fn value(&mut self) -> Result<Literal, LiteralError> {
        self.skip_ws();
        match self.peek() {
            Some('{') => self.dict(),
            Some('[') | Some('(') => self.list(),
            Some('"') | Some('\'') => self.string().map(Literal::Str),
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => self.number(),
            Some(c) if c.is_alphabetic() || c == '_' => Ok(self.word()),
            Some(c) => self.err(format!("unexpected `{c}`")),
            None => self.err("unexpected end of input"),
        }
    }

    fn dict(&mut self) -> Result<Literal, LiteralError> {
        self.expect('{')?;
        let mut entries = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some('}') {
                self.bump();
                return Ok(Literal::Dict(entries));
            }
            let key = match self.value()? {
                Literal::Str(s) | Literal::Ident(s) => s,
                Literal::Int(i) => i.to_string(),
                Literal::Float(f) => f.to_string(),
                other => return self.err(format!("unsupported dictionary key {other:?}")),
            };
            self.expect(':')?;
            let value = self.value()?;
            entries.push((key, value));
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some('}') => {}
                Some(c) => return self.err(format!("expected `,` or `}}`, found `{c}`")),
                None => return self.err("unterminated dictionary"),
            }
        }
    }

    fn list(&mut self) -> Result<Literal, LiteralError> {
        let close = if self.bump() == Some('[') { ']' } else { ')' };
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(close) {
                self.bump();
                return Ok(Literal::List(items));
            }
            items.push(self.value()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(c) if c == close => {}
                _ => return self.err("malformed list"),
            }
        }
    }

    fn string(&mut self) -> Result<String, LiteralError> {
        let quote = self.bump().expect("caller saw a quote");
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return self.err("unterminated string"),
                Some(c) if c == quote => return Ok(out),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some('u') => {
                        let hex: String = (0..4).filter_map(|_| self.bump()).collect();
                        match u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
                            Some(c) => out.push(c),
                            None => return self.err("bad unicode escape"),
                        }
                    }
                    Some(c) => out.push(c),
                    None => return self.err("unterminated escape"),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn number(&mut self) -> Result<Literal, LiteralError> {
        let start = self.pos;
        if matches!(self.peek(), Some('+') | Some('-')) {
            self.bump();
        }
        // nan / inf after a sign
        if self.peek().is_some_and(|c| c.is_alphabetic()) {
            let word = self.word();
            let negative = self.src[start..].starts_with('-');
            return match word {
                Literal::Ident(w) if w.eq_ignore_ascii_case("inf") || w.eq_ignore_ascii_case("infinity") => {
                    Ok(Literal::Float(if negative { f64::NEG_INFINITY } else { f64::INFINITY }))
                }
                Literal::Ident(w) if w.eq_ignore_ascii_case("nan") => Ok(Literal::Null),
                _ => self.err("malformed number"),
            };
        }
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == '.' || c == '_' {
                self.bump();
            } else if c == 'e' || c == 'E' {
                self.bump();
                if matches!(self.peek(), Some('+') | Some('-')) {
                    self.bump();
                }
            } else {
                break;
            }
        }
        let text: String = self.src[start..self.pos].chars().filter(|&c| c != '_').collect();
        let text = text.strip_prefix('+').unwrap_or(&text);
        if let Ok(i) = text.parse::<i64>() {
            return Ok(Literal::Int(i));
        }
        match text.parse::<f64>() {
            Ok(f) => Ok(Literal::Float(f)),
            Err(_) => {
                self.pos = start;
                self.err(format!("malformed number `{text}`"))
            }
        }
    }

    fn word(&mut self) -> Literal {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' {
                self.bump();
            } else {
                break;
            }
        }
        match &self.src[start..self.pos] {
            "None" | "null" | "nan" | "NaN" | "NULL" => Literal::Null,
            "True" | "true" => Literal::Bool(true),
            "False" | "false" => Literal::Bool(false),
            w => Literal::Ident(w.to_string()),
        }
    }
}

/// Parses one literal starting at the beginning of `src`; returns it and the bytes consumed.
pub fn parse_prefix(src: &str) -> Result<(Literal, usize), LiteralError> {
    let mut p = Parser { src, pos: 0 };
    let v = p.value()?;
    Ok((v, p.pos))
}

/// Finds the first `{...}` in free text that parses as a dictionary literal.
///
/// Code fences are looked into first; prose before and after the literal is ignored.
pub fn find_dict(text: &str) -> Option<Literal> {
    let mut candidates: Vec<&str> = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let body = &rest[open + 3..];
        let Some(close) = body.find("```") else { break };
        let inner = &body[..close];
        // drop a language tag on the opening line
        let inner = match inner.find('\n') {
            Some(nl) if !inner[..nl].contains('{') => &inner[nl + 1..],
            _ => inner,
        };
        candidates.push(inner);
        rest = &body[close + 3..];
    }
    candidates.push(text);
    for candidate in candidates {
        let mut from = 0;
        while let Some(at) = candidate[from..].find('{') {
            let start = from + at;
            if let Ok((lit @ Literal::Dict(_), _)) = parse_prefix(&candidate[start..]) {
                return Some(lit);
            }
            from = start + 1;
        }
    }
    None
}
