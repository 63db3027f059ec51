//! Text format for control systems.
//!
//! ```text
//! system unicycle        # comments run to end of line
//! states x1 x2
//! inputs v               # optional when there are no inputs
//! dx1 = sin(v)
//! dx2 = cos(v)
//! ```
//!
//! Expressions use `+ - * /`, integer powers `^` (right-associative), unary
//! minus, and the functions `sin`, `cos`, `exp`. A minus sign directly in
//! front of a number literal is read as a negative literal.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::expr::Expr;
use crate::system::{ControlSystem, SystemError, RESERVED};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("missing `system <name>` header")]
    MissingHeader,
    #[error("missing `states` declaration")]
    MissingStates,
    #[error("{line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{line}:{col}: undeclared variable `{name}`")]
    Undeclared { name: String, line: usize, col: usize },
    #[error("{line}: duplicate equation for state `{state}`")]
    DuplicateEquation { state: String, line: usize },
    #[error("missing equation for state `{state}`")]
    MissingEquation { state: String },
    #[error("{line}: {source}")]
    Declaration {
        line: usize,
        #[source]
        source: SystemError,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number { value: f64, integral: bool },
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Equals,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn lex(text: &str, line: usize) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '=' => Some(Tok::Equals),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Spanned { tok, col });
            i += 1;
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Spanned {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                col,
            });
        } else if c.is_ascii_digit() {
            let start = i;
            let mut integral = true;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                integral = false;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    integral = false;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let value: f64 = s
                .parse()
                .map_err(|_| syntax(line, col, format!("malformed number `{s}`")))?;
            if !value.is_finite() {
                return Err(syntax(line, col, format!("number `{s}` out of range")));
            }
            out.push(Spanned {
                tok: Tok::Number { value, integral },
                col,
            });
        } else {
            return Err(syntax(line, col, format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct ExprParser<'a> {
    toks: &'a [Spanned],
    pos: usize,
    line: usize,
    end_col: usize,
    states: &'a HashMap<String, usize>,
    inputs: &'a HashMap<String, usize>,
}

impl ExprParser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |s| s.col)
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        syntax(self.line, self.col(), message)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = lhs + self.term()?;
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = lhs - self.term()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = lhs * self.factor()?;
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    let col = self.col();
                    let den = self.factor()?;
                    if den.is_const_zero() {
                        return Err(syntax(self.line, col, "division by literal zero"));
                    }
                    lhs = lhs / den;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.base()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let k = self.exponent()?;
            Ok(base.powi(k))
        } else {
            Ok(base)
        }
    }

    /// Signed integer, with further `^` folded right-associatively.
    fn exponent(&mut self) -> Result<i32, ParseError> {
        let col = self.col();
        let negative = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        let k = match self.peek() {
            Some(Tok::Number {
                value,
                integral: true,
            }) if *value <= i32::MAX as f64 => *value as i32,
            _ => return Err(self.err("expected integer exponent")),
        };
        self.pos += 1;
        let k = if negative { -k } else { k };
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let rest = self.exponent()?;
            let folded = u32::try_from(rest)
                .ok()
                .and_then(|r| k.checked_pow(r))
                .ok_or_else(|| syntax(self.line, col, "exponent out of range"))?;
            return Ok(folded);
        }
        Ok(k)
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Number { value, .. }) => {
                self.pos += 1;
                Ok(Expr::constant(value))
            }
            Some(Tok::Minus) => {
                self.pos += 1;
                if let Some(Tok::Number { value, .. }) = self.peek() {
                    let v = -*value;
                    self.pos += 1;
                    Ok(Expr::constant(v))
                } else {
                    Ok(-self.base()?)
                }
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if RESERVED.contains(&name.as_str()) {
                    self.expect(Tok::LParen, &format!("`(` after `{name}`"))?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(match name.as_str() {
                        "sin" => arg.sin(),
                        "cos" => arg.cos(),
                        _ => arg.exp(),
                    });
                }
                if let Some(&i) = self.states.get(&name) {
                    Ok(Expr::state(i))
                } else if let Some(&i) = self.inputs.get(&name) {
                    Ok(Expr::input(i))
                } else {
                    Err(ParseError::Undeclared {
                        name,
                        line: self.line,
                        col,
                    })
                }
            }
            _ => Err(self.err("expected an expression")),
        }
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn ident_list(
    toks: &[Spanned],
    line: usize,
    taken: &HashMap<String, usize>,
) -> Result<Vec<String>, ParseError> {
    let mut out: Vec<String> = Vec::with_capacity(toks.len());
    for t in toks {
        let Tok::Ident(s) = &t.tok else {
            return Err(syntax(line, t.col, "expected identifier"));
        };
        if taken.contains_key(s) || out.contains(s) {
            return Err(ParseError::Declaration {
                line,
                source: SystemError::DuplicateName(s.clone()),
            });
        }
        out.push(s.clone());
    }
    Ok(out)
}

/// Parse a system description.
pub fn parse(text: &str) -> Result<ControlSystem, ParseError> {
    let mut name: Option<String> = None;
    let mut states: Option<Vec<String>> = None;
    let mut inputs: Option<Vec<String>> = None;
    let mut state_idx = HashMap::new();
    let mut input_idx = HashMap::new();
    let mut rhs: Vec<Option<Expr>> = Vec::new();
    let mut decl_line = 0;

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = strip_comment(raw);
        let toks = lex(body, line)?;
        let Some(first) = toks.first() else {
            continue;
        };
        let head = match &first.tok {
            Tok::Ident(s) => s.as_str(),
            _ => return Err(syntax(line, first.col, "expected a declaration or equation")),
        };
        if name.is_none() {
            if head != "system" {
                return Err(ParseError::MissingHeader);
            }
            match &toks[1..] {
                [Spanned {
                    tok: Tok::Ident(n), ..
                }] => name = Some(n.clone()),
                [] => return Err(syntax(line, body.len() + 1, "expected system name")),
                [_, extra, ..] => return Err(syntax(line, extra.col, "unexpected token")),
                [other] => return Err(syntax(line, other.col, "expected system name")),
            }
            continue;
        }
        let is_equation = toks.get(1).is_some_and(|t| t.tok == Tok::Equals);
        match head {
            "system" if !is_equation => {
                return Err(syntax(line, first.col, "duplicate `system` header"));
            }
            "states" if !is_equation => {
                if states.is_some() {
                    return Err(syntax(line, first.col, "duplicate `states` declaration"));
                }
                let list = ident_list(&toks[1..], line, &input_idx)?;
                if list.is_empty() {
                    return Err(syntax(line, body.len() + 1, "expected at least one state"));
                }
                state_idx = list.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
                rhs = vec![None; list.len()];
                states = Some(list);
                decl_line = line;
            }
            "inputs" if !is_equation => {
                if inputs.is_some() {
                    return Err(syntax(line, first.col, "duplicate `inputs` declaration"));
                }
                if rhs.iter().any(Option::is_some) {
                    return Err(syntax(line, first.col, "`inputs` must precede equations"));
                }
                let list = ident_list(&toks[1..], line, &state_idx)?;
                input_idx = list.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
                inputs = Some(list);
            }
            _ => {
                let Some(state_list) = &states else {
                    return Err(ParseError::MissingStates);
                };
                let target = head
                    .strip_prefix('d')
                    .and_then(|s| state_idx.get(s).copied())
                    .ok_or_else(|| {
                        syntax(line, first.col, format!("`{head}` is not `d<state>`"))
                    })?;
                if !is_equation {
                    return Err(syntax(
                        line,
                        toks.get(1).map_or(body.len() + 1, |t| t.col),
                        "expected `=`",
                    ));
                }
                if rhs[target].is_some() {
                    return Err(ParseError::DuplicateEquation {
                        state: state_list[target].clone(),
                        line,
                    });
                }
                let mut p = ExprParser {
                    toks: &toks[2..],
                    pos: 0,
                    line,
                    end_col: body.chars().count() + 1,
                    states: &state_idx,
                    inputs: &input_idx,
                };
                let e = p.expr()?;
                if p.pos < p.toks.len() {
                    return Err(p.err("unexpected token"));
                }
                rhs[target] = Some(e);
            }
        }
    }

    let name = name.ok_or(ParseError::MissingHeader)?;
    let states = states.ok_or(ParseError::MissingStates)?;
    let mut full = Vec::with_capacity(states.len());
    for (i, e) in rhs.into_iter().enumerate() {
        full.push(e.ok_or_else(|| ParseError::MissingEquation {
            state: states[i].clone(),
        })?);
    }
    ControlSystem::new(name, states, inputs.unwrap_or_default(), full)
        .map_err(|source| ParseError::Declaration { line: decl_line, source })
}

/// Render a system in the text format. The `inputs` line is omitted when the
/// system has no inputs.
pub fn serialize(sys: &ControlSystem) -> String {
    let mut out = String::new();
    writeln!(out, "system {}", sys.name()).unwrap();
    writeln!(out, "states {}", sys.state_names().join(" ")).unwrap();
    if sys.m() > 0 {
        writeln!(out, "inputs {}", sys.input_names().join(" ")).unwrap();
    }
    for (name, e) in sys.state_names().iter().zip(sys.rhs()) {
        writeln!(
            out,
            "d{} = {}",
            name,
            e.display(sys.state_names(), sys.input_names())
        )
        .unwrap();
    }
    out
}

impl serde::Serialize for ControlSystem {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&serialize(self))
    }
}

impl<'de> serde::Deserialize<'de> for ControlSystem {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EQ8: &str = "system ex3\nstates x1 x2 x3\ninputs u\ndx1 = u\ndx2 = x3^3\ndx3 = u^3\n";

    #[test]
    fn parses_cascade() {
        let s = parse(EQ8).unwrap();
        assert_eq!((s.n(), s.m()), (3, 1));
        assert_eq!(s.rhs()[1], Expr::state(2).powi(3));
        assert_eq!(serialize(&s), EQ8);
    }

    #[test]
    fn minimal_system() {
        let s = parse("system s\nstates x1\ninputs u\ndx1 = u").unwrap();
        assert_eq!((s.n(), s.m()), (1, 1));
    }

    #[test]
    fn undeclared_variable_is_named() {
        let err = parse("system s\nstates x1 x2\ndx1 = x2\ndx2 = x9\n").unwrap_err();
        assert_eq!(
            err,
            ParseError::Undeclared {
                name: "x9".into(),
                line: 4,
                col: 7
            }
        );
    }

    #[test]
    fn structural_errors() {
        assert_eq!(parse(""), Err(ParseError::MissingHeader));
        assert_eq!(parse("# only a comment\n"), Err(ParseError::MissingHeader));
        assert_eq!(parse("states x\n"), Err(ParseError::MissingHeader));
        assert!(matches!(
            parse("system s\nstates x\ndx = 1\ndx = 2\n"),
            Err(ParseError::DuplicateEquation { line: 4, .. })
        ));
        assert_eq!(
            parse("system s\nstates x y\ndx = 1\n"),
            Err(ParseError::MissingEquation { state: "y".into() })
        );
        assert!(matches!(
            parse("system s\nstates x\ndx = (1 + x\n"),
            Err(ParseError::Syntax { line: 3, col: 12, .. })
        ));
        assert!(matches!(
            parse("system s\nstates x\ndx = x^1.5\n"),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse("system s\nstates x\ndx = x / 0\n"),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse("system s\nstates x x\ndx = 1\n"),
            Err(ParseError::Declaration { line: 2, .. })
        ));
        assert!(matches!(
            parse("system s\nstates x\ninputs x\ndx = 1\n"),
            Err(ParseError::Declaration {
                source: SystemError::DuplicateName(_),
                ..
            })
        ));
    }

    #[test]
    fn equations_in_any_order_and_comments() {
        let s = parse("system s # name\nstates a b\ndb = a # tail\nda = -b\n").unwrap();
        assert_eq!(s.rhs()[0], -Expr::state(1));
        assert_eq!(s.rhs()[1], Expr::state(0));
    }

    #[test]
    fn empty_inputs_line_omitted() {
        let s = parse("system s\nstates a\nda = a\n").unwrap();
        assert_eq!(serialize(&s), "system s\nstates a\nda = a\n");
    }

    #[test]
    fn power_chain_is_right_associative() {
        let s = parse("system s\nstates a\nda = a^2^3\n").unwrap();
        assert_eq!(s.rhs()[0], Expr::state(0).powi(8));
        let s = parse("system s\nstates a\nda = -a^-2\n").unwrap();
        assert_eq!(s.rhs()[0], (-Expr::state(0)).powi(-2));
    }

    #[test]
    fn negative_literals_round_trip() {
        for src in ["-3*a", "-(3)*a", "a - -3", "-(-3)", "--a", "-3^2", "-(3^2)", "1e-7*a"] {
            let text = format!("system s\nstates a\nda = {src}\n");
            let s = parse(&text).unwrap();
            assert_eq!(parse(&serialize(&s)).unwrap(), s, "{src}");
        }
    }
}
