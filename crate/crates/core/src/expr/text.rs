//! Prefix text form of expressions.
//!
//! ```text
//! expr   := number | name | "(" op expr+ ")"
//! op     := add | sub | mul | div | max | min   (two operands)
//!         | ceil | exp                           (one operand)
//!         | select                               (four operands: lhs rhs then otherwise)
//! number := anything `f64::from_str` accepts, starting with a digit, `-`, `+` or `.`
//! name   := [A-Za-z_][A-Za-z0-9_.]*
//! ```
//!
//! Whitespace separates tokens. Numbers are written in shortest round-trip form,
//! so `parse(print(e)) == e`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::Expr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("expression parse error at token {position}: {reason}")]
pub struct ParseExprError {
    pub position: usize,
    pub reason: String,
}

pub(super) fn write_expr(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Const(v) => write!(f, "{v}"),
        Expr::Param(name) => f.write_str(name),
        Expr::Add(a, b) => write!(f, "(add {a} {b})"),
        Expr::Sub(a, b) => write!(f, "(sub {a} {b})"),
        Expr::Mul(a, b) => write!(f, "(mul {a} {b})"),
        Expr::Div(a, b) => write!(f, "(div {a} {b})"),
        Expr::Max(a, b) => write!(f, "(max {a} {b})"),
        Expr::Min(a, b) => write!(f, "(min {a} {b})"),
        Expr::Ceil(a) => write!(f, "(ceil {a})"),
        Expr::Exp(a) => write!(f, "(exp {a})"),
        Expr::Select {
            lhs,
            rhs,
            then,
            otherwise,
        } => write!(f, "(select {lhs} {rhs} {then} {otherwise})"),
    }
}

fn tokenize(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' | ')' => {
                if let Some(st) = start.take() {
                    out.push(&s[st..i]);
                }
                out.push(&s[i..i + 1]);
            }
            c if c.is_whitespace() => {
                if let Some(st) = start.take() {
                    out.push(&s[st..i]);
                }
            }
            _ => {
                if start.is_none() {
                    start = Some(i);
                }
            }
        }
    }
    if let Some(st) = start {
        out.push(&s[st..]);
    }
    out
}

pub(crate) fn is_name(tok: &str) -> bool {
    let mut chars = tok.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

struct Parser<'a> {
    tokens: Vec<&'a str>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, reason: impl Into<String>) -> ParseExprError {
        ParseExprError {
            position: self.pos,
            reason: reason.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str, ParseExprError> {
        let tok = self
            .tokens
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err("unexpected end of input"))?;
        self.pos += 1;
        Ok(tok)
    }

    fn expr(&mut self) -> Result<Expr, ParseExprError> {
        let tok = self.next()?;
        match tok {
            "(" => {
                let op = self.next()?;
                let arity = match op {
                    "add" | "sub" | "mul" | "div" | "max" | "min" => 2,
                    "ceil" | "exp" => 1,
                    "select" => 4,
                    other => return Err(self.err(format!("unknown operator `{other}`"))),
                };
                let mut args = Vec::with_capacity(arity);
                for _ in 0..arity {
                    args.push(Arc::new(self.expr()?));
                }
                if self.next()? != ")" {
                    return Err(self.err(format!("`{op}` expects {arity} operand(s)")));
                }
                let mut it = args.into_iter();
                let mut take = || it.next().expect("arity checked");
                Ok(match op {
                    "add" => Expr::Add(take(), take()),
                    "sub" => Expr::Sub(take(), take()),
                    "mul" => Expr::Mul(take(), take()),
                    "div" => Expr::Div(take(), take()),
                    "max" => Expr::Max(take(), take()),
                    "min" => Expr::Min(take(), take()),
                    "ceil" => Expr::Ceil(take()),
                    "exp" => Expr::Exp(take()),
                    _ => Expr::Select {
                        lhs: take(),
                        rhs: take(),
                        then: take(),
                        otherwise: take(),
                    },
                })
            }
            ")" => Err(self.err("unexpected `)`")),
            t if t.starts_with(|c: char| c.is_ascii_digit() || matches!(c, '-' | '+' | '.')) => t
                .parse::<f64>()
                .map(Expr::Const)
                .map_err(|_| self.err(format!("bad number `{t}`"))),
            t if is_name(t) => Ok(Expr::Param(t.to_string())),
            t => Err(self.err(format!("bad token `{t}`"))),
        }
    }
}

impl FromStr for Expr {
    type Err = ParseExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser {
            tokens: tokenize(s),
            pos: 0,
        };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(p.err("trailing tokens"));
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prints_prefix_form() {
        let e = 2.0 * Expr::p("wireCap") + Expr::p("node");
        assert_eq!(e.to_string(), "(add (mul 2 wireCap) node)");
    }

    #[test]
    fn parses_nested() {
        let e: Expr = "(max (ceil (div 1024 B)) (select x 1 0.5 -2e-3))".parse().unwrap();
        assert_eq!(
            e.eval(&[("B", 64.0), ("x", 0.0)].into_iter().collect::<super::super::Assignment>())
                .unwrap(),
            16.0
        );
    }

    #[test]
    fn rejects_garbage() {
        assert!("(add 1)".parse::<Expr>().is_err());
        assert!("(add 1 2) 3".parse::<Expr>().is_err());
        assert!("(pow 1 2)".parse::<Expr>().is_err());
        assert!("1x".parse::<Expr>().is_err());
        assert!("".parse::<Expr>().is_err());
    }
}
