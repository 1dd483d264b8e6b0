//! The abstract syntax tree of the task expression language, and its
//! canonical S-expression printer. Printing then reparsing yields a
//! structurally equal tree.

use std::fmt;

use crate::exprlang::value::{format_real, Value};

/// An expression. Identifiers match `[A-Za-z_][A-Za-z0-9_.]*`; call heads may
/// additionally be operator symbols like `+` or `<=`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// A scalar literal: null, bool, int, real, or string.
    Literal(Value),
    Var(String),
    /// Arity is validated against the registry at evaluation time.
    Call(String, Vec<Expr>),
    /// Sequential bindings: each binding sees the ones before it.
    Let(Vec<(String, Expr)>, Box<Expr>),
    Lambda(Vec<String>, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Begin(Vec<Expr>),
    /// `(set! name expr)` — binds in the innermost frame at evaluation.
    Assign(String, Box<Expr>),
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn escape_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

fn write_literal(f: &mut fmt::Formatter<'_>, v: &Value) -> fmt::Result {
    match v {
        Value::Null => write!(f, "null"),
        Value::Bool(b) => write!(f, "{b}"),
        Value::Int(i) => write!(f, "{i}"),
        Value::Real(r) => write!(f, "{}", format_real(*r)),
        Value::Str(s) => write!(f, "{}", escape_str(s)),
        // Non-scalar literals never come out of the parser; render them as
        // constructor calls so printing stays total.
        other => write!(f, "{other}"),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(v) => write_literal(f, v),
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Call(fn_name, args) => {
                write!(f, "({fn_name}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                write!(f, ")")
            }
            Expr::Let(bindings, body) => {
                write!(f, "(let (")?;
                for (i, (name, expr)) in bindings.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "({name} {expr})")?;
                }
                write!(f, ") {body})")
            }
            Expr::Lambda(params, body) => {
                write!(f, "(lambda (")?;
                for (i, p) in params.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ") {body})")
            }
            Expr::If(c, t, e) => write!(f, "(if {c} {t} {e})"),
            Expr::Begin(steps) => {
                write!(f, "(begin")?;
                for s in steps {
                    write!(f, " {s}")?;
                }
                write!(f, ")")
            }
            Expr::Assign(name, expr) => write!(f, "(set! {name} {expr})"),
        }
    }
}
