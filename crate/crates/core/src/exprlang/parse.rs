//! S-expression parser for the task language.
//!
//! Parsing is total over the grammar: no evaluation, no name resolution.
//! Errors carry a 1-based line and column.

use crate::error::SyntaxError;
use crate::exprlang::ast::{is_identifier, Expr};
use crate::exprlang::value::Value;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LParen,
    RParen,
    Int(i64),
    Real(f64),
    Str(String),
    Sym(String),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn err(line: usize, col: usize, message: impl Into<String>) -> SyntaxError {
    SyntaxError {
        line,
        col,
        message: message.into(),
    }
}

const SYMBOL_EXTRA: &[char] = &['+', '-', '*', '/', '<', '>', '=', '!', '_', '.'];

fn is_symbol_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || SYMBOL_EXTRA.contains(&c)
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn peek(&self) -> Option<char> {
        self.src.get(self.pos).map(|&b| b as char)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, SyntaxError> {
        let mut out = Vec::new();
        loop {
            while let Some(c) = self.peek() {
                if c == ';' {
                    // comment to end of line
                    while let Some(c) = self.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                } else if c.is_ascii_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(c) = self.peek() else { break };
            match c {
                '(' => {
                    self.bump();
                    out.push(Spanned {
                        tok: Tok::LParen,
                        line,
                        col,
                    });
                }
                ')' => {
                    self.bump();
                    out.push(Spanned {
                        tok: Tok::RParen,
                        line,
                        col,
                    });
                }
                '"' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            None => return Err(err(line, col, "unterminated string literal")),
                            Some('"') => break,
                            Some('\\') => match self.bump() {
                                Some('"') => s.push('"'),
                                Some('\\') => s.push('\\'),
                                Some('n') => s.push('\n'),
                                Some('t') => s.push('\t'),
                                Some('r') => s.push('\r'),
                                Some(other) => {
                                    return Err(err(
                                        self.line,
                                        self.col,
                                        format!("unknown escape '\\{other}'"),
                                    ))
                                }
                                None => {
                                    return Err(err(line, col, "unterminated string literal"))
                                }
                            },
                            Some(other) => s.push(other),
                        }
                    }
                    out.push(Spanned {
                        tok: Tok::Str(s),
                        line,
                        col,
                    });
                }
                _ if is_symbol_char(c) => {
                    let mut word = String::new();
                    while let Some(c) = self.peek() {
                        if is_symbol_char(c) {
                            word.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    out.push(Spanned {
                        tok: classify_word(&word, line, col)?,
                        line,
                        col,
                    });
                }
                other => {
                    return Err(err(line, col, format!("unexpected character {other:?}")));
                }
            }
        }
        Ok(out)
    }
}

/// A word is a number if it starts like one; otherwise it is a symbol.
fn classify_word(word: &str, line: usize, col: usize) -> Result<Tok, SyntaxError> {
    let starts_number = {
        let mut chars = word.chars();
        match chars.next() {
            Some(c) if c.is_ascii_digit() => true,
            Some('+') | Some('-') => matches!(chars.next(), Some(c) if c.is_ascii_digit()),
            _ => false,
        }
    };
    if word == "+inf" || word == "-inf" || word == "nan" {
        let v = match word {
            "+inf" => f64::INFINITY,
            "-inf" => f64::NEG_INFINITY,
            _ => f64::NAN,
        };
        return Ok(Tok::Real(v));
    }
    if !starts_number {
        return Ok(Tok::Sym(word.to_string()));
    }
    if word.contains('.') || word.contains('e') || word.contains('E') {
        word.parse::<f64>()
            .map(Tok::Real)
            .map_err(|_| err(line, col, format!("malformed real literal {word:?}")))
    } else {
        word.parse::<i64>()
            .map(Tok::Int)
            .map_err(|_| err(line, col, format!("malformed int literal {word:?}")))
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end_line: usize,
    end_col: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_rparen(&mut self, open: &Spanned) -> Result<(), SyntaxError> {
        match self.next() {
            Some(Spanned {
                tok: Tok::RParen, ..
            }) => Ok(()),
            Some(t) => Err(err(t.line, t.col, "expected ')'")),
            None => Err(err(
                open.line,
                open.col,
                "unclosed '(' — expected ')' before end of input",
            )),
        }
    }

    fn eof_err(&self, what: &str) -> SyntaxError {
        err(
            self.end_line,
            self.end_col,
            format!("unexpected end of input: {what}"),
        )
    }

    fn parse_expr(&mut self) -> Result<Expr, SyntaxError> {
        let t = self.next().ok_or_else(|| self.eof_err("expected expression"))?;
        match t.tok {
            Tok::Int(i) => Ok(Expr::Literal(Value::Int(i))),
            Tok::Real(r) => Ok(Expr::Literal(Value::Real(r))),
            Tok::Str(s) => Ok(Expr::Literal(Value::Str(s))),
            Tok::Sym(name) => match name.as_str() {
                "null" => Ok(Expr::Literal(Value::Null)),
                "true" => Ok(Expr::Literal(Value::Bool(true))),
                "false" => Ok(Expr::Literal(Value::Bool(false))),
                _ if is_identifier(&name) => Ok(Expr::Var(name)),
                _ => Err(err(
                    t.line,
                    t.col,
                    format!("{name:?} is not a valid identifier"),
                )),
            },
            Tok::RParen => Err(err(t.line, t.col, "unexpected ')'")),
            Tok::LParen => self.parse_form(&t),
        }
    }

    fn parse_form(&mut self, open: &Spanned) -> Result<Expr, SyntaxError> {
        let head = self
            .next()
            .ok_or_else(|| err(open.line, open.col, "unclosed '('"))?;
        let head_name = match head.tok {
            Tok::Sym(s) => s,
            Tok::RParen => return Err(err(head.line, head.col, "empty form '()'")),
            _ => {
                return Err(err(
                    head.line,
                    head.col,
                    "form head must be an identifier or operator",
                ))
            }
        };
        match head_name.as_str() {
            "let" => self.parse_let(open),
            "lambda" => self.parse_lambda(open),
            "if" => {
                let cond = self.parse_expr()?;
                let then = self.parse_expr()?;
                let els = self.parse_expr()?;
                self.expect_rparen(open)?;
                Ok(Expr::If(Box::new(cond), Box::new(then), Box::new(els)))
            }
            "begin" => {
                let mut steps = Vec::new();
                while !matches!(self.peek().map(|t| &t.tok), Some(Tok::RParen)) {
                    if self.peek().is_none() {
                        return Err(err(open.line, open.col, "unclosed '(' in begin"));
                    }
                    steps.push(self.parse_expr()?);
                }
                self.expect_rparen(open)?;
                if steps.is_empty() {
                    return Err(err(open.line, open.col, "begin needs at least one step"));
                }
                Ok(Expr::Begin(steps))
            }
            "set!" => {
                let name_tok = self.next().ok_or_else(|| self.eof_err("set! needs a name"))?;
                let name = match name_tok.tok {
                    Tok::Sym(s) if is_identifier(&s) => s,
                    _ => {
                        return Err(err(
                            name_tok.line,
                            name_tok.col,
                            "set! target must be an identifier",
                        ))
                    }
                };
                let value = self.parse_expr()?;
                self.expect_rparen(open)?;
                Ok(Expr::Assign(name, Box::new(value)))
            }
            _ => {
                // ordinary call: head may be an identifier or operator symbol
                let mut args = Vec::new();
                loop {
                    match self.peek().map(|t| &t.tok) {
                        Some(Tok::RParen) => break,
                        Some(_) => args.push(self.parse_expr()?),
                        None => return Err(err(open.line, open.col, "unclosed '('")),
                    }
                }
                self.expect_rparen(open)?;
                Ok(Expr::Call(head_name, args))
            }
        }
    }

    fn parse_let(&mut self, open: &Spanned) -> Result<Expr, SyntaxError> {
        let binds_open = self.next().ok_or_else(|| self.eof_err("let needs bindings"))?;
        if !matches!(binds_open.tok, Tok::LParen) {
            return Err(err(
                binds_open.line,
                binds_open.col,
                "let bindings must be a list",
            ));
        }
        let mut bindings = Vec::new();
        loop {
            let t = self
                .next()
                .ok_or_else(|| err(binds_open.line, binds_open.col, "unclosed let bindings"))?;
            match t.tok {
                Tok::RParen => break,
                Tok::LParen => {
                    let name_tok = self.next().ok_or_else(|| self.eof_err("binding name"))?;
                    let name = match name_tok.tok {
                        Tok::Sym(s) if is_identifier(&s) => s,
                        _ => {
                            return Err(err(
                                name_tok.line,
                                name_tok.col,
                                "binding name must be an identifier",
                            ))
                        }
                    };
                    let value = self.parse_expr()?;
                    self.expect_rparen(&t)?;
                    bindings.push((name, value));
                }
                _ => return Err(err(t.line, t.col, "expected '(' to open a binding")),
            }
        }
        let body = self.parse_expr()?;
        self.expect_rparen(open)?;
        Ok(Expr::Let(bindings, Box::new(body)))
    }

    fn parse_lambda(&mut self, open: &Spanned) -> Result<Expr, SyntaxError> {
        let params_open = self.next().ok_or_else(|| self.eof_err("lambda needs params"))?;
        if !matches!(params_open.tok, Tok::LParen) {
            return Err(err(
                params_open.line,
                params_open.col,
                "lambda parameters must be a list",
            ));
        }
        let mut params = Vec::new();
        loop {
            let t = self
                .next()
                .ok_or_else(|| err(params_open.line, params_open.col, "unclosed parameter list"))?;
            match t.tok {
                Tok::RParen => break,
                Tok::Sym(s) if is_identifier(&s) => params.push(s),
                _ => {
                    return Err(err(
                        t.line,
                        t.col,
                        "lambda parameter must be an identifier",
                    ))
                }
            }
        }
        let body = self.parse_expr()?;
        self.expect_rparen(open)?;
        Ok(Expr::Lambda(params, Box::new(body)))
    }
}

/// Parse one expression from source text.
pub fn parse(source: &str) -> Result<Expr, SyntaxError> {
    let lexer = Lexer::new(source);
    let end_line = source.chars().filter(|&c| c == '\n').count() + 1;
    let end_col = source
        .rsplit('\n')
        .next()
        .map(|l| l.chars().count() + 1)
        .unwrap_or(1);
    let toks = lexer.tokens()?;
    let mut parser = Parser {
        toks,
        pos: 0,
        end_line,
        end_col,
    };
    let expr = parser.parse_expr()?;
    if let Some(t) = parser.peek() {
        return Err(err(t.line, t.col, "trailing input after expression"));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn call_with_operator_head() {
        let e = parse("(+ x 1)").unwrap();
        assert_eq!(
            e,
            Expr::Call(
                "+".into(),
                vec![Expr::Var("x".into()), Expr::Literal(Value::Int(1))]
            )
        );
    }

    #[test]
    fn let_is_sequential_form() {
        let e = parse("(let ((y 2)) (* y y))").unwrap();
        assert_eq!(
            e,
            Expr::Let(
                vec![("y".into(), Expr::Literal(Value::Int(2)))],
                Box::new(Expr::Call(
                    "*".into(),
                    vec![Expr::Var("y".into()), Expr::Var("y".into())]
                ))
            )
        );
    }

    #[test]
    fn unclosed_paren_reports_position() {
        let e = parse("(+ 1").unwrap_err();
        assert_eq!((e.line, e.col), (1, 1));
        assert!(e.message.contains("unclosed"));
    }

    #[test]
    fn lambda_if_begin_set() {
        assert!(matches!(parse("(lambda (a) (f a))").unwrap(), Expr::Lambda(..)));
        assert!(matches!(parse("(if c a b)").unwrap(), Expr::If(..)));
        assert!(matches!(parse("(begin e1 e2)").unwrap(), Expr::Begin(..)));
        assert!(matches!(parse("(set! x 3)").unwrap(), Expr::Assign(..)));
    }

    #[test]
    fn literals() {
        assert_eq!(parse("42").unwrap(), Expr::Literal(Value::Int(42)));
        assert_eq!(parse("-7").unwrap(), Expr::Literal(Value::Int(-7)));
        assert_eq!(parse("2.5").unwrap(), Expr::Literal(Value::Real(2.5)));
        assert_eq!(parse("1e3").unwrap(), Expr::Literal(Value::Real(1000.0)));
        assert_eq!(
            parse("\"hi\\n\"").unwrap(),
            Expr::Literal(Value::Str("hi\n".into()))
        );
        assert_eq!(parse("null").unwrap(), Expr::Literal(Value::Null));
        assert_eq!(parse("true").unwrap(), Expr::Literal(Value::Bool(true)));
    }

    #[test]
    fn comments_and_whitespace() {
        let e = parse("; heading\n(+ 1 ; inline\n 2)").unwrap();
        assert_eq!(
            e,
            Expr::Call(
                "+".into(),
                vec![Expr::Literal(Value::Int(1)), Expr::Literal(Value::Int(2))]
            )
        );
    }

    #[test]
    fn error_positions_are_one_based() {
        let e = parse("(f ))").unwrap_err();
        assert_eq!((e.line, e.col), (1, 5));
        let e = parse("\n  @").unwrap_err();
        assert_eq!((e.line, e.col), (2, 3));
    }

    #[test]
    fn trailing_input_rejected() {
        assert!(parse("1 2").is_err());
    }

    #[test]
    fn empty_form_rejected() {
        let e = parse("()").unwrap_err();
        assert!(e.message.contains("empty form"));
    }
}
