//! Arithmetic expressions over named state variables, time, and constants.
//!
//! Expressions are the shared front-end for predicate bodies, dynamics
//! updates, and reward functions. They are parsed against an explicit list
//! of allowed variable names, so a context that admits the time symbol `t`
//! simply includes it in the list.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := term  (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)*            // exponent must be constant
//! atom   := number | ident | func '(' expr ')' | '(' expr ')'
//! func   := exp | ln | sqrt | sin | cos | tan | tanh | sigmoid
//! ```
//!
//! All binary operators are left-associative; `^` binds tighter than unary
//! minus, which binds tighter than `*` and `/`.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tape::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Tan,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Validated arithmetic expression tree.
///
/// Powers are a dedicated node with an already-folded constant exponent,
/// which is what makes closed-form differentiation possible downstream.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
}

/// Name-to-value bindings for evaluation. Lookup is a linear scan; the
/// environments here never exceed a dozen entries.
pub struct Env<'n, R> {
    slots: Vec<(&'n str, R)>,
}

impl<'n, R: Copy> Env<'n, R> {
    pub fn new() -> Self {
        Env { slots: Vec::new() }
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Env {
            slots: Vec::with_capacity(capacity),
        }
    }

    pub fn bind(&mut self, name: &'n str, value: R) {
        self.slots.push((name, value));
    }

    pub fn get(&self, name: &str) -> Option<R> {
        self.slots
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
    }
}

impl<'n, R: Copy> Default for Env<'n, R> {
    fn default() -> Self {
        Env::new()
    }
}

impl Expr {
    /// Evaluates on plain floats.
    pub fn eval(&self, env: &Env<'_, f64>) -> Result<f64> {
        self.eval_in(env, &|c| c)
    }

    /// Evaluates on any [`Real`]; `lift` turns a literal constant into the
    /// numeric type (for tape scalars this records a constant node).
    pub fn eval_in<R: Real>(&self, env: &Env<'_, R>, lift: &impl Fn(f64) -> R) -> Result<R> {
        match self {
            Expr::Const(c) => Ok(lift(*c)),
            Expr::Var(name) => env
                .get(name)
                .ok_or_else(|| Error::UnboundVariable(name.clone())),
            Expr::Unary(op, child) => {
                let x = child.eval_in(env, lift)?;
                Ok(match op {
                    UnaryOp::Neg => -x,
                    UnaryOp::Exp => x.exp(),
                    UnaryOp::Ln => x.try_ln()?,
                    UnaryOp::Sqrt => x.try_sqrt()?,
                    UnaryOp::Sin => x.sin(),
                    UnaryOp::Cos => x.cos(),
                    UnaryOp::Tan => x.tan(),
                    UnaryOp::Tanh => x.tanh(),
                    UnaryOp::Sigmoid => x.sigmoid(),
                })
            }
            Expr::Binary(op, left, right) => {
                let l = left.eval_in(env, lift)?;
                let r = right.eval_in(env, lift)?;
                Ok(match op {
                    BinaryOp::Add => l + r,
                    BinaryOp::Sub => l - r,
                    BinaryOp::Mul => l * r,
                    BinaryOp::Div => l.try_div(r)?,
                })
            }
            Expr::Pow(base, k) => base.eval_in(env, lift)?.powc(*k),
        }
    }

    /// Set of variable names referenced by the expression.
    pub fn variables(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'e>(&'e self, out: &mut BTreeSet<&'e str>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(name) => {
                out.insert(name.as_str());
            }
            Expr::Unary(_, child) => child.collect_vars(out),
            Expr::Binary(_, left, right) => {
                left.collect_vars(out);
                right.collect_vars(out);
            }
            Expr::Pow(base, _) => base.collect_vars(out),
        }
    }

    /// Canonical text form; reparsing it yields a structurally identical
    /// tree.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.write(&mut s);
        s
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    fn write(&self, out: &mut String) {
        match self {
            Expr::Const(c) => {
                out.push_str(&format!("{c}"));
            }
            Expr::Var(name) => out.push_str(name),
            Expr::Unary(UnaryOp::Neg, child) => {
                out.push('-');
                // a negative literal needs parentheses to avoid `--c`
                let negative_const =
                    matches!(child.as_ref(), Expr::Const(c) if c.is_sign_negative());
                if negative_const {
                    out.push('(');
                    child.write(out);
                    out.push(')');
                } else {
                    self.write_child(child, 3, out);
                }
            }
            Expr::Unary(op, child) => {
                let name = match op {
                    UnaryOp::Exp => "exp",
                    UnaryOp::Ln => "ln",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Tan => "tan",
                    UnaryOp::Tanh => "tanh",
                    UnaryOp::Sigmoid => "sigmoid",
                    UnaryOp::Neg => unreachable!(),
                };
                out.push_str(name);
                out.push('(');
                child.write(out);
                out.push(')');
            }
            Expr::Binary(op, left, right) => {
                let (sym, prec) = match op {
                    BinaryOp::Add => (" + ", 1),
                    BinaryOp::Sub => (" - ", 1),
                    BinaryOp::Mul => ("*", 2),
                    BinaryOp::Div => ("/", 2),
                };
                // left child may share the precedence level (left-assoc);
                // the right child must bind strictly tighter
                if left.precedence() < prec {
                    out.push('(');
                    left.write(out);
                    out.push(')');
                } else {
                    left.write(out);
                }
                out.push_str(sym);
                if right.precedence() <= prec {
                    out.push('(');
                    right.write(out);
                    out.push(')');
                } else {
                    right.write(out);
                }
            }
            Expr::Pow(base, k) => {
                let atomic = matches!(
                    base.as_ref(),
                    Expr::Var(_) | Expr::Const(_)
                        if !matches!(base.as_ref(), Expr::Const(c) if c.is_sign_negative())
                );
                if atomic {
                    base.write(out);
                } else {
                    out.push('(');
                    base.write(out);
                    out.push(')');
                }
                out.push('^');
                if *k < 0.0 {
                    out.push_str(&format!("({k})"));
                } else {
                    out.push_str(&format!("{k}"));
                }
            }
        }
    }

    fn write_child(&self, child: &Expr, prec: u8, out: &mut String) {
        if child.precedence() < prec {
            out.push('(');
            child.write(out);
            out.push(')');
        } else {
            child.write(out);
        }
    }
}

/// Parses an expression, validating every variable against `vars`.
pub fn parse_expr(text: &str, vars: &[&str]) -> Result<Expr> {
    let mut parser = ExprParser::new(text, vars);
    let expr = parser.parse_expr()?;
    parser.skip_ws();
    if parser.pos < parser.bytes.len() {
        return Err(Error::syntax(parser.pos, "unexpected trailing input"));
    }
    Ok(expr)
}

/// Parses the longest expression prefix starting at `start`, returning the
/// expression and the byte offset one past it. Used by the formula parser,
/// which embeds expressions inside predicates.
pub(crate) fn parse_expr_prefix(text: &str, start: usize, vars: &[&str]) -> Result<(Expr, usize)> {
    let mut parser = ExprParser::new(text, vars);
    parser.pos = start;
    let expr = parser.parse_expr()?;
    Ok((expr, parser.pos))
}

pub(crate) struct ExprParser<'a> {
    bytes: &'a [u8],
    vars: &'a [&'a str],
    pub(crate) pos: usize,
}

impl<'a> ExprParser<'a> {
    fn new(text: &'a str, vars: &'a [&'a str]) -> Self {
        ExprParser {
            bytes: text.as_bytes(),
            vars,
            pos: 0,
        }
    }

    pub(crate) fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn parse_expr(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    lhs = Expr::Binary(BinaryOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    lhs = Expr::Binary(BinaryOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.parse_unary()?;
                    lhs = Expr::Binary(BinaryOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.parse_unary()?;
                    lhs = Expr::Binary(BinaryOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.parse_unary()?;
            // fold a negated literal so `-2` is a constant, usable as an
            // exponent and stable under printing
            if let Expr::Const(c) = inner {
                return Ok(Expr::Const(-c));
            }
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr> {
        let mut base = self.parse_atom()?;
        while self.peek() == Some(b'^') {
            self.pos += 1;
            let at = self.pos;
            let exponent = self.parse_exponent_operand()?;
            let k = constant_value(&exponent).ok_or(Error::NonConstantExponent { position: at })?;
            base = Expr::Pow(Box::new(base), k);
        }
        Ok(base)
    }

    /// An exponent binds at atom level (so power chains stay
    /// left-associative) but may carry a leading minus.
    fn parse_exponent_operand(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.parse_exponent_operand()?;
            if let Expr::Const(c) = inner {
                return Ok(Expr::Const(-c));
            }
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.parse_atom()
    }

    fn parse_atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                if self.peek() != Some(b')') {
                    return Err(Error::syntax(self.pos, "expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.parse_number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.parse_ident(),
            Some(c) => Err(Error::syntax(
                self.pos,
                format!("unexpected character `{}`", c as char),
            )),
            None => Err(Error::syntax(self.pos, "unexpected end of input")),
        }
    }

    fn parse_number(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_digit() || *c == b'.')
        {
            self.pos += 1;
        }
        if self.bytes.get(self.pos).is_some_and(|c| matches!(c, b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if self.bytes.get(self.pos).is_some_and(|c| matches!(c, b'+' | b'-')) {
                self.pos += 1;
            }
            if self.bytes.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                while self.bytes.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                // not an exponent after all (e.g. a variable named `e1`)
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| Error::syntax(start, format!("invalid number `{text}`")))
    }

    fn parse_ident(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let func = match name {
            "exp" => Some(UnaryOp::Exp),
            "ln" => Some(UnaryOp::Ln),
            "sqrt" => Some(UnaryOp::Sqrt),
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "tan" => Some(UnaryOp::Tan),
            "tanh" => Some(UnaryOp::Tanh),
            "sigmoid" => Some(UnaryOp::Sigmoid),
            _ => None,
        };
        if let Some(op) = func {
            if self.peek() != Some(b'(') {
                return Err(Error::syntax(
                    self.pos,
                    format!("function `{name}` requires parentheses"),
                ));
            }
            self.pos += 1;
            let arg = self.parse_expr()?;
            if self.peek() != Some(b')') {
                return Err(Error::syntax(self.pos, "expected `)`"));
            }
            self.pos += 1;
            return Ok(Expr::Unary(op, Box::new(arg)));
        }
        if !self.vars.contains(&name) {
            return Err(Error::UnknownVariable {
                name: name.to_string(),
                position: start,
            });
        }
        Ok(Expr::Var(name.to_string()))
    }
}

/// Value of a variable-free expression, e.g. `(1+2)` as an exponent.
fn constant_value(expr: &Expr) -> Option<f64> {
    if let Expr::Const(c) = expr {
        return Some(*c);
    }
    if !expr.variables().is_empty() {
        return None;
    }
    expr.eval(&Env::new()).ok()
}
