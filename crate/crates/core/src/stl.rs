//! Signal temporal logic formulas with integer-bounded intervals.
//!
//! Formulas are parsed from text against a declared state space and a
//! horizon. Predicates are normalized at parse time to `h(x) >= 0` form
//! (`h <= 0` becomes `-h >= 0`; strict and non-strict comparisons are
//! treated identically). Every disjunctive node (`||`, `F`, and `U`) gets
//! a stable pre-order `node_id`, which is how the smoothing weights of the
//! differentiable semantics are attached to the formula.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! phi     := and_phi ('||' and_phi)*
//! and_phi := until_phi ('&&' until_phi)*
//! until_phi := primary ('U[' int ',' int ']' primary)*
//! primary := 'G[' int ',' int ']' primary
//!          | 'F[' int ',' int ']' primary
//!          | '(' phi ')'
//!          | pred
//! pred    := expr cmp 0        with cmp in { >=, >, <=, < }
//! ```

use crate::error::{Error, Result};
use crate::expr::{parse_expr_prefix, Expr, UnaryOp};

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq)]
pub enum StlAst {
    /// Normalized predicate `h(x) >= 0`.
    Pred { h: Expr },
    And {
        left: Box<StlAst>,
        right: Box<StlAst>,
    },
    Or {
        left: Box<StlAst>,
        right: Box<StlAst>,
        node_id: NodeId,
    },
    Always {
        a: usize,
        b: usize,
        child: Box<StlAst>,
    },
    Eventually {
        a: usize,
        b: usize,
        child: Box<StlAst>,
        node_id: NodeId,
    },
    Until {
        a: usize,
        b: usize,
        left: Box<StlAst>,
        right: Box<StlAst>,
        node_id: NodeId,
    },
}

/// Shape of one disjunctive node, as reported to users and used to size
/// its smoothing-weight vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DisjKind {
    Or,
    Eventually,
    Until,
}

#[derive(Debug, Clone)]
pub struct DisjNode {
    pub node_id: NodeId,
    pub kind: DisjKind,
    /// Temporal window, absent for plain `||`.
    pub window: Option<(usize, usize)>,
    /// Required weight-vector length: 2 for `||`, `b - a + 1` otherwise.
    pub beta_len: usize,
    /// Canonical text of the subformula.
    pub text: String,
}

impl StlAst {
    /// Largest lookahead (in steps) the formula needs beyond its
    /// evaluation time.
    pub fn time_depth(&self) -> usize {
        match self {
            StlAst::Pred { .. } => 0,
            StlAst::And { left, right } => left.time_depth().max(right.time_depth()),
            StlAst::Or { left, right, .. } => left.time_depth().max(right.time_depth()),
            StlAst::Always { b, child, .. } | StlAst::Eventually { b, child, .. } => {
                b + child.time_depth()
            }
            StlAst::Until {
                b, left, right, ..
            } => b + left.time_depth().max(right.time_depth()),
        }
    }

    /// Disjunctive nodes in pre-order (ascending `node_id`).
    pub fn disjunctive_nodes(&self) -> Vec<DisjNode> {
        let mut out = Vec::new();
        self.collect_disjunctive(&mut out);
        out.sort_by_key(|n| n.node_id);
        out
    }

    fn collect_disjunctive(&self, out: &mut Vec<DisjNode>) {
        match self {
            StlAst::Pred { .. } => {}
            StlAst::And { left, right } => {
                left.collect_disjunctive(out);
                right.collect_disjunctive(out);
            }
            StlAst::Or {
                left,
                right,
                node_id,
            } => {
                out.push(DisjNode {
                    node_id: *node_id,
                    kind: DisjKind::Or,
                    window: None,
                    beta_len: 2,
                    text: self.to_text(),
                });
                left.collect_disjunctive(out);
                right.collect_disjunctive(out);
            }
            StlAst::Always { child, .. } => child.collect_disjunctive(out),
            StlAst::Eventually {
                a,
                b,
                child,
                node_id,
            } => {
                out.push(DisjNode {
                    node_id: *node_id,
                    kind: DisjKind::Eventually,
                    window: Some((*a, *b)),
                    beta_len: b - a + 1,
                    text: self.to_text(),
                });
                child.collect_disjunctive(out);
            }
            StlAst::Until {
                a,
                b,
                left,
                right,
                node_id,
            } => {
                out.push(DisjNode {
                    node_id: *node_id,
                    kind: DisjKind::Until,
                    window: Some((*a, *b)),
                    beta_len: b - a + 1,
                    text: self.to_text(),
                });
                left.collect_disjunctive(out);
                right.collect_disjunctive(out);
            }
        }
    }

    /// Canonical text form; reparsing yields the same tree with the same
    /// node ids.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.write(&mut s);
        s
    }

    fn precedence(&self) -> u8 {
        match self {
            StlAst::Or { .. } => 1,
            StlAst::And { .. } => 2,
            StlAst::Until { .. } => 3,
            _ => 4,
        }
    }

    fn write(&self, out: &mut String) {
        match self {
            StlAst::Pred { h } => {
                out.push_str(&h.to_text());
                out.push_str(" >= 0");
            }
            StlAst::And { left, right } => {
                Self::write_at(left, 2, out);
                out.push_str(" && ");
                Self::write_at_strict(right, 2, out);
            }
            StlAst::Or { left, right, .. } => {
                Self::write_at(left, 1, out);
                out.push_str(" || ");
                Self::write_at_strict(right, 1, out);
            }
            StlAst::Always { a, b, child } => {
                out.push_str(&format!("G[{a},{b}]("));
                child.write(out);
                out.push(')');
            }
            StlAst::Eventually { a, b, child, .. } => {
                out.push_str(&format!("F[{a},{b}]("));
                child.write(out);
                out.push(')');
            }
            StlAst::Until {
                a,
                b,
                left,
                right,
                ..
            } => {
                Self::write_at(left, 4, out);
                out.push_str(&format!(" U[{a},{b}] "));
                Self::write_at(right, 4, out);
            }
        }
    }

    fn write_at(node: &StlAst, prec: u8, out: &mut String) {
        if node.precedence() < prec {
            out.push('(');
            node.write(out);
            out.push(')');
        } else {
            node.write(out);
        }
    }

    fn write_at_strict(node: &StlAst, prec: u8, out: &mut String) {
        if node.precedence() <= prec {
            out.push('(');
            node.write(out);
            out.push(')');
        } else {
            node.write(out);
        }
    }
}

/// Parses an STL formula, validating intervals against `horizon` and
/// assigning pre-order node ids to disjunctive nodes.
pub fn parse_stl(text: &str, vars: &[&str], horizon: usize) -> Result<StlAst> {
    if horizon < 1 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let mut parser = StlParser {
        text,
        bytes: text.as_bytes(),
        vars,
        pos: 0,
        horizon,
    };
    let mut ast = parser.parse_or()?;
    parser.skip_ws();
    if parser.pos < parser.bytes.len() {
        return Err(Error::syntax(parser.pos, "unexpected trailing input"));
    }
    let mut next_id = 0;
    assign_ids(&mut ast, &mut next_id);
    Ok(ast)
}

fn assign_ids(node: &mut StlAst, next: &mut NodeId) {
    match node {
        StlAst::Pred { .. } => {}
        StlAst::And { left, right } => {
            assign_ids(left, next);
            assign_ids(right, next);
        }
        StlAst::Or {
            left,
            right,
            node_id,
        } => {
            *node_id = *next;
            *next += 1;
            assign_ids(left, next);
            assign_ids(right, next);
        }
        StlAst::Always { child, .. } => assign_ids(child, next),
        StlAst::Eventually { child, node_id, .. } => {
            *node_id = *next;
            *next += 1;
            assign_ids(child, next);
        }
        StlAst::Until {
            left,
            right,
            node_id,
            ..
        } => {
            *node_id = *next;
            *next += 1;
            assign_ids(left, next);
            assign_ids(right, next);
        }
    }
}

struct StlParser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    vars: &'a [&'a str],
    pos: usize,
    horizon: usize,
}

impl<'a> StlParser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn starts_with(&mut self, token: &str) -> bool {
        self.skip_ws();
        self.text[self.pos..].starts_with(token)
    }

    fn eat(&mut self, token: &str) -> bool {
        if self.starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<()> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(Error::syntax(self.pos, format!("expected `{token}`")))
        }
    }

    fn parse_or(&mut self) -> Result<StlAst> {
        let mut lhs = self.parse_and()?;
        while self.eat("||") {
            let rhs = self.parse_and()?;
            lhs = StlAst::Or {
                left: Box::new(lhs),
                right: Box::new(rhs),
                node_id: 0,
            };
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<StlAst> {
        let mut lhs = self.parse_until()?;
        while self.eat("&&") {
            let rhs = self.parse_until()?;
            lhs = StlAst::And {
                left: Box::new(lhs),
                right: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn parse_until(&mut self) -> Result<StlAst> {
        let mut lhs = self.parse_primary()?;
        loop {
            self.skip_ws();
            // `U` must be followed by `[` to be the until operator
            if self.bytes.get(self.pos) == Some(&b'U')
                && self.bytes.get(self.pos + 1) == Some(&b'[')
            {
                self.pos += 1;
                let (a, b) = self.parse_interval()?;
                let rhs = self.parse_primary()?;
                lhs = StlAst::Until {
                    a,
                    b,
                    left: Box::new(lhs),
                    right: Box::new(rhs),
                    node_id: 0,
                };
            } else {
                return Ok(lhs);
            }
        }
    }

    fn parse_primary(&mut self) -> Result<StlAst> {
        self.skip_ws();
        match self.bytes.get(self.pos) {
            Some(b'G') if self.bytes.get(self.pos + 1) == Some(&b'[') => {
                self.pos += 1;
                let (a, b) = self.parse_interval()?;
                let child = self.parse_primary()?;
                Ok(StlAst::Always {
                    a,
                    b,
                    child: Box::new(child),
                })
            }
            Some(b'F') if self.bytes.get(self.pos + 1) == Some(&b'[') => {
                self.pos += 1;
                let (a, b) = self.parse_interval()?;
                let child = self.parse_primary()?;
                Ok(StlAst::Eventually {
                    a,
                    b,
                    child: Box::new(child),
                    node_id: 0,
                })
            }
            Some(b'(') => {
                // `(` may open a subformula or a parenthesized predicate
                // expression; try the predicate first and backtrack
                let mark = self.pos;
                if let Ok(pred) = self.parse_pred() {
                    return Ok(pred);
                }
                self.pos = mark;
                self.pos += 1;
                let inner = self.parse_or()?;
                self.expect(")")?;
                Ok(inner)
            }
            _ => self.parse_pred(),
        }
    }

    fn parse_interval(&mut self) -> Result<(usize, usize)> {
        self.expect("[")?;
        let a = self.parse_int()?;
        self.expect(",")?;
        let b = self.parse_int()?;
        self.expect("]")?;
        if a > b || b > self.horizon {
            return Err(Error::BadInterval {
                a: a as i64,
                b: b as i64,
                horizon: self.horizon,
            });
        }
        Ok((a, b))
    }

    fn parse_int(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::syntax(self.pos, "expected an integer"));
        }
        self.text[start..self.pos]
            .parse::<usize>()
            .map_err(|_| Error::syntax(start, "integer out of range"))
    }

    fn parse_pred(&mut self) -> Result<StlAst> {
        self.skip_ws();
        let (expr, after) = parse_expr_prefix(self.text, self.pos, self.vars)?;
        self.pos = after;
        self.skip_ws();
        let flip = if self.eat(">=") || self.eat(">") {
            false
        } else if self.eat("<=") || self.eat("<") {
            true
        } else {
            return Err(Error::syntax(
                self.pos,
                "expected a comparison (`>=`, `>`, `<=`, `<`)",
            ));
        };
        let at = self.pos;
        let (rhs, after) = parse_expr_prefix(self.text, self.pos, &[])?;
        self.pos = after;
        let rhs_is_zero = matches!(rhs, Expr::Const(c) if c.abs() == 0.0);
        if !rhs_is_zero {
            return Err(Error::syntax(at, "predicates must compare against 0"));
        }
        let h = if flip {
            Expr::Unary(UnaryOp::Neg, Box::new(expr))
        } else {
            expr
        };
        Ok(StlAst::Pred { h })
    }
}
