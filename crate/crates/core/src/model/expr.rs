//! Component expressions for user-defined fields.
//!
//! Grammar: `+ - * / ^`, parentheses, numbers, variables `x1..xn`,
//! `exp(e)` and `hill(e, p) = e^p / (1 + e^p)`. Jacobians use forward-mode
//! dual numbers.

use nalgebra::DMatrix;
use thiserror::Error;

use super::Rhs;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("component {component}: {msg} at offset {pos}")]
    Syntax { component: usize, pos: usize, msg: String },
    #[error("component {component}: variable x{index} out of range 1..={n}")]
    UnknownVariable { component: usize, index: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Exp(Box<Node>),
    Hill(Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, Copy)]
struct Dual {
    v: f64,
    d: f64,
}

impl Dual {
    fn c(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }

    fn pow(self, e: Dual) -> Dual {
        let v = self.v.powf(e.v);
        let mut d = 0.0;
        if self.d != 0.0 {
            d += e.v * self.v.powf(e.v - 1.0) * self.d;
        }
        if e.d != 0.0 {
            d += v * self.v.ln() * e.d;
        }
        Dual { v, d }
    }
}

impl Node {
    fn eval(&self, x: &[f64], seed: Option<usize>) -> Dual {
        match self {
            Node::Num(v) => Dual::c(*v),
            Node::Var(i) => Dual { v: x[*i], d: if seed == Some(*i) { 1.0 } else { 0.0 } },
            Node::Neg(a) => {
                let a = a.eval(x, seed);
                Dual { v: -a.v, d: -a.d }
            }
            Node::Add(a, b) => {
                let (a, b) = (a.eval(x, seed), b.eval(x, seed));
                Dual { v: a.v + b.v, d: a.d + b.d }
            }
            Node::Sub(a, b) => {
                let (a, b) = (a.eval(x, seed), b.eval(x, seed));
                Dual { v: a.v - b.v, d: a.d - b.d }
            }
            Node::Mul(a, b) => {
                let (a, b) = (a.eval(x, seed), b.eval(x, seed));
                Dual { v: a.v * b.v, d: a.d * b.v + a.v * b.d }
            }
            Node::Div(a, b) => {
                let (a, b) = (a.eval(x, seed), b.eval(x, seed));
                Dual { v: a.v / b.v, d: (a.d * b.v - a.v * b.d) / (b.v * b.v) }
            }
            Node::Pow(a, b) => a.eval(x, seed).pow(b.eval(x, seed)),
            Node::Exp(a) => {
                let a = a.eval(x, seed);
                let v = a.v.exp();
                Dual { v, d: v * a.d }
            }
            Node::Hill(a, p) => {
                let t = a.eval(x, seed).pow(p.eval(x, seed));
                let q = 1.0 + t.v;
                Dual { v: t.v / q, d: t.d / (q * q) }
            }
        }
    }

    fn vars(&self, out: &mut Vec<usize>) {
        match self {
            Node::Num(_) => {}
            Node::Var(i) => out.push(*i),
            Node::Neg(a) | Node::Exp(a) => a.vars(out),
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b)
            | Node::Hill(a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    component: usize,
    n: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax { component: self.component, pos: self.pos, msg: msg.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected '{}'", c as char))
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        let base = self.primary()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => self.err(format!("unexpected '{}'", c as char)),
            None => self.err("unexpected end of input"),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) => Ok(Node::Num(v)),
            Err(_) => {
                self.pos = start;
                self.err(format!("bad number '{text}'"))
            }
        }
    }

    fn ident(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match name {
            "exp" => {
                self.expect(b'(')?;
                let a = self.expr()?;
                self.expect(b')')?;
                Ok(Node::Exp(Box::new(a)))
            }
            "hill" => {
                self.expect(b'(')?;
                let a = self.expr()?;
                self.expect(b',')?;
                let p = self.expr()?;
                self.expect(b')')?;
                Ok(Node::Hill(Box::new(a), Box::new(p)))
            }
            _ if name.starts_with('x') && name.len() > 1 => {
                let digits = name[1..].trim_start_matches('_');
                let idx: usize = match digits.parse() {
                    Ok(v) => v,
                    Err(_) => {
                        self.pos = start;
                        return self.err(format!("unknown identifier '{name}'"));
                    }
                };
                if idx == 0 || idx > self.n {
                    return Err(ExprError::UnknownVariable { component: self.component, index: idx, n: self.n });
                }
                Ok(Node::Var(idx - 1))
            }
            _ => {
                self.pos = start;
                self.err(format!("unknown identifier '{name}'"))
            }
        }
    }
}

/// Parsed component expressions.
#[derive(Debug, Clone)]
pub struct ExprField {
    nodes: Vec<Node>,
    sources: Vec<String>,
}

impl ExprField {
    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    /// Variables (0-based) read by component `i`.
    pub fn dependencies(&self, i: usize) -> Vec<usize> {
        let mut v = Vec::new();
        self.nodes[i].vars(&mut v);
        v.sort_unstable();
        v.dedup();
        v
    }
}

pub fn parse_components(src: &[String]) -> Result<ExprField, ExprError> {
    let n = src.len();
    let mut nodes = Vec::with_capacity(n);
    for (i, s) in src.iter().enumerate() {
        let mut p = Parser { src: s.as_bytes(), pos: 0, component: i + 1, n };
        let node = p.expr()?;
        if p.peek().is_some() {
            return p.err("trailing input");
        }
        nodes.push(node);
    }
    Ok(ExprField { nodes, sources: src.to_vec() })
}

impl Rhs for ExprField {
    fn dim(&self) -> usize {
        self.nodes.len()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, node) in out.iter_mut().zip(&self.nodes) {
            *o = node.eval(x, None).v;
        }
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let n = self.dim();
        for (i, node) in self.nodes.iter().enumerate() {
            let deps = self.dependencies(i);
            for j in 0..n {
                jac[(i, j)] = if deps.contains(&j) { node.eval(x, Some(j)).d } else { 0.0 };
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(v: &[&str]) -> Result<ExprField, ExprError> {
        parse_components(&v.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    #[test]
    fn evaluates_with_precedence() {
        let f = parse(&["1 + 2*x1^2", "-x2^2", "exp(x3) / 2"]).unwrap();
        let mut out = [0.0; 3];
        f.eval(&[3.0, 2.0, 0.0], &mut out);
        assert_eq!(out, [19.0, -4.0, 0.5]);
    }

    #[test]
    fn hill_and_derivatives() {
        let f = parse(&["hill(x3, 2) - x1", "x1 - x2", "x2 - 1e-1*x3"]).unwrap();
        let mut out = [0.0; 3];
        f.eval(&[0.0, 0.0, 1.0], &mut out);
        assert_eq!(out[0], 0.5);
        assert!((out[2] + 0.1).abs() < 1e-15);
        let mut j = DMatrix::zeros(3, 3);
        f.jacobian(&[0.0, 0.0, 1.0], &mut j);
        // d/dx x^2/(1+x^2) = 2x/(1+x^2)^2
        assert!((j[(0, 2)] - 0.5).abs() < 1e-15);
        assert_eq!(j[(0, 0)], -1.0);
        assert_eq!(f.dependencies(0), vec![0, 2]);
    }

    #[test]
    fn reports_errors() {
        assert!(matches!(parse(&["x1 +", "x2", "x3"]), Err(ExprError::Syntax { component: 1, .. })));
        assert!(matches!(parse(&["x4", "x2", "x3"]), Err(ExprError::UnknownVariable { index: 4, .. })));
        assert!(matches!(parse(&["sin(x1)", "x2", "x3"]), Err(ExprError::Syntax { .. })));
    }
}
