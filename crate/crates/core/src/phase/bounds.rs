//! Registry of analytic curves bounding the critical curve.
//!
//! Curves are data: each entry holds an arithmetic expression in one
//! variable, parsed once when the registry is loaded. An entry is oriented
//! either as `p = f(q)` or as `q = f(p)`; the latter is inverted numerically
//! (it must be increasing in `p`).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("expression `{expr}`: {reason} at offset {at}")]
    Parse { expr: String, at: usize, reason: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("function `{name}` takes {expected} argument(s), got {got}")]
    Arity { name: String, expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var,
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sqrt,
    Ln,
    Log10,
    Exp,
    Abs,
    Pow,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sqrt" => (Func::Sqrt, 1),
            "ln" => (Func::Ln, 1),
            "log10" => (Func::Log10, 1),
            "exp" => (Func::Exp, 1),
            "abs" => (Func::Abs, 1),
            "pow" => (Func::Pow, 2),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }
}

/// Parsed one-variable arithmetic expression.
///
/// Supports `+ - * / ^`, parentheses, the constants `pi` and `e`, and the
/// functions `sqrt ln log10 exp abs pow min max`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    var: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str, var: &str) -> Result<Expr, BoundsError> {
        let mut parser = Parser {
            src: source,
            bytes: source.as_bytes(),
            pos: 0,
            var,
        };
        let root = parser.expr()?;
        parser.skip_ws();
        if parser.pos != parser.bytes.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        Ok(Expr {
            source: source.to_string(),
            var: var.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn variable(&self) -> &str {
        &self.var
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval(&self.root, x)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn eval(node: &Node, x: f64) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var => x,
        Node::Neg(a) => -eval(a, x),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x), eval(b, x));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' => a / b,
                _ => a.powf(b),
            }
        }
        Node::Call(func, args) => {
            let a = eval(&args[0], x);
            match func {
                Func::Sqrt => a.sqrt(),
                Func::Ln => a.ln(),
                Func::Log10 => a.log10(),
                Func::Exp => a.exp(),
                Func::Abs => a.abs(),
                Func::Pow => a.powf(eval(&args[1], x)),
                Func::Min => a.min(eval(&args[1], x)),
                Func::Max => a.max(eval(&args[1], x)),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    var: &'a str,
}

impl Parser<'_> {
    fn error(&self, reason: &str) -> BoundsError {
        BoundsError::Parse {
            expr: self.src.to_string(),
            at: self.pos,
            reason: reason.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, BoundsError> {
        let mut lhs = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op as char, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, BoundsError> {
        let mut lhs = self.unary()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op as char, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, BoundsError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    // `^` is right-associative and binds tighter than unary minus on its left.
    fn power(&mut self) -> Result<Node, BoundsError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Node::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, BoundsError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of expression")),
        }
    }

    fn number(&mut self) -> Result<Node, BoundsError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && (self.bytes[self.pos].is_ascii_digit() || self.bytes[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        self.src[start..self.pos]
            .parse()
            .map(Node::Num)
            .map_err(|_| BoundsError::Parse {
                expr: self.src.to_string(),
                at: start,
                reason: "malformed number".into(),
            })
    }

    fn ident(&mut self) -> Result<Node, BoundsError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if self.eat(b'(') {
            let (func, arity) = Func::lookup(name).ok_or_else(|| BoundsError::UnknownIdentifier(name.to_string()))?;
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.error("expected `)`"));
            }
            if args.len() != arity {
                return Err(BoundsError::Arity {
                    name: name.to_string(),
                    expected: arity,
                    got: args.len(),
                });
            }
            return Ok(Node::Call(func, args));
        }
        match name {
            n if n == self.var => Ok(Node::Var),
            "pi" => Ok(Node::Num(std::f64::consts::PI)),
            "e" => Ok(Node::Num(std::f64::consts::E)),
            _ => Err(BoundsError::UnknownIdentifier(name.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Lower,
    Upper,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `p = f(q)`, expression in `q`.
    POfQ,
    /// `q = f(p)`, expression in `p`, increasing in `p`.
    QOfP,
}

/// One registered curve, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsEntry {
    pub name: String,
    pub kind: CurveKind,
    pub orientation: Orientation,
    pub expression: String,
    /// Range of the expression's variable over which the curve is stated.
    #[serde(default)]
    pub domain_min: Option<f64>,
    #[serde(default)]
    pub domain_max: Option<f64>,
    /// Where the formula comes from.
    #[serde(default)]
    pub provenance: String,
}

#[derive(Debug, Clone)]
struct Curve {
    entry: BoundsEntry,
    expr: Expr,
}

/// Parsed set of curves. An empty registry is valid.
#[derive(Debug, Clone, Default)]
pub struct BoundsRegistry {
    curves: Vec<Curve>,
}

/// Upper end of the search for `p` when inverting a `q = f(p)` curve.
const INVERSION_P_MAX: f64 = 1e6;

impl BoundsRegistry {
    pub fn new(entries: Vec<BoundsEntry>) -> Result<Self, BoundsError> {
        let curves = entries
            .into_iter()
            .map(|entry| {
                let var = match entry.orientation {
                    Orientation::POfQ => "q",
                    Orientation::QOfP => "p",
                };
                let expr = Expr::parse(&entry.expression, var)?;
                Ok(Curve { entry, expr })
            })
            .collect::<Result<_, BoundsError>>()?;
        Ok(BoundsRegistry { curves })
    }

    pub fn entries(&self) -> impl Iterator<Item = &BoundsEntry> {
        self.curves.iter().map(|c| &c.entry)
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }
}

fn in_domain(entry: &BoundsEntry, x: f64) -> bool {
    entry.domain_min.is_none_or(|lo| x >= lo) && entry.domain_max.is_none_or(|hi| x <= hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub name: String,
    pub kind: CurveKind,
    /// Bound on the critical `p` at the requested `q`.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsEvaluation {
    pub q: f64,
    pub values: Vec<BoundValue>,
    /// Entries skipped, and lower/upper pairs found out of order.
    pub notices: Vec<String>,
    /// Every evaluated lower bound lies at or below every upper bound.
    pub ordered: bool,
}

impl BoundsEvaluation {
    /// Tightest `[lower, upper]` window; `None` on a side with no bound.
    pub fn window(&self) -> (Option<f64>, Option<f64>) {
        let lower = self
            .values
            .iter()
            .filter(|v| v.kind == CurveKind::Lower)
            .map(|v| v.p)
            .reduce(f64::max);
        let upper = self
            .values
            .iter()
            .filter(|v| v.kind == CurveKind::Upper)
            .map(|v| v.p)
            .reduce(f64::min);
        (lower, upper)
    }
}

/// Solves `f(p) = q` for increasing `f` by bisection on `[lo, hi]`.
fn invert(expr: &Expr, q: f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let (flo, fhi) = (expr.eval(lo) - q, expr.eval(hi) - q);
    if !(flo.is_finite() && fhi.is_finite()) || flo > 0.0 || fhi < 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expr.eval(mid) - q < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Evaluates every registered curve at `q` as a bound on the critical `p`.
pub fn evaluate_bounds(registry: &BoundsRegistry, q: f64) -> BoundsEvaluation {
    let mut values = Vec::new();
    let mut notices = Vec::new();
    for curve in &registry.curves {
        let entry = &curve.entry;
        let p = match entry.orientation {
            Orientation::POfQ => {
                if !in_domain(entry, q) {
                    notices.push(format!("{}: q = {q} outside the stated domain, skipped", entry.name));
                    continue;
                }
                Some(curve.expr.eval(q))
            }
            Orientation::QOfP => {
                let lo = entry.domain_min.unwrap_or(0.0);
                let hi = entry.domain_max.unwrap_or(INVERSION_P_MAX);
                invert(&curve.expr, q, lo, hi)
            }
        };
        match p {
            Some(p) if p.is_finite() => values.push(BoundValue {
                name: entry.name.clone(),
                kind: entry.kind,
                p,
            }),
            _ => notices.push(format!("{}: no finite value at q = {q}, skipped", entry.name)),
        }
    }
    let mut ordered = true;
    for lo in values.iter().filter(|v| v.kind == CurveKind::Lower) {
        for hi in values.iter().filter(|v| v.kind == CurveKind::Upper) {
            if lo.p > hi.p {
                ordered = false;
                notices.push(format!(
                    "lower bound {} = {} exceeds upper bound {} = {} at q = {q}",
                    lo.name, lo.p, hi.name, hi.p
                ));
            }
        }
    }
    BoundsEvaluation {
        q,
        values,
        notices,
        ordered,
    }
}
