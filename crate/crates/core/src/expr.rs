//! Potential and test-function expressions.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = atom [ "^" [ "-" ] integer ] ;
//! atom    = number | "pi" | variable | func "(" expr ")" | "(" expr ")" ;
//! func    = "sin" | "cos" | "exp" | "log" ;
//! variable= "x" integer ;            (* 1-based: x1, x2, ... *)
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```
//!
//! A product `l*log(l)` whose two factors are the same affine function is
//! recognised as the Guillemin atom `l log l`. The grammar is closed under
//! differentiation, so [`Expr::derive`] never leaves it.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::jet::{derivs, Jet};

/// Highest derivative order that [`Expr::derive`] accepts.
pub const MAX_DERIVATIVE_ORDER: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte offset {offset} (column {}): {message}", offset + 1)]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("derivative order {0} exceeds the supported maximum of {MAX_DERIVATIVE_ORDER}")]
    OrderTooHigh(usize),
    #[error("expression uses x{needed} but the point has only {got} coordinates")]
    Arity { needed: usize, got: usize },
}

/// Affine function `c + sum_k a_k x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

impl Affine {
    fn to_expr(&self) -> Expr {
        let mut e = Expr::constant(self.constant);
        for (k, &a) in self.coeffs.iter().enumerate() {
            if a != 0.0 {
                e = Expr::add(e, Expr::mul(Expr::constant(a), Expr::var(k)));
            }
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, i32),
    Sin(Expr),
    Cos(Expr),
    Exp(Expr),
    Log(Expr),
    XLogX(Affine),
}

/// Immutable expression tree. Cloning is cheap (shared nodes).
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

/// Scalars an expression can be evaluated over.
pub trait ExprScalar: Clone {
    fn lift(&self, c: f64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn div(&self, o: &Self) -> Result<Self, ExprError>;
    fn powi(&self, n: i32) -> Result<Self, ExprError>;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Result<Self, ExprError>;
    fn xlogx(&self) -> Result<Self, ExprError>;
}

impl ExprScalar for f64 {
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn div(&self, o: &Self) -> Result<Self, ExprError> {
        if *o == 0.0 {
            return Err(ExprError::Domain("division by zero".into()));
        }
        Ok(self / o)
    }
    fn powi(&self, n: i32) -> Result<Self, ExprError> {
        if n < 0 && *self == 0.0 {
            return Err(ExprError::Domain("negative power of zero".into()));
        }
        Ok(f64::powi(*self, n))
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Result<Self, ExprError> {
        if *self <= 0.0 {
            return Err(ExprError::Domain(format!(
                "log of non-positive value {self}"
            )));
        }
        Ok(f64::ln(*self))
    }
    fn xlogx(&self) -> Result<Self, ExprError> {
        if *self <= 0.0 {
            return Err(ExprError::Domain(format!(
                "l log l with non-positive l = {self}"
            )));
        }
        Ok(self * f64::ln(*self))
    }
}

fn jet_real_positive(j: &Jet, what: &str) -> Result<f64, ExprError> {
    let v = j.value();
    if v.re <= 0.0 || v.im.abs() > 1e-12 * v.re.abs().max(1.0) {
        return Err(ExprError::Domain(format!(
            "{what} of non-positive value {v}"
        )));
    }
    Ok(v.re)
}

impl ExprScalar for Jet {
    fn lift(&self, c: f64) -> Self {
        Jet::constant(self.space(), c)
    }
    fn add(&self, o: &Self) -> Self {
        Jet::add(self, o)
    }
    fn sub(&self, o: &Self) -> Self {
        Jet::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        Jet::mul(self, o)
    }
    fn neg(&self) -> Self {
        self.scale(C64::new(-1.0, 0.0))
    }
    fn div(&self, o: &Self) -> Result<Self, ExprError> {
        let v = o.value();
        if v.norm() == 0.0 {
            return Err(ExprError::Domain("division by zero".into()));
        }
        Ok(Jet::mul(self, &o.compose(&derivs::recip(v, o.order()))))
    }
    fn powi(&self, n: i32) -> Result<Self, ExprError> {
        let v = self.value();
        if n < 0 && v.norm() == 0.0 {
            return Err(ExprError::Domain("negative power of zero".into()));
        }
        if n >= 0 {
            let mut acc = self.lift(1.0);
            for _ in 0..n {
                acc = Jet::mul(&acc, self);
            }
            return Ok(acc);
        }
        Ok(self.compose(&derivs::powi(v, n, self.order())))
    }
    fn sin(&self) -> Self {
        self.compose(&derivs::sin(self.value(), self.order()))
    }
    fn cos(&self) -> Self {
        self.compose(&derivs::cos(self.value(), self.order()))
    }
    fn exp(&self) -> Self {
        self.compose(&derivs::exp(self.value(), self.order()))
    }
    fn ln(&self) -> Result<Self, ExprError> {
        let v = jet_real_positive(self, "log")?;
        Ok(self.compose(&derivs::ln(C64::new(v, 0.0), self.order())))
    }
    fn xlogx(&self) -> Result<Self, ExprError> {
        let v = jet_real_positive(self, "l log l")?;
        Ok(self.compose(&derivs::xlogx(C64::new(v, 0.0), self.order())))
    }
}

#[allow(clippy::should_implement_trait)]
impl Expr {
    fn wrap(n: Node) -> Expr {
        Expr(Arc::new(n))
    }

    pub fn constant(c: f64) -> Expr {
        Expr::wrap(Node::Const(c))
    }

    /// Variable `x_{index+1}`.
    pub fn var(index: usize) -> Expr {
        Expr::wrap(Node::Var(index))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x + y),
            (Some(0.0), _) => b,
            (_, Some(0.0)) => a,
            _ => Expr::wrap(Node::Add(a, b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x - y),
            (_, Some(0.0)) => a,
            (Some(0.0), _) => Expr::neg(b),
            _ => Expr::wrap(Node::Sub(a, b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x * y),
            (Some(0.0), _) => Expr::constant(0.0),
            (_, Some(0.0)) => Expr::constant(0.0),
            (Some(1.0), _) => b,
            (_, Some(1.0)) => a,
            _ => Expr::wrap(Node::Mul(a, b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(0.0), _) => Expr::constant(0.0),
            (_, Some(1.0)) => a,
            _ => Expr::wrap(Node::Div(a, b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a.as_const() {
            Some(x) => Expr::constant(-x),
            None => Expr::wrap(Node::Neg(a)),
        }
    }

    pub fn powi(a: Expr, n: i32) -> Expr {
        match n {
            0 => Expr::constant(1.0),
            1 => a,
            _ => Expr::wrap(Node::Pow(a, n)),
        }
    }

    pub fn sin(a: Expr) -> Expr {
        Expr::wrap(Node::Sin(a))
    }

    pub fn cos(a: Expr) -> Expr {
        Expr::wrap(Node::Cos(a))
    }

    pub fn exp(a: Expr) -> Expr {
        Expr::wrap(Node::Exp(a))
    }

    pub fn log(a: Expr) -> Expr {
        Expr::wrap(Node::Log(a))
    }

    /// The Guillemin atom `l log l`.
    pub fn xlogx(l: Affine) -> Expr {
        Expr::wrap(Node::XLogX(l))
    }

    fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    /// True if the root node is the Guillemin atom.
    pub fn is_guillemin_atom(&self) -> bool {
        matches!(*self.0, Node::XLogX(_))
    }

    /// Number of nodes in the tree.
    pub fn node_count(&self) -> usize {
        1 + match &*self.0 {
            Node::Const(_) | Node::Var(_) | Node::XLogX(_) => 0,
            Node::Neg(a)
            | Node::Pow(a, _)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Exp(a)
            | Node::Log(a) => a.node_count(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.node_count() + b.node_count()
            }
        }
    }

    /// Number of variables referenced (highest index + 1).
    pub fn arity(&self) -> usize {
        match &*self.0 {
            Node::Const(_) => 0,
            Node::Var(i) => i + 1,
            Node::XLogX(l) => l
                .coeffs
                .iter()
                .rposition(|&c| c != 0.0)
                .map_or(0, |p| p + 1),
            Node::Neg(a)
            | Node::Pow(a, _)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Exp(a)
            | Node::Log(a) => a.arity(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.arity().max(b.arity())
            }
        }
    }

    /// Parse an expression in the documented grammar.
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Evaluate at a real point.
    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        if self.arity() > point.len() {
            return Err(ExprError::Arity {
                needed: self.arity(),
                got: point.len(),
            });
        }
        self.eval_generic(point)
    }

    /// Evaluate over any [`ExprScalar`]; `point` must cover every variable used.
    pub fn eval_generic<T: ExprScalar>(&self, point: &[T]) -> Result<T, ExprError> {
        let proto = point.first().ok_or(ExprError::Arity {
            needed: self.arity().max(1),
            got: 0,
        })?;
        self.eval_inner(point, proto)
    }

    fn eval_inner<T: ExprScalar>(&self, p: &[T], proto: &T) -> Result<T, ExprError> {
        Ok(match &*self.0 {
            Node::Const(c) => proto.lift(*c),
            Node::Var(i) => p.get(*i).cloned().ok_or(ExprError::Arity {
                needed: i + 1,
                got: p.len(),
            })?,
            Node::Neg(a) => a.eval_inner(p, proto)?.neg(),
            Node::Add(a, b) => a.eval_inner(p, proto)?.add(&b.eval_inner(p, proto)?),
            Node::Sub(a, b) => a.eval_inner(p, proto)?.sub(&b.eval_inner(p, proto)?),
            Node::Mul(a, b) => a.eval_inner(p, proto)?.mul(&b.eval_inner(p, proto)?),
            Node::Div(a, b) => a.eval_inner(p, proto)?.div(&b.eval_inner(p, proto)?)?,
            Node::Pow(a, n) => a.eval_inner(p, proto)?.powi(*n)?,
            Node::Sin(a) => a.eval_inner(p, proto)?.sin(),
            Node::Cos(a) => a.eval_inner(p, proto)?.cos(),
            Node::Exp(a) => a.eval_inner(p, proto)?.exp(),
            Node::Log(a) => a.eval_inner(p, proto)?.ln()?,
            Node::XLogX(l) => l.to_expr().eval_inner(p, proto)?.xlogx()?,
        })
    }

    /// Exact partial derivative of the given order along `axis` (0-based).
    pub fn derive(&self, axis: usize, order: usize) -> Result<Expr, ExprError> {
        if order > MAX_DERIVATIVE_ORDER {
            return Err(ExprError::OrderTooHigh(order));
        }
        let mut e = self.clone();
        for _ in 0..order {
            e = e.d(axis);
        }
        Ok(e)
    }

    fn d(&self, k: usize) -> Expr {
        match &*self.0 {
            Node::Const(_) => Expr::constant(0.0),
            Node::Var(i) => Expr::constant(if *i == k { 1.0 } else { 0.0 }),
            Node::Neg(a) => Expr::neg(a.d(k)),
            Node::Add(a, b) => Expr::add(a.d(k), b.d(k)),
            Node::Sub(a, b) => Expr::sub(a.d(k), b.d(k)),
            Node::Mul(a, b) => {
                Expr::add(Expr::mul(a.d(k), b.clone()), Expr::mul(a.clone(), b.d(k)))
            }
            Node::Div(a, b) => Expr::sub(
                Expr::div(a.d(k), b.clone()),
                Expr::div(Expr::mul(a.clone(), b.d(k)), Expr::powi(b.clone(), 2)),
            ),
            Node::Pow(a, n) => Expr::mul(
                Expr::mul(Expr::constant(*n as f64), Expr::powi(a.clone(), n - 1)),
                a.d(k),
            ),
            Node::Sin(a) => Expr::mul(Expr::cos(a.clone()), a.d(k)),
            Node::Cos(a) => Expr::neg(Expr::mul(Expr::sin(a.clone()), a.d(k))),
            Node::Exp(a) => Expr::mul(self.clone(), a.d(k)),
            Node::Log(a) => Expr::div(a.d(k), a.clone()),
            Node::XLogX(l) => {
                let c = l.coeffs.get(k).copied().unwrap_or(0.0);
                Expr::mul(
                    Expr::constant(c),
                    Expr::add(Expr::log(l.to_expr()), Expr::constant(1.0)),
                )
            }
        }
    }

    fn to_affine(&self) -> Option<Affine> {
        let mut out = Affine {
            coeffs: Vec::new(),
            constant: 0.0,
        };
        self.accumulate_affine(1.0, &mut out)?;
        Some(out)
    }

    fn accumulate_affine(&self, scale: f64, out: &mut Affine) -> Option<()> {
        match &*self.0 {
            Node::Const(c) => out.constant += scale * c,
            Node::Var(i) => {
                if out.coeffs.len() <= *i {
                    out.coeffs.resize(i + 1, 0.0);
                }
                out.coeffs[*i] += scale;
            }
            Node::Neg(a) => a.accumulate_affine(-scale, out)?,
            Node::Add(a, b) => {
                a.accumulate_affine(scale, out)?;
                b.accumulate_affine(scale, out)?;
            }
            Node::Sub(a, b) => {
                a.accumulate_affine(scale, out)?;
                b.accumulate_affine(-scale, out)?;
            }
            Node::Mul(a, b) => match (a.as_const(), b.as_const()) {
                (Some(c), _) => b.accumulate_affine(scale * c, out)?,
                (_, Some(c)) => a.accumulate_affine(scale * c, out)?,
                _ => return None,
            },
            Node::Div(a, b) => {
                let c = b.as_const()?;
                if c == 0.0 {
                    return None;
                }
                a.accumulate_affine(scale / c, out)?;
            }
            _ => return None,
        }
        Some(())
    }
}

impl fmt::Display for Expr {
    /// Canonical, fully parenthesised form; `parse(print(e))` rebuilds `e`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Const(c) => {
                if *c == PI {
                    write!(f, "pi")
                } else if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Pow(a, n) => write!(f, "({a})^{n}"),
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Log(a) => write!(f, "log({a})"),
            Node::XLogX(l) => {
                let mut s = format!("{:?}", l.constant);
                if l.constant < 0.0 {
                    s = format!("(-{:?})", -l.constant);
                }
                for (k, &a) in l.coeffs.iter().enumerate() {
                    if a != 0.0 {
                        let coef = if a < 0.0 {
                            format!("(-{:?})", -a)
                        } else {
                            format!("{a:?}")
                        };
                        s = format!("({s} + ({coef} * x{}))", k + 1);
                    }
                }
                write!(f, "({s} * log({s}))")
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: msg.to_string(),
        }
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

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        match self.peek() {
            Some(x) if x == c => {
                self.pos += 1;
                Ok(())
            }
            Some(_) => Err(self.err(&format!("expected `{}`", c as char))),
            None => Err(self.err(&format!(
                "unexpected end of input, expected `{}`",
                c as char
            ))),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::wrap(Node::Add(lhs, rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::wrap(Node::Sub(lhs, rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = guillemin_or_mul(lhs, rhs);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::wrap(Node::Div(lhs, rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(match *inner.0 {
                Node::Const(c) => Expr::constant(-c),
                _ => Expr::wrap(Node::Neg(inner)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let neg = if self.peek() == Some(b'-') {
                self.pos += 1;
                true
            } else {
                false
            };
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.err("expected integer exponent"));
            }
            let digits = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
            let n: i32 = digits.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                message: "exponent out of range".into(),
            })?;
            return Ok(Expr::wrap(Node::Pow(base, if neg { -n } else { n })));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let c = match self.peek() {
            Some(c) => c,
            None => return Err(self.err("unexpected end of input")),
        };
        if c == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() {
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                self.pos += 1;
            }
            let ident = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
            let func = match ident {
                "pi" => return Ok(Expr::constant(PI)),
                "sin" => Expr::sin as fn(Expr) -> Expr,
                "cos" => Expr::cos,
                "exp" => Expr::exp,
                "log" => Expr::log,
                _ => {
                    if let Some(digits) = ident.strip_prefix('x') {
                        if let Ok(i) = digits.parse::<usize>() {
                            if i >= 1 && !digits.starts_with('0') {
                                return Ok(Expr::var(i - 1));
                            }
                        }
                    }
                    return Err(ExprError::UnknownIdentifier {
                        name: ident.to_string(),
                        offset: start,
                    });
                }
            };
            self.expect(b'(')?;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(func(arg));
        }
        Err(self.err(&format!("unexpected character `{}`", c as char)))
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            let b = *p;
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
            *p > b
        };
        let mut p = self.pos;
        let int = digits(&mut p);
        let mut frac = false;
        if p < s.len() && s[p] == b'.' {
            p += 1;
            frac = digits(&mut p);
        }
        if !int && !frac {
            return Err(self.err("malformed number"));
        }
        if p < s.len() && (s[p] == b'e' || s[p] == b'E') {
            let mut q = p + 1;
            if q < s.len() && (s[q] == b'+' || s[q] == b'-') {
                q += 1;
            }
            if digits(&mut q) {
                p = q;
            }
        }
        self.pos = p;
        let text = std::str::from_utf8(&s[start..p]).expect("ascii");
        text.parse::<f64>()
            .map(Expr::constant)
            .map_err(|_| ExprError::Syntax {
                offset: start,
                message: "malformed number".into(),
            })
    }
}

fn guillemin_or_mul(a: Expr, b: Expr) -> Expr {
    let pair = match (&*a.0, &*b.0) {
        (_, Node::Log(inner)) => Some((&a, inner)),
        (Node::Log(inner), _) => Some((&b, inner)),
        _ => None,
    };
    if let Some((factor, inner)) = pair {
        if let (Some(l1), Some(l2)) = (factor.to_affine(), inner.to_affine()) {
            if affine_eq(&l1, &l2) && l1.coeffs.iter().any(|&c| c != 0.0) {
                return Expr::xlogx(l1);
            }
        }
    }
    Expr::wrap(Node::Mul(a, b))
}

fn affine_eq(a: &Affine, b: &Affine) -> bool {
    let n = a.coeffs.len().max(b.coeffs.len());
    let get = |v: &Vec<f64>, i: usize| v.get(i).copied().unwrap_or(0.0);
    a.constant == b.constant && (0..n).all(|i| get(&a.coeffs, i) == get(&b.coeffs, i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scaled_cosine() {
        let e = Expr::parse("0.05*cos(2*pi*x1)").unwrap();
        match &*e.0 {
            Node::Mul(a, b) => {
                assert_eq!(a.as_const(), Some(0.05));
                assert!(matches!(*b.0, Node::Cos(_)));
            }
            other => panic!("unexpected root {other:?}"),
        }
    }

    #[test]
    fn recognises_guillemin_atom() {
        assert!(Expr::parse("x1*log(x1)").unwrap().is_guillemin_atom());
        assert!(Expr::parse("(2-x1)*log(2-x1)").unwrap().is_guillemin_atom());
        assert!(!Expr::parse("x1*log(x2)").unwrap().is_guillemin_atom());
    }

    #[test]
    fn unbalanced_parenthesis_reports_offset() {
        match Expr::parse("cos(2*pi*") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 9),
            other => panic!("{other:?}"),
        }
        let msg = Expr::parse("cos(2*pi*").unwrap_err().to_string();
        assert!(msg.contains("column 10"), "{msg}");
    }

    #[test]
    fn unknown_identifier() {
        assert!(matches!(
            Expr::parse("tan(x1)"),
            Err(ExprError::UnknownIdentifier { ref name, offset: 0 }) if name == "tan"
        ));
        assert!(matches!(
            Expr::parse("y + 1"),
            Err(ExprError::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn derivative_examples() {
        let e = Expr::parse("cos(2*pi*x1)").unwrap();
        let d = e.derive(0, 1).unwrap();
        for &x in &[0.0, 0.1, 0.37] {
            let expect = -2.0 * PI * (2.0 * PI * x).sin();
            assert!((d.eval(&[x]).unwrap() - expect).abs() < 1e-13);
        }
        let g = Expr::parse("x1*log(x1)").unwrap();
        let dg = g.derive(0, 1).unwrap();
        assert!((dg.eval(&[2.0]).unwrap() - (2f64.ln() + 1.0)).abs() < 1e-15);
        let d2 = g.derive(0, 2).unwrap();
        assert!((d2.eval(&[0.5]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(
            Expr::parse("cos(2*pi*x1)").unwrap().eval(&[0.0]).unwrap(),
            1.0
        );
        assert_eq!(
            Expr::parse("x1*log(x1)").unwrap().eval(&[1.0]).unwrap(),
            0.0
        );
        assert!(matches!(
            Expr::parse("log(x1)").unwrap().eval(&[0.0]),
            Err(ExprError::Domain(_))
        ));
        assert!(matches!(
            Expr::parse("1/x1").unwrap().eval(&[0.0]),
            Err(ExprError::Domain(_))
        ));
    }

    #[test]
    fn order_cap_is_enforced() {
        let e = Expr::parse("x1^3").unwrap();
        assert!(e.derive(0, 8).is_ok());
        assert_eq!(e.derive(0, 9), Err(ExprError::OrderTooHigh(9)));
    }

    #[test]
    fn canonical_print_round_trips() {
        for s in [
            "0.05*cos(2*pi*x1) - x2/3",
            "-x1^-2 + exp(-0.5*x2)",
            "(2-x1)*log(2-x1) + 0.5*x1*log(x1)",
            "1e-3*sin(x1)*x2^4",
        ] {
            let e = Expr::parse(s).unwrap();
            let again = Expr::parse(&e.to_string()).unwrap();
            assert_eq!(e, again, "{s} -> {e}");
        }
    }

    #[test]
    fn jet_evaluation_matches_symbolic_derivatives() {
        let space = crate::jet::JetSpace::new(1, 6);
        let e = Expr::parse("x1*log(x1) + (2-x1)*log(2-x1) + 0.1*sin(3*x1)").unwrap();
        let x0 = 0.3;
        let jet = e.eval_generic(&[Jet::variable(&space, 0, x0)]).unwrap();
        for k in 0..=6u8 {
            let sym = e.derive(0, k as usize).unwrap().eval(&[x0]).unwrap();
            let got = jet.partial(&[k]).unwrap().re;
            assert!(
                (got - sym).abs() <= 1e-11 * sym.abs().max(1.0),
                "k={k}: {got} vs {sym}"
            );
        }
    }
}
