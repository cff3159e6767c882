//! Scalar field descriptors: a small expression language over the point
//! variables `x1..xN`, `d`, `delta`, `delta_tilde` and `psi`, with symbolic
//! differentiation in the Cartesian coordinates.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdent(String),
    #[error("function `{name}` expects {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("expression is not differentiable in x{index}: {reason}")]
    NotDifferentiable { index: usize, reason: String },
}

/// A variable an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// Cartesian coordinate, zero-based (`x1` is `X(0)`).
    X(usize),
    D,
    Delta,
    DeltaTilde,
    Psi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Asin,
    Acos,
    Atan,
    Sinh,
    Cosh,
    Tanh,
    Sign,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "asin" => Func::Asin,
            "acos" => Func::Acos,
            "atan" => Func::Atan,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Asin => "asin",
            Func::Acos => "acos",
            Func::Atan => "atan",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Sign => "sign",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
            Func::Asin => v.asin(),
            Func::Acos => v.acos(),
            Func::Atan => v.atan(),
            Func::Sinh => v.sinh(),
            Func::Cosh => v.cosh(),
            Func::Tanh => v.tanh(),
            Func::Sign => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Expression tree. Build through [`Expr::parse`] or the smart constructors,
/// which fold constants as they go.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
}

/// Values bound to the variables during evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Vars<'a> {
    pub x: &'a [f64],
    pub d: f64,
    pub delta: f64,
    pub delta_tilde: f64,
    pub psi: f64,
}

impl<'a> Vars<'a> {
    pub fn coords(x: &'a [f64]) -> Self {
        Vars {
            x,
            d: f64::NAN,
            delta: f64::NAN,
            delta_tilde: f64::NAN,
            psi: f64::NAN,
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn eval(&self, v: &Vars<'_>) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(var) => match var {
                Var::X(i) => v.x.get(*i).copied().unwrap_or(f64::NAN),
                Var::D => v.d,
                Var::Delta => v.delta,
                Var::DeltaTilde => v.delta_tilde,
                Var::Psi => v.psi,
            },
            Expr::Neg(a) => -a.eval(v),
            Expr::Add(a, b) => a.eval(v) + b.eval(v),
            Expr::Sub(a, b) => a.eval(v) - b.eval(v),
            Expr::Mul(a, b) => a.eval(v) * b.eval(v),
            Expr::Div(a, b) => a.eval(v) / b.eval(v),
            Expr::Pow(a, b) => {
                let base = a.eval(v);
                match b.as_ref() {
                    Expr::Const(c) if c.fract() == 0.0 && c.abs() < 64.0 => base.powi(*c as i32),
                    other => base.powf(other.eval(v)),
                }
            }
            Expr::Call(f, a) => f.apply(a.eval(v)),
            Expr::Max(a, b) => a.eval(v).max(b.eval(v)),
            Expr::Min(a, b) => a.eval(v).min(b.eval(v)),
        }
    }

    /// Visits every variable occurrence.
    fn for_each_var(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(a) | Expr::Call(_, a) => a.for_each_var(f),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b)
            | Expr::Max(a, b)
            | Expr::Min(a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
        }
    }

    /// True when the expression only references Cartesian coordinates.
    pub fn uses_only_coordinates(&self) -> bool {
        let mut ok = true;
        self.for_each_var(&mut |v| {
            if !matches!(v, Var::X(_)) {
                ok = false;
            }
        });
        ok
    }

    pub fn references(&self, var: Var) -> bool {
        let mut hit = false;
        self.for_each_var(&mut |v| {
            if v == var {
                hit = true;
            }
        });
        hit
    }

    /// Largest coordinate index referenced (one-based), 0 if none.
    pub fn max_coordinate(&self) -> usize {
        let mut m = 0;
        self.for_each_var(&mut |v| {
            if let Var::X(i) = v {
                m = m.max(i + 1);
            }
        });
        m
    }

    /// Symbolic partial derivative with respect to `x_{index+1}`.
    pub fn derivative(&self, index: usize) -> Result<Expr, ExprError> {
        let not_diff = |reason: &str| ExprError::NotDifferentiable {
            index,
            reason: reason.to_string(),
        };
        Ok(match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(Var::X(i)) => Expr::Const(if *i == index { 1.0 } else { 0.0 }),
            Expr::Var(other) => {
                return Err(not_diff(&format!(
                    "depends on {} which has no symbolic derivative",
                    VarName(*other)
                )))
            }
            Expr::Neg(a) => neg(a.derivative(index)?),
            Expr::Add(a, b) => add(a.derivative(index)?, b.derivative(index)?),
            Expr::Sub(a, b) => sub(a.derivative(index)?, b.derivative(index)?),
            Expr::Mul(a, b) => add(
                mul(a.derivative(index)?, (**b).clone()),
                mul((**a).clone(), b.derivative(index)?),
            ),
            Expr::Div(a, b) => div(
                sub(
                    mul(a.derivative(index)?, (**b).clone()),
                    mul((**a).clone(), b.derivative(index)?),
                ),
                pow((**b).clone(), Expr::Const(2.0)),
            ),
            Expr::Pow(a, b) => {
                let da = a.derivative(index)?;
                match b.as_const() {
                    Some(c) => mul(
                        mul(Expr::Const(c), pow((**a).clone(), Expr::Const(c - 1.0))),
                        da,
                    ),
                    None => {
                        // d(a^b) = a^b (b' ln a + b a'/a)
                        let db = b.derivative(index)?;
                        mul(
                            self.clone(),
                            add(
                                mul(db, call(Func::Log, (**a).clone())),
                                div(mul((**b).clone(), da), (**a).clone()),
                            ),
                        )
                    }
                }
            }
            Expr::Call(f, a) => {
                let da = a.derivative(index)?;
                let u = (**a).clone();
                let outer = match f {
                    Func::Sin => call(Func::Cos, u),
                    Func::Cos => neg(call(Func::Sin, u)),
                    Func::Tan => div(Expr::Const(1.0), pow(call(Func::Cos, u), Expr::Const(2.0))),
                    Func::Exp => call(Func::Exp, u),
                    Func::Log => div(Expr::Const(1.0), u),
                    Func::Sqrt => div(Expr::Const(0.5), call(Func::Sqrt, u)),
                    Func::Asin => div(
                        Expr::Const(1.0),
                        call(Func::Sqrt, sub(Expr::Const(1.0), pow(u, Expr::Const(2.0)))),
                    ),
                    Func::Acos => div(
                        Expr::Const(-1.0),
                        call(Func::Sqrt, sub(Expr::Const(1.0), pow(u, Expr::Const(2.0)))),
                    ),
                    Func::Atan => div(Expr::Const(1.0), add(Expr::Const(1.0), pow(u, Expr::Const(2.0)))),
                    Func::Sinh => call(Func::Cosh, u),
                    Func::Cosh => call(Func::Sinh, u),
                    Func::Tanh => div(Expr::Const(1.0), pow(call(Func::Cosh, u), Expr::Const(2.0))),
                    Func::Abs | Func::Sign => {
                        if da.as_const() == Some(0.0) {
                            Expr::Const(0.0)
                        } else {
                            return Err(not_diff(&format!("`{}` is not smooth", f.name())));
                        }
                    }
                };
                mul(outer, da)
            }
            Expr::Max(a, b) | Expr::Min(a, b) => {
                let (da, db) = (a.derivative(index)?, b.derivative(index)?);
                if da.as_const() == Some(0.0) && db.as_const() == Some(0.0) {
                    Expr::Const(0.0)
                } else {
                    return Err(not_diff("`max`/`min` are not smooth"));
                }
            }
        })
    }

    /// Laplacian in the first `dim` coordinates.
    pub fn laplacian(&self, dim: usize) -> Result<Expr, ExprError> {
        let mut acc = Expr::Const(0.0);
        for i in 0..dim {
            acc = add(acc, self.derivative(i)?.derivative(i)?);
        }
        Ok(acc)
    }

    pub fn gradient(&self, dim: usize) -> Result<Vec<Expr>, ExprError> {
        (0..dim).map(|i| self.derivative(i)).collect()
    }
}

impl FromStr for Expr {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x + y),
        (Some(x), None) if x == 0.0 => b,
        (None, Some(y)) if y == 0.0 => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x - y),
        (Some(x), None) if x == 0.0 => neg(b),
        (None, Some(y)) if y == 0.0 => a,
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Const(0.0),
        (Some(x), None) if x == 1.0 => b,
        (None, Some(y)) if y == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x / y),
        (Some(x), None) if x == 0.0 => Expr::Const(0.0),
        (None, Some(y)) if y == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

pub fn pow(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x.powf(y)),
        (_, Some(y)) if y == 0.0 => Expr::Const(1.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

pub fn call(f: Func, a: Expr) -> Expr {
    match a.as_const() {
        Some(c) => Expr::Const(f.apply(c)),
        None => Expr::Call(f, Box::new(a)),
    }
}

struct VarName(Var);

impl fmt::Display for VarName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::D => write!(f, "d"),
            Var::Delta => write!(f, "delta"),
            Var::DeltaTilde => write!(f, "delta_tilde"),
            Var::Psi => write!(f, "psi"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(v) => write!(f, "{}", VarName(*v)),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
        }
    }
}

struct Parser<'s> {
    src: &'s [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError::Parse {
            pos: self.pos,
            msg: msg.to_string(),
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

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = add(lhs, self.term()?);
            } else if self.eat(b'-') {
                lhs = sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = mul(lhs, self.unary()?);
            } else if self.eat(b'/') {
                lhs = div(lhs, self.unary()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(b'-') {
            return Ok(neg(self.unary()?));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(pow(base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| ExprError::Parse {
                pos: start,
                msg: format!("bad number `{text}`"),
            })
    }

    fn ident(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .unwrap_or_default()
            .to_string();
        if self.eat(b'(') {
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.err("expected `)` after arguments"));
            }
            let arity = |expected: usize| -> Result<(), ExprError> {
                if args.len() == expected {
                    Ok(())
                } else {
                    Err(ExprError::Arity {
                        name: name.clone(),
                        expected,
                        got: args.len(),
                    })
                }
            };
            return match name.as_str() {
                "max" | "min" => {
                    arity(2)?;
                    let b = args.pop().unwrap();
                    let a = args.pop().unwrap();
                    Ok(match (name.as_str(), a.as_const(), b.as_const()) {
                        ("max", Some(x), Some(y)) => Expr::Const(x.max(y)),
                        ("min", Some(x), Some(y)) => Expr::Const(x.min(y)),
                        ("max", _, _) => Expr::Max(Box::new(a), Box::new(b)),
                        _ => Expr::Min(Box::new(a), Box::new(b)),
                    })
                }
                _ => {
                    let f = Func::from_name(&name).ok_or_else(|| ExprError::UnknownIdent(name.clone()))?;
                    arity(1)?;
                    Ok(call(f, args.pop().unwrap()))
                }
            };
        }
        Ok(match name.as_str() {
            "pi" => Expr::Const(std::f64::consts::PI),
            "e" => Expr::Const(std::f64::consts::E),
            "x" => Expr::Var(Var::X(0)),
            "y" => Expr::Var(Var::X(1)),
            "z" => Expr::Var(Var::X(2)),
            "d" => Expr::Var(Var::D),
            "delta" => Expr::Var(Var::Delta),
            "delta_tilde" => Expr::Var(Var::DeltaTilde),
            "psi" => Expr::Var(Var::Psi),
            other => match other.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                Some(i) if i >= 1 => Expr::Var(Var::X(i - 1)),
                _ => return Err(ExprError::UnknownIdent(other.to_string())),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn at(e: &Expr, x: &[f64]) -> f64 {
        e.eval(&Vars::coords(x))
    }

    #[test]
    fn parses_precedence_and_associativity() {
        let e = Expr::parse("1 + 2*3^2^1 - 4/2").unwrap();
        assert_eq!(e.as_const(), Some(1.0 + 18.0 - 2.0));
        let e = Expr::parse("-x1^2").unwrap();
        assert_eq!(at(&e, &[3.0]), -9.0);
        let e = Expr::parse("2e-3 * x").unwrap();
        assert_relative_eq!(at(&e, &[1.0]), 2e-3);
    }

    #[test]
    fn binds_point_variables() {
        let e = Expr::parse("d + 2*delta + 3*delta_tilde + 4*psi + x2").unwrap();
        let v = Vars {
            x: &[0.0, 5.0],
            d: 1.0,
            delta: 1.0,
            delta_tilde: 1.0,
            psi: 1.0,
        };
        assert_eq!(e.eval(&v), 15.0);
        assert!(!e.uses_only_coordinates());
        assert!(e.references(Var::Psi));
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Expr::parse("foo + 1"), Err(ExprError::UnknownIdent(_))));
        assert!(matches!(Expr::parse("sin(1, 2)"), Err(ExprError::Arity { .. })));
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 +").is_err());
    }

    #[test]
    fn exponential_weight_potential_terms() {
        // p = exp(x1 - 2 x2): grad p = (1, -2) p, lap p = 5 p
        let p = Expr::parse("exp(x1 - 2*x2)").unwrap();
        let lap = p.laplacian(2).unwrap();
        let x = [0.3, -0.1];
        assert_relative_eq!(at(&lap, &x), 5.0 * at(&p, &x), max_relative = 1e-14);
    }

    #[test]
    fn nonsmooth_derivative_is_rejected() {
        let e = Expr::parse("abs(x1)").unwrap();
        assert!(e.derivative(0).is_err());
        let e = Expr::parse("delta^2").unwrap();
        assert!(e.derivative(0).is_err());
        // constant inside abs is fine
        let e = Expr::parse("abs(-2) * x1").unwrap();
        assert_eq!(at(&e.derivative(0).unwrap(), &[0.0]), 2.0);
    }

    #[test]
    fn display_round_trips() {
        let e = Expr::parse("sin(x1)^2 / (1 + max(x2, -0.5))").unwrap();
        let again = Expr::parse(&e.to_string()).unwrap();
        let x = [0.4, 0.2];
        assert_eq!(at(&e, &x), at(&again, &x));
    }

    proptest! {
        #[test]
        fn symbolic_derivative_matches_central_difference(a in -2.0f64..2.0, b in -2.0f64..2.0, x0 in 0.1f64..1.5) {
            let src = format!("({a})*sin(x1)*exp(({b})*x1) + x1^3/(1 + x1^2) + sqrt(x1)");
            let e = Expr::parse(&src).unwrap();
            let de = e.derivative(0).unwrap();
            let h = 1e-5;
            let fd = (at(&e, &[x0 + h]) - at(&e, &[x0 - h])) / (2.0 * h);
            prop_assert!((at(&de, &[x0]) - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}
