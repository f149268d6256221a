//! Minimal expression language for planar potentials and fields.
//!
//! Grammar: `+ - * / ^`, parentheses, `theta(...)`, the variables `x` and
//! `y`, and numeric literals. `^` is right associative and binds tighter
//! than unary minus, so `-x^2` is `-(x^2)`.

use std::fmt;

use crate::error::{Error, Result};
use crate::structures::BumpFunction;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    Y,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Theta(Box<Expr>),
    /// Derivative of the bump; produced by differentiation, not parseable.
    ThetaPrime(Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { chars: src.chars().collect(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.chars.len() {
            return Err(p.error(format!("unexpected '{}'", p.chars[p.pos])));
        }
        Ok(e)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let theta = BumpFunction;
        match self {
            Expr::Num(v) => *v,
            Expr::X => x,
            Expr::Y => y,
            Expr::Neg(a) => -a.eval(x, y),
            Expr::Add(a, b) => a.eval(x, y) + b.eval(x, y),
            Expr::Sub(a, b) => a.eval(x, y) - b.eval(x, y),
            Expr::Mul(a, b) => a.eval(x, y) * b.eval(x, y),
            Expr::Div(a, b) => a.eval(x, y) / b.eval(x, y),
            Expr::Pow(a, b) => pow(a.eval(x, y), b.eval(x, y)),
            Expr::Theta(a) => theta.eval(a.eval(x, y)),
            Expr::ThetaPrime(a) => theta.derivative(a.eval(x, y)),
        }
    }

    fn depends_on_vars(&self) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::X | Expr::Y => true,
            Expr::Neg(a) | Expr::Theta(a) | Expr::ThetaPrime(a) => a.depends_on_vars(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.depends_on_vars() || b.depends_on_vars()
            }
        }
    }

    /// Symbolic partial derivative. Exponents must be constant and the
    /// bump may be differentiated once.
    pub fn diff(&self, var: Var) -> Result<Expr> {
        let d = |e: &Expr| e.diff(var);
        Ok(match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::X => Expr::Num(if var == Var::X { 1.0 } else { 0.0 }),
            Expr::Y => Expr::Num(if var == Var::Y { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(d(a)?),
            Expr::Add(a, b) => add(d(a)?, d(b)?),
            Expr::Sub(a, b) => sub(d(a)?, d(b)?),
            Expr::Mul(a, b) => add(mul(d(a)?, (**b).clone()), mul((**a).clone(), d(b)?)),
            Expr::Div(a, b) => div(
                sub(mul(d(a)?, (**b).clone()), mul((**a).clone(), d(b)?)),
                mul((**b).clone(), (**b).clone()),
            ),
            Expr::Pow(a, b) => {
                if b.depends_on_vars() {
                    return Err(Error::Expression {
                        position: 0,
                        message: "cannot differentiate a power with a variable exponent".into(),
                    });
                }
                let c = b.eval(0.0, 0.0);
                mul(mul(Expr::Num(c), pow_expr((**a).clone(), Expr::Num(c - 1.0))), d(a)?)
            }
            Expr::Theta(a) => mul(Expr::ThetaPrime(a.clone()), d(a)?),
            Expr::ThetaPrime(_) => {
                return Err(Error::Expression {
                    position: 0,
                    message: "second derivatives of theta are not supported".into(),
                })
            }
        })
    }
}

fn pow(base: f64, exp: f64) -> f64 {
    if exp.fract() == 0.0 && exp.abs() < i32::MAX as f64 {
        base.powi(exp as i32)
    } else {
        base.powf(exp)
    }
}

fn is_num(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Num(n) if *n == v)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        a => Expr::Neg(Box::new(a)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    if is_num(&a, 0.0) {
        b
    } else if is_num(&b, 0.0) {
        a
    } else {
        Expr::Add(Box::new(a), Box::new(b))
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    if is_num(&b, 0.0) {
        a
    } else if is_num(&a, 0.0) {
        neg(b)
    } else {
        Expr::Sub(Box::new(a), Box::new(b))
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    if is_num(&a, 0.0) || is_num(&b, 0.0) {
        Expr::Num(0.0)
    } else if is_num(&a, 1.0) {
        b
    } else if is_num(&b, 1.0) {
        a
    } else {
        Expr::Mul(Box::new(a), Box::new(b))
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    if is_num(&a, 0.0) {
        Expr::Num(0.0)
    } else {
        Expr::Div(Box::new(a), Box::new(b))
    }
}

fn pow_expr(a: Expr, b: Expr) -> Expr {
    if is_num(&b, 0.0) {
        Expr::Num(1.0)
    } else if is_num(&b, 1.0) {
        a
    } else {
        Expr::Pow(Box::new(a), Box::new(b))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::X => write!(f, "x"),
            Expr::Y => write!(f, "y"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Theta(a) => write!(f, "theta({a})"),
            Expr::ThetaPrime(a) => write!(f, "theta'({a})"),
        }
    }
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Expression { position: self.pos, message: message.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn is_minus(c: char) -> bool {
        c == '-' || c == '\u{2212}'
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(c) if Self::is_minus(c) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some('*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some('/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(c) if Self::is_minus(c) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let ident: String = self.chars[start..self.pos].iter().collect();
                match ident.as_str() {
                    "x" => Ok(Expr::X),
                    "y" => Ok(Expr::Y),
                    "theta" => {
                        if self.peek() != Some('(') {
                            return Err(self.error("expected '(' after theta"));
                        }
                        self.pos += 1;
                        let arg = self.expr()?;
                        if self.peek() != Some(')') {
                            return Err(self.error("expected ')' closing theta"));
                        }
                        self.pos += 1;
                        Ok(Expr::Theta(Box::new(arg)))
                    }
                    other => {
                        self.pos = start;
                        Err(self.error(format!("unknown identifier '{other}'")))
                    }
                }
            }
            Some(c) => Err(self.error(format!("unexpected '{c}'"))),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.chars.len() && (self.chars[self.pos].is_ascii_digit() || self.chars[self.pos] == '.') {
            self.pos += 1;
        }
        // exponent part, e.g. 1e-3
        if self.pos < self.chars.len() && matches!(self.chars[self.pos], 'e' | 'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.chars.len() && matches!(self.chars[self.pos], '+' | '-') {
                self.pos += 1;
            }
            if self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
                while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>().map(Expr::Num).map_err(|_| Error::Expression {
            position: start,
            message: format!("malformed number '{text}'"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let e = Expr::parse("1 + 2 * x ^ 2").unwrap();
        assert_eq!(e.eval(3.0, 0.0), 19.0);
        let e = Expr::parse("-x^2").unwrap();
        assert_eq!(e.eval(3.0, 0.0), -9.0);
        let e = Expr::parse("2^3^2").unwrap();
        assert_eq!(e.eval(0.0, 0.0), 512.0);
        let e = Expr::parse("(x - y) / 4").unwrap();
        assert_eq!(e.eval(3.0, 1.0), 0.5);
        let e = Expr::parse("1.5e-1 * y").unwrap();
        assert!((e.eval(0.0, 2.0) - 0.3).abs() < 1e-15);
        let e = Expr::parse("x \u{2212} 1").unwrap();
        assert_eq!(e.eval(3.0, 0.0), 2.0);
    }

    #[test]
    fn theta_calls() {
        let e = Expr::parse("x*theta(y) + x^2*theta(1-y)").unwrap();
        assert_eq!(e.eval(1.0, 2.0), 1.0);
        assert_eq!(e.eval(3.0, -1.0), 9.0);
    }

    #[test]
    fn errors_carry_position() {
        match Expr::parse("x + * y") {
            Err(Error::Expression { position, .. }) => assert_eq!(position, 4),
            other => panic!("{other:?}"),
        }
        match Expr::parse("x + foo") {
            Err(Error::Expression { position, message }) => {
                assert_eq!(position, 4);
                assert!(message.contains("foo"));
            }
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("theta(x").is_err());
        assert!(Expr::parse("(x").is_err());
        assert!(Expr::parse("x y").is_err());
        assert!(Expr::parse("").is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let exprs = ["x*theta(y) + x^2*theta(1-y)", "x^3/(1+y^2)", "-(x - 2*y)^2 * theta(x)", "y / x"];
        let h = 1e-6;
        for src in exprs {
            let e = Expr::parse(src).unwrap();
            let dx = e.diff(Var::X).unwrap();
            let dy = e.diff(Var::Y).unwrap();
            for &(x, y) in &[(0.7, 0.3), (1.3, -0.4), (-0.5, 0.8)] {
                let fx = (e.eval(x + h, y) - e.eval(x - h, y)) / (2.0 * h);
                let fy = (e.eval(x, y + h) - e.eval(x, y - h)) / (2.0 * h);
                assert!((dx.eval(x, y) - fx).abs() < 1e-6 * (1.0 + fx.abs()), "{src} d/dx at ({x},{y})");
                assert!((dy.eval(x, y) - fy).abs() < 1e-6 * (1.0 + fy.abs()), "{src} d/dy at ({x},{y})");
            }
        }
    }

    #[test]
    fn variable_exponent_not_differentiable() {
        let e = Expr::parse("x^y").unwrap();
        assert!(e.diff(Var::X).is_err());
    }
}
