//! Closed-form scalar fields on the unit torus.
//!
//! Initial data is written in a small arithmetic language over the label
//! coordinates `x` and `y`:
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '·' | '/') unary)*
//! unary := ('-' | '+') unary | power
//! power := atom ('^' unary)?
//! atom  := number | 'pi' | 'π' | 'x' | 'y'
//!        | ('sin' | 'cos' | 'exp') '(' expr ')' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus, so `-x^2` is `-(x^2)`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("expression error at byte {pos}: {msg}")]
pub struct ExprError {
    pub pos: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    X,
    Y,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    PowI(Box<Node>, i32),
    Sin(Box<Node>),
    Cos(Box<Node>),
    Exp(Box<Node>),
}

impl Node {
    fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::X => x,
            Node::Y => y,
            Node::Neg(a) => -a.eval(x, y),
            Node::Add(a, b) => a.eval(x, y) + b.eval(x, y),
            Node::Sub(a, b) => a.eval(x, y) - b.eval(x, y),
            Node::Mul(a, b) => a.eval(x, y) * b.eval(x, y),
            Node::Div(a, b) => a.eval(x, y) / b.eval(x, y),
            Node::Pow(a, b) => a.eval(x, y).powf(b.eval(x, y)),
            Node::PowI(a, n) => a.eval(x, y).powi(*n),
            Node::Sin(a) => a.eval(x, y).sin(),
            Node::Cos(a) => a.eval(x, y).cos(),
            Node::Exp(a) => a.eval(x, y).exp(),
        }
    }

    fn uses(&self, var: &Node) -> bool {
        match self {
            Node::Const(_) => false,
            Node::X | Node::Y => self == var,
            Node::Neg(a) | Node::PowI(a, _) | Node::Sin(a) | Node::Cos(a) | Node::Exp(a) => {
                a.uses(var)
            }
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Pow(a, b) => a.uses(var) || b.uses(var),
        }
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }
}

/// A parsed expression in `x`, `y`. Constant subtrees are folded at parse time.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        let mut p = Parser {
            src: source,
            pos: 0,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != source.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.root.eval(x, y)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses_x(&self) -> bool {
        self.root.uses(&Node::X)
    }

    pub fn uses_y(&self) -> bool {
        self.root.uses(&Node::Y)
    }

    /// The folded value when the expression does not depend on `x` or `y`.
    pub fn constant_value(&self) -> Option<f64> {
        self.root.as_const()
    }

    pub fn is_identically_zero(&self) -> bool {
        self.constant_value() == Some(0.0)
    }
}

impl FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> ExprError {
        ExprError {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest().chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                let rhs = self.term()?;
                lhs = fold(Node::Add(Box::new(lhs), Box::new(rhs)));
            } else if self.eat('-') || self.eat('−') {
                let rhs = self.term()?;
                lhs = fold(Node::Sub(Box::new(lhs), Box::new(rhs)));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') || self.eat('·') {
                let rhs = self.unary()?;
                lhs = fold(Node::Mul(Box::new(lhs), Box::new(rhs)));
            } else if self.eat('/') {
                let rhs = self.unary()?;
                lhs = fold(Node::Div(Box::new(lhs), Box::new(rhs)));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat('-') || self.eat('−') {
            Ok(fold(Node::Neg(Box::new(self.unary()?))))
        } else if self.eat('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat('^') {
            let exponent = self.unary()?;
            if let Some(e) = exponent.as_const() {
                if e.fract() == 0.0 && e.abs() <= 64.0 {
                    return Ok(fold(Node::PowI(Box::new(base), e as i32)));
                }
            }
            Ok(fold(Node::Pow(Box::new(base), Box::new(exponent))))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(inner)
            }
            Some('π') => {
                self.pos += 'π'.len_utf8();
                Ok(Node::Const(std::f64::consts::PI))
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                let len = self
                    .rest()
                    .find(|ch: char| !ch.is_ascii_alphanumeric())
                    .unwrap_or(self.rest().len());
                let ident = &self.src[start..start + len];
                self.pos += len;
                match ident {
                    "x" => Ok(Node::X),
                    "y" => Ok(Node::Y),
                    "pi" => Ok(Node::Const(std::f64::consts::PI)),
                    "sin" | "cos" | "exp" => {
                        if !self.eat('(') {
                            return Err(self.error("expected '(' after function name"));
                        }
                        let arg = Box::new(self.expr()?);
                        if !self.eat(')') {
                            return Err(self.error("expected ')'"));
                        }
                        Ok(fold(match ident {
                            "sin" => Node::Sin(arg),
                            "cos" => Node::Cos(arg),
                            _ => Node::Exp(arg),
                        }))
                    }
                    _ => {
                        self.pos = start;
                        Err(self.error(&format!("unknown identifier '{ident}'")))
                    }
                }
            }
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut end = start;
        while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
            end += 1;
        }
        // optional exponent, e.g. 1e-3
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut k = end + 1;
            if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                k += 1;
            }
            if k < bytes.len() && bytes[k].is_ascii_digit() {
                while k < bytes.len() && bytes[k].is_ascii_digit() {
                    k += 1;
                }
                end = k;
            }
        }
        let text = &self.src[start..end];
        let value = text
            .parse::<f64>()
            .map_err(|_| self.error(&format!("bad number '{text}'")))?;
        self.pos = end;
        Ok(Node::Const(value))
    }
}

fn fold(node: Node) -> Node {
    let folded = match &node {
        Node::Neg(a) => a.as_const().map(|a| -a),
        Node::Add(a, b) => a.as_const().zip(b.as_const()).map(|(a, b)| a + b),
        Node::Sub(a, b) => a.as_const().zip(b.as_const()).map(|(a, b)| a - b),
        Node::Mul(a, b) => {
            // 0 * anything finite folds to 0, which lets `0*x` count as zero data
            match (a.as_const(), b.as_const()) {
                (Some(a), Some(b)) => Some(a * b),
                (Some(z), None) | (None, Some(z)) if z == 0.0 => Some(0.0),
                _ => None,
            }
        }
        Node::Div(a, b) => a.as_const().zip(b.as_const()).map(|(a, b)| a / b),
        Node::Pow(a, b) => a.as_const().zip(b.as_const()).map(|(a, b)| a.powf(b)),
        Node::PowI(a, n) => a.as_const().map(|a| a.powi(*n)),
        Node::Sin(a) => a.as_const().map(f64::sin),
        Node::Cos(a) => a.as_const().map(f64::cos),
        Node::Exp(a) => a.as_const().map(f64::exp),
        _ => None,
    };
    folded.map_or(node, Node::Const)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ev(s: &str, x: f64, y: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x, y)
    }

    #[test]
    fn precedence_and_unary_minus() {
        assert_eq!(ev("1 + 2*3", 0.0, 0.0), 7.0);
        assert_eq!(ev("-2^2", 0.0, 0.0), -4.0);
        assert_eq!(ev("2^-1", 0.0, 0.0), 0.5);
        assert_eq!(ev("2^3^2", 0.0, 0.0), 512.0);
        assert_eq!(ev("(1+2)·3", 0.0, 0.0), 9.0);
        assert_eq!(ev("8/2/2", 0.0, 0.0), 2.0);
        assert_eq!(ev("1.5e1 - 5", 0.0, 0.0), 10.0);
    }

    #[test]
    fn trig_and_variables() {
        let v = ev("cos(2*pi*x)*cos(2*π*y)", 0.0, 0.5);
        assert!((v + 1.0).abs() < 1e-15);
        let v = ev("-sin(2*pi*x)^2", 0.25, 0.0);
        assert!((v + 1.0).abs() < 1e-15);
        assert!((ev("exp(1)", 0.0, 0.0) - 1f64.exp()).abs() < 1e-15);
        assert!((ev("cos(4*pi*x)", 0.125, 0.3) - (PI / 2.0).cos()).abs() < 1e-15);
    }

    #[test]
    fn variable_usage_and_constants() {
        let e = Expr::parse("cos(4*pi*x)").unwrap();
        assert!(e.uses_x() && !e.uses_y());
        assert!(Expr::parse("0").unwrap().is_identically_zero());
        assert!(Expr::parse("0*sin(x)").unwrap().is_identically_zero());
        assert_eq!(Expr::parse("2*pi").unwrap().constant_value(), Some(2.0 * PI));
        assert!(Expr::parse("y").unwrap().uses_y());
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in ["", "1 +", "sin x", "cos(x", "z", "1 2", "tan(x)", "()"] {
            assert!(Expr::parse(bad).is_err(), "{bad:?} should not parse");
        }
    }
}
