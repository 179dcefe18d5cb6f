//! A small closed-form expression language for coefficients, disturbances
//! and nonlinear closures.
//!
//! Grammar (usual precedence, `^` right-associative):
//!
//! ```text
//! expr  := term (("+" | "-") term)*
//! term  := unary (("*" | "/") unary)*
//! unary := "-" unary | power
//! power := atom ("^" unary)?
//! atom  := number | ident | ident "(" expr ")" | "(" expr ")"
//! ```
//!
//! Variables are `x`, `t` and `u1`, `u2`, ... (1-based state components).
//! Constants `pi` and `e` are predefined. Functions: `sin cos tan exp log
//! sqrt abs atan tanh sinh cosh`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unexpected character {ch:?} at offset {pos} in {src:?}")]
    UnexpectedChar { ch: char, pos: usize, src: String },
    #[error("unexpected end of expression {0:?}")]
    UnexpectedEnd(String),
    #[error("unknown identifier {name:?} in {src:?}")]
    UnknownIdent { name: String, src: String },
    #[error("unknown function {name:?} in {src:?}")]
    UnknownFunction { name: String, src: String },
    #[error("trailing input at offset {pos} in {src:?}")]
    Trailing { pos: usize, src: String },
}

/// Independent variable an expression may refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    T,
    /// Zero-based state component.
    U(usize),
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
    Atan,
    Tanh,
    Sinh,
    Cosh,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "atan" => Func::Atan,
            "tanh" => Func::Tanh,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
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
            Func::Atan => "atan",
            Func::Tanh => "tanh",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
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
            Func::Atan => v.atan(),
            Func::Tanh => v.tanh(),
            Func::Sinh => v.sinh(),
            Func::Cosh => v.cosh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
    /// sign(v); only produced by differentiating `abs`.
    Sign(Box<Node>),
}

/// Values bound to the variables during evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env<'a> {
    pub x: f64,
    pub t: f64,
    pub u: &'a [f64],
}

impl<'a> Env<'a> {
    pub fn at_x(x: f64) -> Self {
        Env { x, t: 0.0, u: &[] }
    }

    pub fn at_t(t: f64) -> Self {
        Env { x: 0.0, t, u: &[] }
    }
}

/// A parsed expression. Cheap to clone; serializes as its source text.
#[derive(Clone)]
pub struct Expr {
    src: Arc<str>,
    root: Arc<Node>,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", &*self.src)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.src)
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let mut p = Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(ExprError::Trailing {
                pos: p.pos,
                src: src.to_string(),
            });
        }
        Ok(Expr {
            src: Arc::from(src),
            root: Arc::new(simplify(root)),
        })
    }

    pub fn constant(v: f64) -> Self {
        Expr {
            src: Arc::from(format!("{v:?}").as_str()),
            root: Arc::new(Node::Const(v)),
        }
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    pub fn eval(&self, env: &Env<'_>) -> f64 {
        eval(&self.root, env)
    }

    /// Returns `Some(c)` when the expression folds to a constant.
    pub fn as_constant(&self) -> Option<f64> {
        match &*self.root {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// True when the expression references `var`.
    pub fn depends_on(&self, var: Var) -> bool {
        depends(&self.root, var)
    }

    /// Highest state component referenced (1-based count), 0 when none.
    pub fn state_arity(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Var(Var::U(i)) => i + 1,
                Node::Const(_) | Node::Var(_) => 0,
                Node::Neg(a) | Node::Call(_, a) | Node::Sign(a) => walk(a),
                Node::Add(a, b)
                | Node::Sub(a, b)
                | Node::Mul(a, b)
                | Node::Div(a, b)
                | Node::Pow(a, b) => walk(a).max(walk(b)),
            }
        }
        walk(&self.root)
    }

    /// Symbolic derivative with respect to `var`.
    pub fn derivative(&self, var: Var) -> Expr {
        let d = simplify(diff(&self.root, var));
        Expr {
            src: Arc::from(format!("{}", Show(&d)).as_str()),
            root: Arc::new(d),
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.src)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Expr::parse(&s).map_err(serde::de::Error::custom)
    }
}

fn eval(n: &Node, env: &Env<'_>) -> f64 {
    match n {
        Node::Const(c) => *c,
        Node::Var(Var::X) => env.x,
        Node::Var(Var::T) => env.t,
        Node::Var(Var::U(i)) => env.u.get(*i).copied().unwrap_or(f64::NAN),
        Node::Neg(a) => -eval(a, env),
        Node::Add(a, b) => eval(a, env) + eval(b, env),
        Node::Sub(a, b) => eval(a, env) - eval(b, env),
        Node::Mul(a, b) => eval(a, env) * eval(b, env),
        Node::Div(a, b) => eval(a, env) / eval(b, env),
        Node::Pow(a, b) => {
            let base = eval(a, env);
            match **b {
                Node::Const(c) if c == c.trunc() && c.abs() < 64.0 => base.powi(c as i32),
                _ => base.powf(eval(b, env)),
            }
        }
        Node::Call(f, a) => f.apply(eval(a, env)),
        Node::Sign(a) => {
            let v = eval(a, env);
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

fn depends(n: &Node, var: Var) -> bool {
    match n {
        Node::Const(_) => false,
        Node::Var(v) => *v == var,
        Node::Neg(a) | Node::Call(_, a) | Node::Sign(a) => depends(a, var),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            depends(a, var) || depends(b, var)
        }
    }
}

fn c(v: f64) -> Box<Node> {
    Box::new(Node::Const(v))
}

fn b(n: Node) -> Box<Node> {
    Box::new(n)
}

fn diff(n: &Node, var: Var) -> Node {
    use Node::*;
    match n {
        Const(_) => Const(0.0),
        Var(v) => Const(if *v == var { 1.0 } else { 0.0 }),
        Neg(a) => Neg(b(diff(a, var))),
        Add(l, r) => Add(b(diff(l, var)), b(diff(r, var))),
        Sub(l, r) => Sub(b(diff(l, var)), b(diff(r, var))),
        Mul(l, r) => Add(
            b(Mul(b(diff(l, var)), r.clone())),
            b(Mul(l.clone(), b(diff(r, var)))),
        ),
        Div(l, r) => Div(
            b(Sub(
                b(Mul(b(diff(l, var)), r.clone())),
                b(Mul(l.clone(), b(diff(r, var)))),
            )),
            b(Pow(r.clone(), c(2.0))),
        ),
        Pow(base, exp) => {
            if !depends(exp, var) {
                // g f^(g-1) f'
                Mul(
                    b(Mul(exp.clone(), b(Pow(base.clone(), b(Sub(exp.clone(), c(1.0))))))),
                    b(diff(base, var)),
                )
            } else {
                // f^g (g' ln f + g f'/f)
                Mul(
                    b(n.clone()),
                    b(Add(
                        b(Mul(b(diff(exp, var)), b(Call(Func::Log, base.clone())))),
                        b(Div(b(Mul(exp.clone(), b(diff(base, var)))), base.clone())),
                    )),
                )
            }
        }
        Call(f, a) => {
            let inner = b(diff(a, var));
            let outer = match f {
                Func::Sin => Call(Func::Cos, a.clone()),
                Func::Cos => Neg(b(Call(Func::Sin, a.clone()))),
                Func::Tan => Add(c(1.0), b(Pow(b(Call(Func::Tan, a.clone())), c(2.0)))),
                Func::Exp => Call(Func::Exp, a.clone()),
                Func::Log => Div(c(1.0), a.clone()),
                Func::Sqrt => Div(c(0.5), b(Call(Func::Sqrt, a.clone()))),
                Func::Abs => Sign(a.clone()),
                Func::Atan => Div(c(1.0), b(Add(c(1.0), b(Pow(a.clone(), c(2.0)))))),
                Func::Tanh => Sub(c(1.0), b(Pow(b(Call(Func::Tanh, a.clone())), c(2.0)))),
                Func::Sinh => Call(Func::Cosh, a.clone()),
                Func::Cosh => Call(Func::Sinh, a.clone()),
            };
            Mul(b(outer), inner)
        }
        Sign(_) => Const(0.0),
    }
}

fn simplify(n: Node) -> Node {
    use Node::*;
    match n {
        Neg(a) => match simplify(*a) {
            Const(v) => Const(-v),
            Neg(inner) => *inner,
            other => Neg(b(other)),
        },
        Add(l, r) => match (simplify(*l), simplify(*r)) {
            (Const(x), Const(y)) => Const(x + y),
            (Const(z), o) | (o, Const(z)) if z == 0.0 => o,
            (l, r) => Add(b(l), b(r)),
        },
        Sub(l, r) => match (simplify(*l), simplify(*r)) {
            (Const(x), Const(y)) => Const(x - y),
            (o, Const(z)) if z == 0.0 => o,
            (Const(z), o) if z == 0.0 => Neg(b(o)),
            (l, r) => Sub(b(l), b(r)),
        },
        Mul(l, r) => match (simplify(*l), simplify(*r)) {
            (Const(x), Const(y)) => Const(x * y),
            (Const(z), _) | (_, Const(z)) if z == 0.0 => Const(0.0),
            (Const(o), e) | (e, Const(o)) if o == 1.0 => e,
            (l, r) => Mul(b(l), b(r)),
        },
        Div(l, r) => match (simplify(*l), simplify(*r)) {
            (Const(x), Const(y)) => Const(x / y),
            (Const(z), _) if z == 0.0 => Const(0.0),
            (e, Const(o)) if o == 1.0 => e,
            (l, r) => Div(b(l), b(r)),
        },
        Pow(l, r) => match (simplify(*l), simplify(*r)) {
            (Const(x), Const(y)) => Const(x.powf(y)),
            (_, Const(z)) if z == 0.0 => Const(1.0),
            (e, Const(o)) if o == 1.0 => e,
            (l, r) => Pow(b(l), b(r)),
        },
        Call(f, a) => match simplify(*a) {
            Const(v) => Const(f.apply(v)),
            other => Call(f, b(other)),
        },
        Sign(a) => Sign(b(simplify(*a))),
        other => other,
    }
}

struct Show<'a>(&'a Node);

impl fmt::Display for Show<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Node::Const(v) => {
                if *v < 0.0 {
                    write!(f, "({v:?})")
                } else {
                    write!(f, "{v:?}")
                }
            }
            Node::Var(Var::X) => f.write_str("x"),
            Node::Var(Var::T) => f.write_str("t"),
            Node::Var(Var::U(i)) => write!(f, "u{}", i + 1),
            Node::Neg(a) => write!(f, "(-{})", Show(a)),
            Node::Add(l, r) => write!(f, "({} + {})", Show(l), Show(r)),
            Node::Sub(l, r) => write!(f, "({} - {})", Show(l), Show(r)),
            Node::Mul(l, r) => write!(f, "({} * {})", Show(l), Show(r)),
            Node::Div(l, r) => write!(f, "({} / {})", Show(l), Show(r)),
            Node::Pow(l, r) => write!(f, "({} ^ {})", Show(l), Show(r)),
            Node::Call(func, a) => write!(f, "{}({})", func.name(), Show(a)),
            // sign(v) = v / |v| away from zero; printed form only
            Node::Sign(a) => write!(f, "({0} / abs({0}))", Show(a)),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn err_here(&self) -> ExprError {
        match self.src[self.pos..].chars().next() {
            Some(ch) => ExprError::UnexpectedChar {
                ch,
                pos: self.pos,
                src: self.src.to_string(),
            },
            None => ExprError::UnexpectedEnd(self.src.to_string()),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Node::Add(b(lhs), b(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Node::Sub(b(lhs), b(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Node::Mul(b(lhs), b(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Node::Div(b(lhs), b(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(b(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(b(base), b(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => Err(ExprError::UnexpectedEnd(self.src.to_string())),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err_here());
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(ch) if ch.is_ascii_digit() || ch == b'.' => self.number(),
            Some(ch) if ch.is_ascii_alphabetic() || ch == b'_' => {
                let start = self.pos;
                while self.pos < self.bytes.len()
                    && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = &self.src[start..self.pos];
                if self.peek() == Some(b'(') {
                    let func = Func::from_name(name).ok_or_else(|| ExprError::UnknownFunction {
                        name: name.to_string(),
                        src: self.src.to_string(),
                    })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(b')') {
                        return Err(self.err_here());
                    }
                    self.pos += 1;
                    return Ok(Node::Call(func, b(arg)));
                }
                self.ident(name)
            }
            Some(_) => Err(self.err_here()),
        }
    }

    fn ident(&self, name: &str) -> Result<Node, ExprError> {
        match name {
            "x" => Ok(Node::Var(Var::X)),
            "t" => Ok(Node::Var(Var::T)),
            "pi" => Ok(Node::Const(std::f64::consts::PI)),
            "e" => Ok(Node::Const(std::f64::consts::E)),
            _ => {
                if let Some(idx) = name.strip_prefix('u').and_then(|s| s.parse::<usize>().ok()) {
                    if idx >= 1 {
                        return Ok(Node::Var(Var::U(idx - 1)));
                    }
                }
                Err(ExprError::UnknownIdent {
                    name: name.to_string(),
                    src: self.src.to_string(),
                })
            }
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let bytes = self.bytes;
        while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < bytes.len() && (bytes[self.pos] == b'+' || bytes[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // `2e` is 2 times the constant e? Too ambiguous; back off.
                self.pos = save;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map(Node::Const)
            .map_err(|_| ExprError::UnexpectedChar {
                ch: self.src[start..].chars().next().unwrap_or('?'),
                pos: start,
                src: self.src.to_string(),
            })
    }
}
