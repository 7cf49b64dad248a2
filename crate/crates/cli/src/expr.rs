//! Arithmetic expressions over the state coordinates.
//!
//! Grammar: numbers, `x1`, `x2` (`x` is an alias of `x1`), `pi` or `π`,
//! `+ - * /`, right-associative `^`, unary minus, parentheses and the
//! functions `exp`, `cos`, `sin`, `abs`. Unary minus binds looser than `^`,
//! so `-x^2` is `-(x^2)`.

use std::fmt;

use rsbridge::drift::Potential;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message} at column {column}: `{token}`")]
pub struct ParseError {
    pub message: String,
    /// The offending token, or `end of input`.
    pub token: String,
    /// One-based character column.
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Cos,
    Sin,
    Abs,
    /// Only produced by differentiation.
    Ln,
    Sign,
}

impl Func {
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Exp => v.exp(),
            Func::Cos => v.cos(),
            Func::Sin => v.sin(),
            Func::Abs => v.abs(),
            Func::Ln => v.ln(),
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

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Cos => "cos",
            Func::Sin => "sin",
            Func::Abs => "abs",
            Func::Ln => "ln",
            Func::Sign => "sign",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Zero-based coordinate index.
    Var(usize),
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str, dim: usize) -> Result<Self, ParseError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, dim };
        let e = p.expr()?;
        match p.peek() {
            None => Ok(e),
            Some(t) => Err(p.error("unexpected token", t)),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => x[*i],
            Expr::Neg(e) => -e.eval(x),
            Expr::Call(f, e) => f.apply(e.eval(x)),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x), b.eval(x));
                match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Div => a / b,
                    Op::Pow => pow(a, b),
                }
            }
        }
    }

    /// Symbolic partial derivative along coordinate `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        use Expr::*;
        match self {
            Num(_) => Num(0.0),
            Var(i) => Num(if *i == var { 1.0 } else { 0.0 }),
            Neg(e) => neg(e.derivative(var)),
            Call(f, e) => {
                let inner = e.derivative(var);
                let outer = match f {
                    Func::Exp => self.clone(),
                    Func::Cos => neg(call(Func::Sin, (**e).clone())),
                    Func::Sin => call(Func::Cos, (**e).clone()),
                    Func::Abs => call(Func::Sign, (**e).clone()),
                    Func::Ln => div(Num(1.0), (**e).clone()),
                    Func::Sign => Num(0.0),
                };
                mul(outer, inner)
            }
            Bin(op, a, b) => {
                let (da, db) = (a.derivative(var), b.derivative(var));
                let (a, b) = ((**a).clone(), (**b).clone());
                match op {
                    Op::Add => add(da, db),
                    Op::Sub => sub(da, db),
                    Op::Mul => add(mul(da, b.clone()), mul(a, db)),
                    Op::Div => div(sub(mul(da, b.clone()), mul(a, db)), pow_e(b, Num(2.0))),
                    Op::Pow => match b {
                        Num(c) => mul(mul(Num(c), pow_e(a, Num(c - 1.0))), da),
                        _ => {
                            // d(a^b) = a^b (b' ln a + b a'/a)
                            let here = pow_e(a.clone(), b.clone());
                            mul(here, add(mul(db, call(Func::Ln, a.clone())), div(mul(b, da), a)))
                        }
                    },
                }
            }
        }
    }

    pub fn gradient(&self, dim: usize) -> Vec<Expr> {
        (0..dim).map(|v| self.derivative(v)).collect()
    }
}

/// Integer exponents go through `powi`, so negative bases stay finite.
fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

fn neg(e: Expr) -> Expr {
    match e {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        e => Expr::Neg(Box::new(e)),
    }
}

fn call(f: Func, e: Expr) -> Expr {
    match e {
        Expr::Num(v) => Expr::Num(f.apply(v)),
        e => Expr::Call(f, Box::new(e)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        (Expr::Num(z), e) | (e, Expr::Num(z)) if z == 0.0 => e,
        (a, b) => Expr::Bin(Op::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        (e, Expr::Num(z)) if z == 0.0 => e,
        (Expr::Num(z), e) if z == 0.0 => neg(e),
        (a, b) => Expr::Bin(Op::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        (Expr::Num(z), _) | (_, Expr::Num(z)) if z == 0.0 => Expr::Num(0.0),
        (Expr::Num(o), e) | (e, Expr::Num(o)) if o == 1.0 => e,
        (a, b) => Expr::Bin(Op::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Num(z), _) if z == 0.0 => Expr::Num(0.0),
        (e, Expr::Num(o)) if o == 1.0 => e,
        (a, b) => Expr::Bin(Op::Div, Box::new(a), Box::new(b)),
    }
}

fn pow_e(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (_, Expr::Num(z)) if z == 0.0 => Expr::Num(1.0),
        (e, Expr::Num(o)) if o == 1.0 => e,
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(pow(x, y)),
        (a, b) => Expr::Bin(Op::Pow, Box::new(a), Box::new(b)),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    Op::Add => "+",
                    Op::Sub => "-",
                    Op::Mul => "*",
                    Op::Div => "/",
                    Op::Pow => "^",
                };
                write!(f, "({a} {s} {b})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    text: String,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part, only when a digit or sign-digit follows the `e`
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| ParseError { message: "malformed number".into(), token: text.clone(), column })?;
            out.push(Token { tok: Tok::Num(v), text, column });
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Token { tok: Tok::Ident(text.clone()), text, column });
        } else if "+-*/^()".contains(c) {
            out.push(Token { tok: Tok::Sym(c), text: c.to_string(), column });
            i += 1;
        } else {
            return Err(ParseError { message: "unexpected character".into(), token: c.to_string(), column });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn error(&self, message: &str, t: &Token) -> ParseError {
        ParseError { message: message.into(), token: t.text.clone(), column: t.column }
    }

    fn end_error(&self, message: &str) -> ParseError {
        let column = self.tokens.last().map(|t| t.column + t.text.chars().count()).unwrap_or(1);
        ParseError { message: message.into(), token: "end of input".into(), column }
    }

    fn eat(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Token { tok: Tok::Sym(s), .. }) if *s == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                Op::Add
            } else if self.eat('-') {
                Op::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                Op::Mul
            } else if self.eat('/') {
                Op::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Expr::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(t) = self.peek().cloned() else {
            return Err(self.end_error("expected a value"));
        };
        self.pos += 1;
        match &t.tok {
            Tok::Num(v) => Ok(Expr::Num(*v)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(match self.peek() {
                        Some(u) => self.error("expected `)`", u),
                        None => self.end_error("expected `)`"),
                    });
                }
                Ok(e)
            }
            Tok::Sym(_) => Err(self.error("expected a value", &t)),
            Tok::Ident(name) => match name.as_str() {
                "pi" | "π" => Ok(Expr::Num(std::f64::consts::PI)),
                "x" | "x1" | "x₁" => self.var(0, &t),
                "x2" | "x₂" => self.var(1, &t),
                "exp" | "cos" | "sin" | "abs" => {
                    let f = match name.as_str() {
                        "exp" => Func::Exp,
                        "cos" => Func::Cos,
                        "sin" => Func::Sin,
                        _ => Func::Abs,
                    };
                    if !self.eat('(') {
                        return Err(match self.peek() {
                            Some(u) => self.error(&format!("expected `(` after `{name}`"), u),
                            None => self.end_error(&format!("expected `(` after `{name}`")),
                        });
                    }
                    let arg = self.expr()?;
                    if !self.eat(')') {
                        return Err(match self.peek() {
                            Some(u) => self.error("expected `)`", u),
                            None => self.end_error("expected `)`"),
                        });
                    }
                    Ok(Expr::Call(f, Box::new(arg)))
                }
                _ => Err(self.error("unknown identifier", &t)),
            },
        }
    }

    fn var(&self, i: usize, t: &Token) -> Result<Expr, ParseError> {
        if i >= self.dim {
            return Err(self.error(&format!("coordinate not available in {} dimension(s)", self.dim), t));
        }
        Ok(Expr::Var(i))
    }
}

/// A potential `V` given as an expression, with its symbolic gradient.
#[derive(Debug, Clone)]
pub struct ExprPotential {
    value: Expr,
    gradient: Vec<Expr>,
}

impl ExprPotential {
    pub fn parse(src: &str, dim: usize) -> Result<Self, ParseError> {
        let value = Expr::parse(src, dim)?;
        let gradient = value.gradient(dim);
        Ok(Self { value, gradient })
    }

    pub fn gradient_exprs(&self) -> &[Expr] {
        &self.gradient
    }
}

impl Potential for ExprPotential {
    fn value(&self, x: &[f64]) -> f64 {
        self.value.eval(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        for (g, e) in grad.iter_mut().zip(&self.gradient) {
            *g = e.eval(x);
        }
    }
}
