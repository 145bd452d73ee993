//! Expression language for metric components and perturbation fields.
//!
//! Grammar (whitespace is insignificant, angles are radians):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' exponent)?
//! exponent:= '-'? primary ('^' exponent)?      (must fold to a constant)
//! primary := number | ident | ident '(' expr ')' | '(' expr ')'
//! number  := digits ('.' digits?)? (('e' | 'E') ('+' | '-')? digits)?
//! ident   := [A-Za-z_][A-Za-z0-9_]*
//! ```
//!
//! `^` binds tighter than unary minus, so `-u^2` is `-(u^2)`, and it is
//! right-associative. Functions: `sin cos exp ln sqrt tanh abs`. The bare
//! identifier `pi` is the constant π. There is no implicit multiplication.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::jet::{pow_value, sin_cos_value, Jet2, JetError, DIVISION_GUARD};

/// Parse or evaluation failure, located at a character offset of the source.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message} at offset {position}: `{excerpt}`")]
pub struct ExprError {
    pub position: usize,
    pub message: String,
    pub excerpt: String,
}

impl ExprError {
    fn at(src: &str, position: usize, message: impl Into<String>) -> Self {
        let position = position.min(src.chars().count());
        Self {
            position,
            message: message.into(),
            excerpt: excerpt(src, position),
        }
    }

    fn bare(position: usize, message: impl Into<String>) -> Self {
        Self {
            position,
            message: message.into(),
            excerpt: String::new(),
        }
    }
}

fn excerpt(src: &str, position: usize) -> String {
    let chars: Vec<char> = src.chars().collect();
    let lo = position.saturating_sub(12);
    let hi = (position + 12).min(chars.len());
    chars[lo..hi].iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    /// Character offset into the source.
    pub pos: usize,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        let simple = match c {
            '+' => Some(TokenKind::Plus),
            '-' => Some(TokenKind::Minus),
            '*' => Some(TokenKind::Star),
            '/' => Some(TokenKind::Slash),
            '^' => Some(TokenKind::Caret),
            '(' => Some(TokenKind::LParen),
            ')' => Some(TokenKind::RParen),
            ',' => Some(TokenKind::Comma),
            _ => None,
        };
        if let Some(kind) = simple {
            tokens.push(Token { kind, pos: start });
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                } else {
                    return Err(ExprError::at(src, i, "malformed exponent in number"));
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text
                .parse::<f64>()
                .map_err(|_| ExprError::at(src, start, format!("malformed number `{text}`")))?;
            tokens.push(Token {
                kind: TokenKind::Number(value),
                pos: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident(chars[start..i].iter().collect()),
                pos: start,
            });
        } else {
            return Err(ExprError::at(src, start, format!("illegal character `{c}`")));
        }
    }
    Ok(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    /// Second operand is always a constant.
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Abs,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "exp" => Self::Exp,
            "ln" => Self::Ln,
            "sqrt" => Self::Sqrt,
            "tanh" => Self::Tanh,
            "abs" => Self::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sin => "sin",
            Self::Cos => "cos",
            Self::Exp => "exp",
            Self::Ln => "ln",
            Self::Sqrt => "sqrt",
            Self::Tanh => "tanh",
            Self::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone)]
pub enum ExprKind {
    Constant(f64),
    Variable(String),
    Unary(UnaryOp, Box<ExprNode>),
    Binary(BinaryOp, Box<ExprNode>, Box<ExprNode>),
    Call(Func, Box<ExprNode>),
}

/// Node of a parsed expression. Equality ignores source positions.
#[derive(Debug, Clone)]
pub struct ExprNode {
    pub kind: ExprKind,
    pub pos: usize,
}

impl PartialEq for ExprNode {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (ExprKind::Constant(a), ExprKind::Constant(b)) => a.to_bits() == b.to_bits(),
            (ExprKind::Variable(a), ExprKind::Variable(b)) => a == b,
            (ExprKind::Unary(o1, a), ExprKind::Unary(o2, b)) => o1 == o2 && a == b,
            (ExprKind::Binary(o1, a1, b1), ExprKind::Binary(o2, a2, b2)) => {
                o1 == o2 && a1 == a2 && b1 == b2
            }
            (ExprKind::Call(f1, a), ExprKind::Call(f2, b)) => f1 == f2 && a == b,
            _ => false,
        }
    }
}

impl ExprNode {
    pub fn constant(value: f64) -> Self {
        Self {
            kind: ExprKind::Constant(value),
            pos: 0,
        }
    }

    pub fn variable(name: impl Into<String>) -> Self {
        Self {
            kind: ExprKind::Variable(name.into()),
            pos: 0,
        }
    }

    pub fn binary(op: BinaryOp, a: ExprNode, b: ExprNode) -> Self {
        let pos = a.pos;
        Self {
            kind: ExprKind::Binary(op, Box::new(a), Box::new(b)),
            pos,
        }
    }

    pub fn neg(a: ExprNode) -> Self {
        let pos = a.pos;
        Self {
            kind: ExprKind::Unary(UnaryOp::Neg, Box::new(a)),
            pos,
        }
    }

    pub fn children(&self) -> Vec<&ExprNode> {
        match &self.kind {
            ExprKind::Constant(_) | ExprKind::Variable(_) => vec![],
            ExprKind::Unary(_, a) | ExprKind::Call(_, a) => vec![a],
            ExprKind::Binary(_, a, b) => vec![a, b],
        }
    }

    /// Is this literally the constant zero?
    pub fn is_zero(&self) -> bool {
        matches!(self.kind, ExprKind::Constant(c) if c == 0.0)
    }

    /// Every variable name referenced, in first-occurrence order.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        if let ExprKind::Variable(name) = &self.kind {
            if !out.contains(name) {
                out.push(name.clone());
            }
        }
        for c in self.children() {
            c.collect_vars(out);
        }
    }

    /// Replace variables by expressions.
    pub fn substitute(&self, map: &HashMap<String, ExprNode>) -> ExprNode {
        let kind = match &self.kind {
            ExprKind::Variable(name) => match map.get(name) {
                Some(e) => return e.clone(),
                None => ExprKind::Variable(name.clone()),
            },
            ExprKind::Constant(c) => ExprKind::Constant(*c),
            ExprKind::Unary(op, a) => ExprKind::Unary(*op, Box::new(a.substitute(map))),
            ExprKind::Binary(op, a, b) => {
                ExprKind::Binary(*op, Box::new(a.substitute(map)), Box::new(b.substitute(map)))
            }
            ExprKind::Call(f, a) => ExprKind::Call(*f, Box::new(a.substitute(map))),
        };
        ExprNode { kind, pos: self.pos }
    }

    pub fn rename(&self, map: &HashMap<String, String>) -> ExprNode {
        let subs = map
            .iter()
            .map(|(k, v)| (k.clone(), ExprNode::variable(v.clone())))
            .collect();
        self.substitute(&subs)
    }

    /// Check arities and that every variable is one of `allowed`.
    pub fn validate(&self, allowed: &[String]) -> Result<(), ExprError> {
        match &self.kind {
            ExprKind::Variable(name) if !allowed.contains(name) => Err(ExprError::bare(
                self.pos,
                format!("unknown variable `{name}` (allowed: {})", allowed.join(", ")),
            )),
            ExprKind::Binary(BinaryOp::Pow, a, b) => {
                if !matches!(b.kind, ExprKind::Constant(_)) {
                    return Err(ExprError::bare(b.pos, "exponent must be a constant"));
                }
                a.validate(allowed)
            }
            _ => self.children().into_iter().try_for_each(|c| c.validate(allowed)),
        }
    }

    /// Resolve variable names to slots of `names` for fast repeated evaluation.
    pub fn compile(&self, names: &[String]) -> Result<CompiledExpr, ExprError> {
        self.validate(names)?;
        Ok(CompiledExpr {
            root: Compiled::from_node(self, names),
        })
    }
}

pub fn parse(tokens: &[Token]) -> Result<ExprNode, ExprError> {
    parse_with_source(tokens, "")
}

/// Tokenize and parse in one step; errors carry a source excerpt.
pub fn parse_str(src: &str) -> Result<ExprNode, ExprError> {
    let tokens = tokenize(src)?;
    parse_with_source(&tokens, src)
}

fn parse_with_source(tokens: &[Token], src: &str) -> Result<ExprNode, ExprError> {
    let end = tokens
        .last()
        .map(|t| t.pos + 1)
        .unwrap_or(0)
        .max(src.chars().count());
    let mut parser = Parser {
        tokens,
        idx: 0,
        src,
        end,
    };
    if tokens.is_empty() {
        return Err(parser.error(0, "empty expression"));
    }
    let node = parser.expr()?;
    if let Some(t) = parser.peek() {
        return Err(parser.error(t.pos, format!("unexpected token {:?}", t.kind)));
    }
    Ok(node)
}

struct Parser<'a> {
    tokens: &'a [Token],
    idx: usize,
    src: &'a str,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.idx)
    }

    fn error(&self, pos: usize, msg: impl Into<String>) -> ExprError {
        if self.src.is_empty() {
            ExprError::bare(pos, msg)
        } else {
            ExprError::at(self.src, pos, msg)
        }
    }

    fn next(&mut self) -> Result<&Token, ExprError> {
        let end = self.end;
        match self.tokens.get(self.idx) {
            Some(t) => {
                self.idx += 1;
                Ok(t)
            }
            None => Err(self.error(end, "unexpected end of input")),
        }
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().is_some_and(|t| &t.kind == kind) {
            self.idx += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<ExprNode, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Plus) => BinaryOp::Add,
                Some(TokenKind::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            let pos = self.next()?.pos;
            let rhs = self.term()?;
            lhs = ExprNode {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                pos,
            };
        }
    }

    fn term(&mut self) -> Result<ExprNode, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Star) => BinaryOp::Mul,
                Some(TokenKind::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            let pos = self.next()?.pos;
            let rhs = self.unary()?;
            lhs = ExprNode {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                pos,
            };
        }
    }

    fn unary(&mut self) -> Result<ExprNode, ExprError> {
        if let Some(t) = self.peek() {
            if t.kind == TokenKind::Minus {
                let pos = t.pos;
                self.idx += 1;
                let inner = self.unary()?;
                return Ok(ExprNode {
                    kind: ExprKind::Unary(UnaryOp::Neg, Box::new(inner)),
                    pos,
                });
            }
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprNode, ExprError> {
        let base = self.primary()?;
        self.power_tail(base)
    }

    fn power_tail(&mut self, base: ExprNode) -> Result<ExprNode, ExprError> {
        let Some(t) = self.peek() else {
            return Ok(base);
        };
        if t.kind != TokenKind::Caret {
            return Ok(base);
        }
        let pos = t.pos;
        self.idx += 1;
        let exponent = self.exponent()?;
        let exp_pos = exponent.pos;
        let value = fold_constant(&exponent)
            .ok_or_else(|| self.error(exp_pos, "exponent must be a constant"))?;
        Ok(ExprNode {
            kind: ExprKind::Binary(
                BinaryOp::Pow,
                Box::new(base),
                Box::new(ExprNode {
                    kind: ExprKind::Constant(value),
                    pos: exp_pos,
                }),
            ),
            pos,
        })
    }

    fn exponent(&mut self) -> Result<ExprNode, ExprError> {
        if let Some(t) = self.peek() {
            if t.kind == TokenKind::Minus {
                let pos = t.pos;
                self.idx += 1;
                let inner = self.exponent()?;
                return Ok(ExprNode {
                    kind: ExprKind::Unary(UnaryOp::Neg, Box::new(inner)),
                    pos,
                });
            }
        }
        self.power()
    }

    fn primary(&mut self) -> Result<ExprNode, ExprError> {
        let tok = self.next()?.clone();
        match tok.kind {
            TokenKind::Number(v) => Ok(ExprNode {
                kind: ExprKind::Constant(v),
                pos: tok.pos,
            }),
            TokenKind::Ident(name) => {
                if self.eat(&TokenKind::LParen) {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| self.error(tok.pos, format!("unknown function `{name}`")))?;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(ExprNode {
                        kind: ExprKind::Call(func, Box::new(arg)),
                        pos: tok.pos,
                    })
                } else if name == "pi" {
                    Ok(ExprNode {
                        kind: ExprKind::Constant(std::f64::consts::PI),
                        pos: tok.pos,
                    })
                } else {
                    Ok(ExprNode {
                        kind: ExprKind::Variable(name),
                        pos: tok.pos,
                    })
                }
            }
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            other => Err(self.error(tok.pos, format!("unexpected token {other:?}"))),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        let end = self.end;
        match self.peek() {
            Some(t) if t.kind == TokenKind::RParen => {
                self.idx += 1;
                Ok(())
            }
            Some(t) => Err(self.error(t.pos, format!("expected `)`, found {:?}", t.kind))),
            None => Err(self.error(end, "unexpected end of input, expected `)`")),
        }
    }
}

fn fold_constant(node: &ExprNode) -> Option<f64> {
    if !node.variables().is_empty() {
        return None;
    }
    node.compile(&[]).ok()?.eval_real(&[]).ok()
}

// Printing. Binary nodes are parenthesized only where precedence requires it,
// and constants print in shortest round-trip form.

fn precedence(node: &ExprNode) -> u8 {
    match &node.kind {
        ExprKind::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
        ExprKind::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
        ExprKind::Unary(..) => 3,
        ExprKind::Binary(BinaryOp::Pow, ..) => 4,
        ExprKind::Constant(c) if *c < 0.0 || c.is_sign_negative() => 3,
        _ => 5,
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, node: &ExprNode, wrap: bool) -> fmt::Result {
    if wrap {
        write!(f, "({node})")
    } else {
        write!(f, "{node}")
    }
}

impl fmt::Display for ExprNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Constant(c) => {
                if c.is_sign_negative() {
                    write!(f, "-{:?}", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            ExprKind::Variable(name) => write!(f, "{name}"),
            ExprKind::Unary(UnaryOp::Neg, a) => {
                write!(f, "-")?;
                write_wrapped(f, a, precedence(a) < 3)
            }
            ExprKind::Call(func, a) => write!(f, "{}({a})", func.name()),
            ExprKind::Binary(op, a, b) => {
                let p = precedence(self);
                let sym = match op {
                    BinaryOp::Add => " + ",
                    BinaryOp::Sub => " - ",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                    BinaryOp::Pow => "^",
                };
                if *op == BinaryOp::Pow {
                    // right-assoc; the base must bind tighter than unary minus
                    write_wrapped(f, a, precedence(a) <= 4)?;
                    write!(f, "{sym}")?;
                    return write_wrapped(f, b, true);
                }
                write_wrapped(f, a, precedence(a) < p)?;
                write!(f, "{sym}")?;
                write_wrapped(f, b, precedence(b) <= p)
            }
        }
    }
}

/// Numbers an expression can be evaluated over: plain reals or [`Jet2`].
pub trait Scalar: Sized + Clone {
    fn lift(value: f64, nvars: usize) -> Self;
    fn value(&self) -> f64;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn div(&self, other: &Self) -> Result<Self, JetError>;
    fn neg(&self) -> Self;
    fn call(&self, func: Func) -> Result<Self, JetError>;
    fn powc(&self, k: f64) -> Result<Self, JetError>;
    /// Product with a constant, the same bits as `mul` by a lifted constant.
    fn scale(&self, c: f64) -> Self;
    /// Sum with a constant, the same bits as `add` of a lifted constant.
    fn offset(&self, c: f64) -> Self;
}

impl Scalar for f64 {
    fn lift(value: f64, _nvars: usize) -> Self {
        value
    }
    fn value(&self) -> f64 {
        *self
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn div(&self, other: &Self) -> Result<Self, JetError> {
        if other.abs() < DIVISION_GUARD {
            return Err(JetError::SingularDivision { value: *other });
        }
        Ok(self / other)
    }
    fn neg(&self) -> Self {
        -self
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn offset(&self, c: f64) -> Self {
        self + c
    }
    fn call(&self, func: Func) -> Result<Self, JetError> {
        let v = *self;
        Ok(match func {
            Func::Sin => sin_cos_value(v).0,
            Func::Cos => sin_cos_value(v).1,
            Func::Exp => v.exp(),
            Func::Ln if v <= 0.0 => return Err(JetError::Domain { func: "ln", value: v }),
            Func::Ln => v.ln(),
            Func::Sqrt if v <= 0.0 => return Err(JetError::Domain { func: "sqrt", value: v }),
            Func::Sqrt => v.sqrt(),
            Func::Tanh => v.tanh(),
            Func::Abs if v.abs() < DIVISION_GUARD => {
                return Err(JetError::Domain { func: "abs", value: v })
            }
            Func::Abs => v.abs(),
        })
    }
    fn powc(&self, k: f64) -> Result<Self, JetError> {
        pow_value(*self, k)
    }
}

impl Scalar for Jet2 {
    fn lift(value: f64, nvars: usize) -> Self {
        Jet2::constant(value, nvars).expect("variable count validated by caller")
    }
    fn value(&self) -> f64 {
        Jet2::value(self)
    }
    fn scale(&self, c: f64) -> Self {
        Jet2::scale(self, c)
    }
    fn offset(&self, c: f64) -> Self {
        Jet2::offset(self, c)
    }
    fn add(&self, other: &Self) -> Self {
        self.try_add(other).expect("operands share nvars")
    }
    fn sub(&self, other: &Self) -> Self {
        self.try_sub(other).expect("operands share nvars")
    }
    fn mul(&self, other: &Self) -> Self {
        self.try_mul(other).expect("operands share nvars")
    }
    fn div(&self, other: &Self) -> Result<Self, JetError> {
        self.try_div(other)
    }
    fn neg(&self) -> Self {
        Jet2::neg(self)
    }
    fn call(&self, func: Func) -> Result<Self, JetError> {
        match func {
            Func::Sin => Ok(self.sin()),
            Func::Cos => Ok(self.cos()),
            Func::Exp => Ok(self.exp()),
            Func::Ln => self.ln(),
            Func::Sqrt => self.sqrt(),
            Func::Tanh => Ok(self.tanh()),
            Func::Abs => self.abs_guarded(),
        }
    }
    fn powc(&self, k: f64) -> Result<Self, JetError> {
        self.pow_const(k)
    }
}

#[derive(Debug, Clone)]
enum Compiled {
    Constant(f64),
    Slot(usize),
    Neg(Box<Compiled>),
    Binary(BinaryOp, Box<Compiled>, Box<Compiled>, usize),
    Pow(Box<Compiled>, f64, usize),
    Call(Func, Box<Compiled>, usize),
    /// `c * a`
    Scale(f64, Box<Compiled>),
    /// `a + c`
    Offset(f64, Box<Compiled>),
}

impl Compiled {
    fn from_node(node: &ExprNode, names: &[String]) -> Self {
        match &node.kind {
            ExprKind::Constant(c) => Self::Constant(*c),
            ExprKind::Variable(name) => Self::Slot(
                names
                    .iter()
                    .position(|n| n == name)
                    .expect("validated before compiling"),
            ),
            ExprKind::Unary(UnaryOp::Neg, a) => match Self::from_node(a, names) {
                Self::Constant(c) => Self::Constant(-c),
                a => Self::Neg(Box::new(a)),
            },
            ExprKind::Binary(BinaryOp::Pow, a, b) => {
                let ExprKind::Constant(k) = b.kind else {
                    unreachable!("validated constant exponent")
                };
                match Self::from_node(a, names) {
                    Self::Constant(c) => match c.powc(k) {
                        Ok(v) => Self::Constant(v),
                        Err(_) => Self::Pow(Box::new(Self::Constant(c)), k, node.pos),
                    },
                    a => Self::Pow(Box::new(a), k, node.pos),
                }
            }
            ExprKind::Binary(op, a, b) => {
                Self::binary(*op, Self::from_node(a, names), Self::from_node(b, names), node.pos)
            }
            ExprKind::Call(f, a) => match Self::from_node(a, names) {
                Self::Constant(c) => match c.call(*f) {
                    Ok(v) => Self::Constant(v),
                    Err(_) => Self::Call(*f, Box::new(Self::Constant(c)), node.pos),
                },
                a => Self::Call(*f, Box::new(a), node.pos),
            },
        }
    }

    /// Folds constant operands. Every rewrite is exact in IEEE arithmetic, so
    /// the value channel is unchanged; division is left alone.
    fn binary(op: BinaryOp, a: Self, b: Self, pos: usize) -> Self {
        use BinaryOp::*;
        match (op, a, b) {
            (Add, Self::Constant(x), Self::Constant(y)) => Self::Constant(x + y),
            (Sub, Self::Constant(x), Self::Constant(y)) => Self::Constant(x - y),
            (Mul, Self::Constant(x), Self::Constant(y)) => Self::Constant(x * y),
            (Add, Self::Constant(c), e) | (Add, e, Self::Constant(c)) => Self::Offset(c, Box::new(e)),
            (Sub, e, Self::Constant(c)) => Self::Offset(-c, Box::new(e)),
            (Sub, Self::Constant(c), e) => Self::Offset(c, Box::new(Self::Neg(Box::new(e)))),
            (Mul, Self::Constant(c), e) | (Mul, e, Self::Constant(c)) => Self::Scale(c, Box::new(e)),
            (op, a, b) => Self::Binary(op, Box::new(a), Box::new(b), pos),
        }
    }

    fn eval<T: Scalar>(&self, values: &[T], nvars: usize) -> Result<T, ExprError> {
        let located = |pos: usize| move |e: JetError| ExprError::bare(pos, e.to_string());
        match self {
            Self::Constant(c) => Ok(T::lift(*c, nvars)),
            Self::Slot(i) => Ok(values[*i].clone()),
            Self::Neg(a) => Ok(a.eval(values, nvars)?.neg()),
            Self::Scale(c, a) => Ok(a.eval(values, nvars)?.scale(*c)),
            Self::Offset(c, a) => Ok(a.eval(values, nvars)?.offset(*c)),
            Self::Pow(a, k, pos) => a.eval(values, nvars)?.powc(*k).map_err(located(*pos)),
            Self::Call(f, a, pos) => a.eval(values, nvars)?.call(*f).map_err(located(*pos)),
            Self::Binary(op, a, b, pos) => {
                let x = a.eval(values, nvars)?;
                let y = b.eval(values, nvars)?;
                match op {
                    BinaryOp::Add => Ok(x.add(&y)),
                    BinaryOp::Sub => Ok(x.sub(&y)),
                    BinaryOp::Mul => Ok(x.mul(&y)),
                    BinaryOp::Div => x.div(&y).map_err(located(*pos)),
                    BinaryOp::Pow => unreachable!("compiled separately"),
                }
            }
        }
    }
}

/// An expression whose variables have been resolved to positional slots.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    root: Compiled,
}

impl CompiledExpr {
    pub fn eval<T: Scalar>(&self, values: &[T], nvars: usize) -> Result<T, ExprError> {
        self.root.eval(values, nvars)
    }

    pub fn eval_real(&self, values: &[f64]) -> Result<f64, ExprError> {
        self.root.eval(values, 1)
    }

    pub fn eval_jet(&self, values: &[Jet2]) -> Result<Jet2, ExprError> {
        let nvars = values.first().map(Jet2::nvars).unwrap_or(1);
        self.root.eval(values, nvars)
    }

    pub fn is_constant_zero(&self) -> bool {
        matches!(self.root, Compiled::Constant(c) if c == 0.0)
    }
}

/// Evaluate with named bindings. Unbound variables are an error.
pub fn eval_expr<T: Scalar>(
    e: &ExprNode,
    bindings: &HashMap<String, T>,
    nvars: usize,
) -> Result<T, ExprError> {
    let names: Vec<String> = e.variables();
    if let Some(missing) = names.iter().find(|n| !bindings.contains_key(*n)) {
        return Err(ExprError::bare(e.pos, format!("unbound variable `{missing}`")));
    }
    let values: Vec<T> = names.iter().map(|n| bindings[n].clone()).collect();
    e.compile(&names)?.eval(&values, nvars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::jet_var;
    use std::f64::consts::FRAC_PI_2;

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn tokens() {
        use TokenKind::*;
        assert_eq!(
            kinds("sin(u)^2"),
            vec![Ident("sin".into()), LParen, Ident("u".into()), RParen, Caret, Number(2.0)]
        );
        assert_eq!(kinds("1e-3*v"), vec![Number(0.001), Star, Ident("v".into())]);
        let err = tokenize("2 @ u").unwrap_err();
        assert_eq!(err.position, 2);
        assert!(tokenize("1e+").is_err());
        assert_eq!(kinds(".5"), vec![Number(0.5)]);
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_str("1 + 2*3").unwrap();
        assert_eq!(e, parse_str("1 + (2*3)").unwrap());
        assert_eq!(e.compile(&[]).unwrap().eval_real(&[]).unwrap(), 7.0);

        let neg = parse_str("-u^2").unwrap();
        match &neg.kind {
            ExprKind::Unary(UnaryOp::Neg, inner) => {
                assert!(matches!(inner.kind, ExprKind::Binary(BinaryOp::Pow, ..)))
            }
            other => panic!("expected negation, got {other:?}"),
        }
        // 2^3^2 = 2^9
        let p = parse_str("2^3^2").unwrap();
        assert_eq!(p.compile(&[]).unwrap().eval_real(&[]).unwrap(), 512.0);
        let q = parse_str("u^-2").unwrap();
        let v = q.compile(&["u".into()]).unwrap().eval_real(&[2.0]).unwrap();
        assert_eq!(v, 0.25);
        assert_eq!(parse_str("10 - 4 - 3").unwrap().compile(&[]).unwrap().eval_real(&[]).unwrap(), 3.0);
    }

    #[test]
    fn parse_errors() {
        let e = parse_str("sin(").unwrap_err();
        assert!(e.message.contains("unexpected end"), "{e}");
        assert!(parse_str("(1 + 2").is_err());
        assert!(parse_str("1 + 2)").is_err());
        assert!(parse_str("foo(1)").is_err());
        assert!(parse_str("u^v").is_err());
        assert!(parse_str("").is_err());
        assert!(parse_str("2 3").is_err());
    }

    #[test]
    fn validation_rejects_unknown_names() {
        let e = parse_str("a*u + w").unwrap();
        let err = e.validate(&["a".into(), "u".into()]).unwrap_err();
        assert!(err.message.contains("`w`"));
        assert_eq!(err.position, 6);
    }

    #[test]
    fn jet_evaluation_of_sin_squared() {
        // (sin^2)'' = 2 cos(2u) = -2 at u = pi/2.
        let e = parse_str("sin(u)^2").unwrap();
        let mut b = HashMap::new();
        b.insert("u".to_string(), jet_var(0, FRAC_PI_2, 1).unwrap());
        let j = eval_expr(&e, &b, 1).unwrap();
        assert_eq!(j.value(), 1.0);
        assert!(j.grad()[0].abs() < 1e-15);
        assert!((j.hess(0, 0) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn parameters_and_errors() {
        let e = parse_str("a*u").unwrap();
        let b: HashMap<String, f64> = [("a".to_string(), 2.0), ("u".to_string(), 3.0)].into();
        assert_eq!(eval_expr(&e, &b, 1).unwrap(), 6.0);

        let ln = parse_str("ln(u)").unwrap();
        let b: HashMap<String, f64> = [("u".to_string(), -1.0)].into();
        let err = eval_expr(&ln, &b, 1).unwrap_err();
        assert!(err.message.contains("ln"));

        let unbound: HashMap<String, f64> = HashMap::new();
        assert!(eval_expr(&e, &unbound, 1).unwrap_err().message.contains("unbound"));
    }

    #[test]
    fn printing_round_trips() {
        for src in [
            "-u^2",
            "(-u)^2",
            "1 - (2 - 3)",
            "a/(b*c)",
            "sin(theta)^2*cos(phi)",
            "2^3^2",
            "(2^3)^2",
            "-(a + b)",
            "1e-300*x",
            "exp(-x)/(1 + tanh(y))",
            "u^-2",
        ] {
            let e = parse_str(src).unwrap();
            let printed = e.to_string();
            assert_eq!(parse_str(&printed).unwrap(), e, "{src} -> {printed}");
        }
    }

    #[test]
    fn substitution() {
        let e = parse_str("sin(x)*y").unwrap();
        let map: HashMap<String, ExprNode> = [("x".to_string(), parse_str("2*t").unwrap())].into();
        let s = e.substitute(&map);
        assert_eq!(s, parse_str("sin(2*t)*y").unwrap());
        assert_eq!(s.variables(), vec!["t".to_string(), "y".to_string()]);
    }
}
