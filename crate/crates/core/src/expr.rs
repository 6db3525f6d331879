//! Scalar expressions in the variables `x1..xd`.
//!
//! Expressions are parsed from text, differentiated symbolically and compiled
//! into flat instruction tapes that are evaluated without walking the tree.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := atom ('**' unary)?
//! atom    := number | 'x' digits | func '(' sum ')' | '(' sum ')'
//! ```
//!
//! `**` binds tighter than unary minus, so `-x1**2` is `-(x1**2)`, and it is
//! right-associative because its exponent is parsed as a `unary`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("variable index out of range: x{index} at position {pos} (dimension {dim})")]
    VariableOutOfRange { index: usize, dim: usize, pos: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Tan,
    Sqrt,
    Abs,
    /// Sign function; appears as the derivative of `abs`.
    Sign,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
            UnaryOp::Sign => "sign",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tan" => UnaryOp::Tan,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            "sign" => UnaryOp::Sign,
            _ => return None,
        })
    }

    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Neg => -a,
            UnaryOp::Exp => a.exp(),
            UnaryOp::Log => a.ln(),
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Tan => a.tan(),
            UnaryOp::Sqrt => a.sqrt(),
            UnaryOp::Abs => a.abs(),
            UnaryOp::Sign => {
                if a > 0.0 {
                    1.0
                } else if a < 0.0 {
                    -1.0
                } else if a == 0.0 {
                    0.0
                } else {
                    f64::NAN
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Pow => pow(a, b),
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "**",
        }
    }
}

#[inline]
fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

/// A node of the expression tree. Variables are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
}

impl Node {
    fn as_const(&self) -> Option<f64> {
        match self {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn is_const(&self, value: f64) -> bool {
        self.as_const() == Some(value)
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(i) => x[i - 1],
            Node::Unary(op, a) => op.apply(a.eval(x)),
            Node::Binary(op, a, b) => op.apply(a.eval(x), b.eval(x)),
        }
    }

    fn max_var(&self) -> usize {
        match self {
            Node::Const(_) => 0,
            Node::Var(i) => *i,
            Node::Unary(_, a) => a.max_var(),
            Node::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Unary(_, a) => a.depth(),
            Node::Binary(_, a, b) => a.depth().max(1 + b.depth()),
        }
    }
}

// Simplifying constructors: constant folding plus the additive and
// multiplicative identities. Folding is skipped when the result would not be
// finite so that domain errors still surface at evaluation time.

fn fold(value: f64) -> Option<Node> {
    value.is_finite().then_some(Node::Const(value))
}

fn neg(a: Node) -> Node {
    match a {
        Node::Const(c) => Node::Const(-c),
        Node::Unary(UnaryOp::Neg, inner) => *inner,
        other => Node::Unary(UnaryOp::Neg, Box::new(other)),
    }
}

fn unary(op: UnaryOp, a: Node) -> Node {
    if op == UnaryOp::Neg {
        return neg(a);
    }
    if let Some(c) = a.as_const() {
        if let Some(n) = fold(op.apply(c)) {
            return n;
        }
    }
    Node::Unary(op, Box::new(a))
}

fn add(a: Node, b: Node) -> Node {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Some(n) = fold(x + y) {
            return n;
        }
    }
    if a.is_const(0.0) {
        return b;
    }
    if b.is_const(0.0) {
        return a;
    }
    if let Node::Unary(UnaryOp::Neg, inner) = b {
        return Node::Binary(BinaryOp::Sub, Box::new(a), inner);
    }
    Node::Binary(BinaryOp::Add, Box::new(a), Box::new(b))
}

fn sub(a: Node, b: Node) -> Node {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Some(n) = fold(x - y) {
            return n;
        }
    }
    if b.is_const(0.0) {
        return a;
    }
    if a.is_const(0.0) {
        return neg(b);
    }
    Node::Binary(BinaryOp::Sub, Box::new(a), Box::new(b))
}

fn mul(a: Node, b: Node) -> Node {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Some(n) = fold(x * y) {
            return n;
        }
    }
    if a.is_const(0.0) || b.is_const(0.0) {
        return Node::Const(0.0);
    }
    if a.is_const(1.0) {
        return b;
    }
    if b.is_const(1.0) {
        return a;
    }
    if a.is_const(-1.0) {
        return neg(b);
    }
    if b.is_const(-1.0) {
        return neg(a);
    }
    Node::Binary(BinaryOp::Mul, Box::new(a), Box::new(b))
}

fn div(a: Node, b: Node) -> Node {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Some(n) = fold(x / y) {
            return n;
        }
    }
    if a.is_const(0.0) {
        return Node::Const(0.0);
    }
    if b.is_const(1.0) {
        return a;
    }
    Node::Binary(BinaryOp::Div, Box::new(a), Box::new(b))
}

fn powr(a: Node, b: Node) -> Node {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Some(n) = fold(pow(x, y)) {
            return n;
        }
    }
    if b.is_const(0.0) {
        return Node::Const(1.0);
    }
    if b.is_const(1.0) {
        return a;
    }
    Node::Binary(BinaryOp::Pow, Box::new(a), Box::new(b))
}

fn derive(node: &Node, var: usize) -> Node {
    match node {
        Node::Const(_) => Node::Const(0.0),
        Node::Var(i) => Node::Const(if *i == var { 1.0 } else { 0.0 }),
        Node::Unary(op, a) => {
            let da = derive(a, var);
            if da.is_const(0.0) {
                return Node::Const(0.0);
            }
            let u = (**a).clone();
            let outer = match op {
                UnaryOp::Neg => return neg(da),
                UnaryOp::Exp => unary(UnaryOp::Exp, u),
                UnaryOp::Log => return div(da, u),
                UnaryOp::Sin => unary(UnaryOp::Cos, u),
                UnaryOp::Cos => neg(unary(UnaryOp::Sin, u)),
                UnaryOp::Tan => div(Node::Const(1.0), powr(unary(UnaryOp::Cos, u), Node::Const(2.0))),
                UnaryOp::Sqrt => div(Node::Const(0.5), unary(UnaryOp::Sqrt, u)),
                UnaryOp::Abs => unary(UnaryOp::Sign, u),
                UnaryOp::Sign => return Node::Const(0.0),
            };
            mul(outer, da)
        }
        Node::Binary(op, a, b) => {
            let (u, v) = ((**a).clone(), (**b).clone());
            match op {
                BinaryOp::Add => add(derive(a, var), derive(b, var)),
                BinaryOp::Sub => sub(derive(a, var), derive(b, var)),
                BinaryOp::Mul => add(mul(derive(a, var), v), mul(u, derive(b, var))),
                BinaryOp::Div => {
                    let num = sub(mul(derive(a, var), v.clone()), mul(u, derive(b, var)));
                    div(num, powr(v, Node::Const(2.0)))
                }
                BinaryOp::Pow => {
                    let du = derive(a, var);
                    let dv = derive(b, var);
                    if let Some(c) = v.as_const() {
                        // c * u^(c-1) * u'
                        return mul(mul(Node::Const(c), powr(u, Node::Const(c - 1.0))), du);
                    }
                    // u^v * (v' ln u + v u' / u)
                    let log_term = mul(dv, unary(UnaryOp::Log, u.clone()));
                    let ratio_term = div(mul(v.clone(), du), u.clone());
                    mul(powr(u, v), add(log_term, ratio_term))
                }
            }
        }
    }
}

/// A parsed scalar expression over `dim` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    dim: usize,
    root: Node,
}

impl Expr {
    pub fn from_node(root: Node, dim: usize) -> Result<Self, ExprError> {
        let max = root.max_var();
        if max > dim {
            return Err(ExprError::VariableOutOfRange { index: max, dim, pos: 0 });
        }
        Ok(Expr { dim, root })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Largest variable index that appears in the tree (0 for constants).
    pub fn max_var(&self) -> usize {
        self.root.max_var()
    }

    /// Direct tree interpretation. Used as a reference for compiled tapes.
    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim, "point dimension does not match expression");
        self.root.eval(x)
    }

    /// Exact partial derivative with respect to `x{var}` (1-based).
    pub fn differentiate(&self, var: usize) -> Expr {
        assert!(var >= 1 && var <= self.dim, "variable index out of range");
        Expr { dim: self.dim, root: derive(&self.root, var) }
    }

    /// Renders the expression in the accepted input grammar.
    pub fn unparse(&self) -> String {
        let mut out = String::new();
        write_node(&self.root, &mut out);
        out
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.unparse())
    }
}

pub fn parse_expression(source: &str, dim: usize) -> Result<Expr, ExprError> {
    let tokens = tokenize(source)?;
    let mut parser = Parser { tokens, pos: 0, dim, end: source.len() };
    let root = parser.sum()?;
    if let Some(tok) = parser.peek() {
        return Err(ExprError::Syntax { pos: tok.pos, msg: format!("unexpected {}", tok.kind.describe()) });
    }
    Ok(Expr { dim, root })
}

pub fn differentiate(e: &Expr, var: usize) -> Expr {
    e.differentiate(var)
}

// ---------------------------------------------------------------------------
// Unparsing

fn precedence(node: &Node) -> u8 {
    match node {
        Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => 3,
        Node::Const(_) | Node::Var(_) => 5,
        Node::Unary(UnaryOp::Neg, _) => 3,
        Node::Unary(..) => 5,
        Node::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
        Node::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
        Node::Binary(BinaryOp::Pow, ..) => 4,
    }
}

fn write_wrapped(node: &Node, parens: bool, out: &mut String) {
    if parens {
        out.push('(');
        write_node(node, out);
        out.push(')');
    } else {
        write_node(node, out);
    }
}

fn write_node(node: &Node, out: &mut String) {
    match node {
        Node::Const(c) => out.push_str(&format!("{c:?}")),
        Node::Var(i) => out.push_str(&format!("x{i}")),
        Node::Unary(UnaryOp::Neg, a) => {
            out.push('-');
            write_wrapped(a, precedence(a) < 3, out);
        }
        Node::Unary(op, a) => {
            out.push_str(op.name());
            write_wrapped(a, true, out);
        }
        Node::Binary(op, a, b) => {
            let p = precedence(node);
            let (left_parens, right_parens) = match op {
                BinaryOp::Pow => (precedence(a) <= 4, precedence(b) < 3),
                _ => (precedence(a) < p, precedence(b) <= p),
            };
            write_wrapped(a, left_parens, out);
            out.push_str(op.symbol());
            write_wrapped(b, right_parens, out);
        }
    }
}

// ---------------------------------------------------------------------------
// Lexing and parsing

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Pow,
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Plus => "`+`".into(),
            TokenKind::Minus => "`-`".into(),
            TokenKind::Star => "`*`".into(),
            TokenKind::Slash => "`/`".into(),
            TokenKind::Pow => "`**`".into(),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let kind = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokenKind::Plus,
            b'-' => TokenKind::Minus,
            b'/' => TokenKind::Slash,
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            b'*' => {
                if bytes.get(i + 1) == Some(&b'*') {
                    i += 1;
                    TokenKind::Pow
                } else {
                    TokenKind::Star
                }
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value = text
                    .parse::<f64>()
                    .map_err(|_| ExprError::Syntax { pos: start, msg: format!("malformed number `{text}`") })?;
                tokens.push(Token { kind: TokenKind::Num(value), pos: start });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push(Token { kind: TokenKind::Ident(src[start..i].to_string()), pos: start });
                continue;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax { pos: i, msg: format!("unexpected character `{ch}`") });
            }
        };
        tokens.push(Token { kind, pos: start });
        i += 1;
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dim: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        tok
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().map(|t| &t.kind) == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn here(&self) -> usize {
        self.peek().map(|t| t.pos).unwrap_or(self.end)
    }

    fn sum(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Plus) => BinaryOp::Add,
                Some(TokenKind::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Star) => BinaryOp::Mul,
                Some(TokenKind::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat(&TokenKind::Minus) {
            let inner = self.unary()?;
            return Ok(match inner {
                Node::Const(c) => Node::Const(-c),
                other => Node::Unary(UnaryOp::Neg, Box::new(other)),
            });
        }
        if self.eat(&TokenKind::Plus) {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat(&TokenKind::Pow) {
            let exponent = self.unary()?;
            return Ok(Node::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let pos = self.here();
        let tok = self.bump().ok_or(ExprError::Syntax { pos, msg: "unexpected end of input".into() })?;
        match tok.kind {
            TokenKind::Num(v) => Ok(Node::Const(v)),
            TokenKind::LParen => {
                let inner = self.sum()?;
                if !self.eat(&TokenKind::RParen) {
                    return Err(ExprError::Syntax { pos: self.here(), msg: "expected `)`".into() });
                }
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                if let Some(op) = UnaryOp::from_name(&name) {
                    if !self.eat(&TokenKind::LParen) {
                        return Err(ExprError::Syntax {
                            pos: self.here(),
                            msg: format!("expected `(` after `{name}`"),
                        });
                    }
                    let arg = self.sum()?;
                    if !self.eat(&TokenKind::RParen) {
                        return Err(ExprError::Syntax { pos: self.here(), msg: "expected `)`".into() });
                    }
                    return Ok(Node::Unary(op, Box::new(arg)));
                }
                let index = name
                    .strip_prefix('x')
                    .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                    .and_then(|d| d.parse::<usize>().ok());
                match index {
                    Some(i) if i >= 1 && i <= self.dim => Ok(Node::Var(i)),
                    Some(i) => Err(ExprError::VariableOutOfRange { index: i, dim: self.dim, pos: tok.pos }),
                    None => Err(ExprError::UnknownIdentifier { name, pos: tok.pos }),
                }
            }
            other => Err(ExprError::Syntax { pos: tok.pos, msg: format!("unexpected {}", other.describe()) }),
        }
    }
}

// ---------------------------------------------------------------------------
// Compilation

#[derive(Debug, Clone, Copy)]
enum Instr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
    PowI(i32),
    Square,
}

/// Postfix instruction tape for one expression.
#[derive(Debug, Clone)]
struct Tape {
    code: Vec<Instr>,
    stack_size: usize,
}

impl Tape {
    fn compile(root: &Node) -> Self {
        let mut code = Vec::new();
        emit(root, &mut code);
        Tape { code, stack_size: root.depth() + 1 }
    }

    #[inline]
    fn eval(&self, x: &[f64], stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        for instr in &self.code {
            match *instr {
                Instr::Const(c) => stack.push(c),
                Instr::Var(i) => stack.push(x[i]),
                Instr::Unary(op) => {
                    let a = stack.last_mut().unwrap();
                    *a = op.apply(*a);
                }
                Instr::Square => {
                    let a = stack.last_mut().unwrap();
                    *a *= *a;
                }
                Instr::PowI(n) => {
                    let a = stack.last_mut().unwrap();
                    *a = a.powi(n);
                }
                Instr::Binary(op) => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    *a = op.apply(*a, b);
                }
            }
        }
        stack.pop().unwrap_or(0.0)
    }
}

fn emit(node: &Node, code: &mut Vec<Instr>) {
    match node {
        Node::Const(c) => code.push(Instr::Const(*c)),
        Node::Var(i) => code.push(Instr::Var(i - 1)),
        Node::Unary(op, a) => {
            emit(a, code);
            code.push(Instr::Unary(*op));
        }
        Node::Binary(BinaryOp::Pow, a, b) => {
            emit(a, code);
            match b.as_const() {
                Some(2.0) => code.push(Instr::Square),
                Some(c) if c.fract() == 0.0 && c.abs() <= 64.0 => code.push(Instr::PowI(c as i32)),
                _ => {
                    emit(b, code);
                    code.push(Instr::Binary(BinaryOp::Pow));
                }
            }
        }
        Node::Binary(op, a, b) => {
            emit(a, code);
            emit(b, code);
            code.push(Instr::Binary(*op));
        }
    }
}

type ScalarClosure = dyn Fn(&[f64]) -> f64 + Send + Sync;
pub(crate) type VectorClosure = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Compiled evaluator `R^d -> R`. Cheap to clone and safe to share.
#[derive(Clone)]
pub struct CompiledScalarFn {
    dim: usize,
    f: Arc<ScalarClosure>,
}

impl CompiledScalarFn {
    pub fn from_fn(dim: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        CompiledScalarFn { dim, f: Arc::new(f) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn call(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        (self.f)(x)
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.call(x.as_slice())
    }
}

impl fmt::Debug for CompiledScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompiledScalarFn").field("dim", &self.dim).finish_non_exhaustive()
    }
}

/// Compiled evaluator `R^d -> R^d`.
#[derive(Clone)]
pub struct CompiledVectorFn {
    dim: usize,
    f: Arc<VectorClosure>,
}

impl CompiledVectorFn {
    pub fn from_fn(dim: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        CompiledVectorFn { dim, f: Arc::new(f) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn call_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        (self.f)(x, out)
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        self.call_into(x.as_slice(), out.as_mut_slice());
        out
    }
}

impl fmt::Debug for CompiledVectorFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompiledVectorFn").field("dim", &self.dim).finish_non_exhaustive()
    }
}

pub fn compile_scalar(e: &Expr) -> CompiledScalarFn {
    let tape = Tape::compile(&e.root);
    CompiledScalarFn::from_fn(e.dim, move |x| {
        let mut stack = Vec::with_capacity(tape.stack_size);
        tape.eval(x, &mut stack)
    })
}

/// Compiles a list of expressions as the components of one vector field.
pub fn compile_components(components: &[Expr]) -> CompiledVectorFn {
    let dim = components.first().map(|e| e.dim).unwrap_or(0);
    let tapes: Vec<Tape> = components.iter().map(|e| Tape::compile(&e.root)).collect();
    let stack_size = tapes.iter().map(|t| t.stack_size).max().unwrap_or(1);
    CompiledVectorFn::from_fn(dim, move |x, out| {
        let mut stack = Vec::with_capacity(stack_size);
        for (slot, tape) in out.iter_mut().zip(&tapes) {
            *slot = tape.eval(x, &mut stack);
        }
    })
}

/// Evaluator writing `components.len()` outputs, for shapes other than `d`.
pub(crate) fn compile_flat(components: &[Expr]) -> Arc<VectorClosure> {
    let tapes: Vec<Tape> = components.iter().map(|e| Tape::compile(&e.root)).collect();
    let stack_size = tapes.iter().map(|t| t.stack_size).max().unwrap_or(1);
    Arc::new(move |x: &[f64], out: &mut [f64]| {
        let mut stack = Vec::with_capacity(stack_size);
        for (slot, tape) in out.iter_mut().zip(&tapes) {
            *slot = tape.eval(x, &mut stack);
        }
    })
}

pub fn gradient_exprs(e: &Expr) -> Vec<Expr> {
    (1..=e.dim).map(|i| e.differentiate(i)).collect()
}

pub fn compile_gradient(e: &Expr) -> CompiledVectorFn {
    compile_components(&gradient_exprs(e))
}
