//! Expression DSL for potentials and densities.
//!
//! Grammar (see `docs/grammar.md` for the full EBNF):
//!
//! ```text
//! expr   := term  (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          // right-assoc, binds tighter than unary minus
//! atom   := NUMBER | 'x'K | fn1 '(' expr ')' | ('min'|'max') '(' expr (',' expr)+ ')'
//!         | 'normsq' '(' 'x' ')' | '(' expr ')'
//! fn1    := 'exp' | 'log' | 'sqrt' | 'abs' | 'neg'
//! ```
//!
//! Variables are `x1 ... xd`; the arity `d` is fixed at parse time and every
//! referenced index must be within it. `normsq(x)` is the built-in
//! `|x|^2 = x1^2 + ... + xd^2`. Evaluation either returns a finite real or a
//! structured domain error — NaN and infinities never escape.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Where in the source text a parse error occurred, as a byte offset.
pub type ByteOffset = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected {expected}, found {found}")]
    Syntax {
        offset: ByteOffset,
        expected: &'static str,
        found: String,
    },
    #[error("variable x{index} at byte {offset} is out of range for arity {dim}")]
    VarOutOfRange {
        offset: ByteOffset,
        index: usize,
        dim: usize,
    },
    #[error("arity must be between 1 and 4, got {0}")]
    BadArity(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("expression expects {expected} coordinates, point has {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("log of non-positive value {0}")]
    LogNonPositive(f64),
    #[error("square root of negative value {0}")]
    SqrtNegative(f64),
    #[error("division by zero")]
    DivByZero,
    #[error("{base}^{exponent} is not a real number")]
    PowDomain { base: f64, exponent: f64 },
    #[error("overflow in {0}")]
    Overflow(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Neg,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Neg => "neg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// 0-based variable index; prints as `x{i+1}`.
    Var(usize),
    /// `normsq(x)` — squared Euclidean norm of the whole point.
    NormSq,
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
    Min(Vec<Node>),
    Max(Vec<Node>),
}

/// A parsed expression together with its arity.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    dim: usize,
    root: Node,
}

impl Expr {
    /// Parses `text` as an expression in variables `x1 ... x{dim}`.
    pub fn parse(text: &str, dim: usize) -> Result<Expr, ParseError> {
        if dim == 0 || dim > crate::grid::MAX_DIM {
            return Err(ParseError::BadArity(dim));
        }
        let tokens = lex(text)?;
        let mut p = Parser {
            tokens: &tokens,
            pos: 0,
            dim,
        };
        let root = p.expr()?;
        match p.peek() {
            Token::Eof { .. } => Ok(Expr { dim, root }),
            t => Err(ParseError::Syntax {
                offset: t.offset(),
                expected: "end of input",
                found: t.describe(),
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Evaluates at `p`, which must have exactly `dim` coordinates.
    pub fn eval(&self, p: &[f64]) -> Result<f64, EvalError> {
        if p.len() != self.dim {
            return Err(EvalError::DimMismatch {
                expected: self.dim,
                got: p.len(),
            });
        }
        eval_node(&self.root, p)
    }

    /// Central-difference gradient at `p`.
    pub fn grad(&self, p: &[f64], cfg: &DiffConfig) -> Result<DVector<f64>, EvalError> {
        cfg.validate();
        let h = cfg.effective_step(p);
        let mut out = DVector::zeros(self.dim);
        let mut work = p.to_vec();
        for i in 0..self.dim {
            out[i] = if cfg.richardson {
                let d1 = self.central_diff(&mut work, i, h)?;
                let d2 = self.central_diff(&mut work, i, h / 2.0)?;
                (4.0 * d2 - d1) / 3.0
            } else {
                self.central_diff(&mut work, i, h)?
            };
        }
        Ok(out)
    }

    /// Symmetrized second-difference Hessian at `p`.
    pub fn hess(&self, p: &[f64], cfg: &DiffConfig) -> Result<DMatrix<f64>, EvalError> {
        cfg.validate();
        let h = cfg.effective_step(p);
        if cfg.richardson {
            let h1 = self.hess_raw(p, h)?;
            let h2 = self.hess_raw(p, h / 2.0)?;
            Ok((h2 * 16.0 - h1) / 15.0)
        } else {
            self.hess_raw(p, h)
        }
    }

    fn central_diff(&self, work: &mut [f64], i: usize, h: f64) -> Result<f64, EvalError> {
        let xi = work[i];
        work[i] = xi + h;
        let fp = eval_node(&self.root, work)?;
        work[i] = xi - h;
        let fm = eval_node(&self.root, work)?;
        work[i] = xi;
        Ok((fp - fm) / (2.0 * h))
    }

    fn hess_raw(&self, p: &[f64], h: f64) -> Result<DMatrix<f64>, EvalError> {
        let d = self.dim;
        let f0 = eval_node(&self.root, p)?;
        let mut m = DMatrix::zeros(d, d);
        let mut w = p.to_vec();
        for i in 0..d {
            let xi = p[i];
            w[i] = xi + h;
            let fp = eval_node(&self.root, &w)?;
            w[i] = xi - h;
            let fm = eval_node(&self.root, &w)?;
            w[i] = xi;
            m[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
            for j in (i + 1)..d {
                let xj = p[j];
                w[i] = xi + h;
                w[j] = xj + h;
                let fpp = eval_node(&self.root, &w)?;
                w[j] = xj - h;
                let fpm = eval_node(&self.root, &w)?;
                w[i] = xi - h;
                let fmm = eval_node(&self.root, &w)?;
                w[j] = xj + h;
                let fmp = eval_node(&self.root, &w)?;
                w[i] = xi;
                w[j] = xj;
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        // Exact symmetry already holds by construction; keep it that way under
        // any future edits by symmetrizing.
        let mt = m.transpose();
        Ok((m + mt) * 0.5)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

/// Fully parenthesized printing so a reparse is precedence-proof.
fn write_node(n: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match n {
        Node::Const(c) => {
            if c.is_sign_negative() {
                write!(f, "({:?})", c)
            } else {
                write!(f, "{:?}", c)
            }
        }
        Node::Var(i) => write!(f, "x{}", i + 1),
        Node::NormSq => write!(f, "normsq(x)"),
        Node::Bin(op, l, r) => {
            write!(f, "(")?;
            write_node(l, f)?;
            write!(f, " {} ", op.symbol())?;
            write_node(r, f)?;
            write!(f, ")")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(a, f)?;
            write!(f, ")")
        }
        Node::Min(args) | Node::Max(args) => {
            let name = if matches!(n, Node::Min(_)) { "min" } else { "max" };
            write!(f, "{name}(")?;
            for (k, a) in args.iter().enumerate() {
                if k > 0 {
                    write!(f, ", ")?;
                }
                write_node(a, f)?;
            }
            write!(f, ")")
        }
    }
}

fn finite(v: f64, what: &'static str) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::Overflow(what))
    }
}

fn eval_node(n: &Node, p: &[f64]) -> Result<f64, EvalError> {
    match n {
        Node::Const(c) => Ok(*c),
        Node::Var(i) => Ok(p[*i]),
        Node::NormSq => finite(p.iter().map(|v| v * v).sum(), "normsq"),
        Node::Bin(op, l, r) => {
            let a = eval_node(l, p)?;
            let b = eval_node(r, p)?;
            match op {
                BinOp::Add => finite(a + b, "+"),
                BinOp::Sub => finite(a - b, "-"),
                BinOp::Mul => finite(a * b, "*"),
                BinOp::Div => {
                    if b == 0.0 {
                        Err(EvalError::DivByZero)
                    } else {
                        finite(a / b, "/")
                    }
                }
                BinOp::Pow => {
                    let v = a.powf(b);
                    if v.is_nan() {
                        Err(EvalError::PowDomain {
                            base: a,
                            exponent: b,
                        })
                    } else {
                        finite(v, "^")
                    }
                }
            }
        }
        Node::Call(func, arg) => {
            let a = eval_node(arg, p)?;
            match func {
                Func::Exp => finite(a.exp(), "exp"),
                Func::Log => {
                    if a <= 0.0 {
                        Err(EvalError::LogNonPositive(a))
                    } else {
                        Ok(a.ln())
                    }
                }
                Func::Sqrt => {
                    if a < 0.0 {
                        Err(EvalError::SqrtNegative(a))
                    } else {
                        Ok(a.sqrt())
                    }
                }
                Func::Abs => Ok(a.abs()),
                Func::Neg => Ok(-a),
            }
        }
        Node::Min(args) => fold_args(args, p, f64::min),
        Node::Max(args) => fold_args(args, p, f64::max),
    }
}

fn fold_args(args: &[Node], p: &[f64], pick: fn(f64, f64) -> f64) -> Result<f64, EvalError> {
    let mut acc = eval_node(&args[0], p)?;
    for a in &args[1..] {
        acc = pick(acc, eval_node(a, p)?);
    }
    Ok(acc)
}

/// Finite-difference configuration shared by `grad`, `hess` and the
/// Hessian-based certificates.
///
/// The effective step is `h * (1 + |p|_inf)` when `scaled` (the default,
/// keeping truncation and roundoff balanced away from the origin), or the
/// absolute `h` otherwise. `richardson` applies one extrapolation level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffConfig {
    pub h: f64,
    pub scaled: bool,
    pub richardson: bool,
}

impl Default for DiffConfig {
    fn default() -> Self {
        DiffConfig {
            h: 1e-5,
            scaled: true,
            richardson: false,
        }
    }
}

impl DiffConfig {
    pub fn absolute(h: f64) -> Self {
        DiffConfig {
            h,
            scaled: false,
            richardson: false,
        }
    }

    fn validate(&self) {
        assert!(self.h > 0.0 && self.h.is_finite(), "step must be positive");
    }

    fn effective_step(&self, p: &[f64]) -> f64 {
        if self.scaled {
            let sup = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            self.h * (1.0 + sup)
        } else {
            self.h
        }
    }
}

// ---------------------------------------------------------------------------
// lexer / parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num { offset: ByteOffset, value: f64 },
    Ident { offset: ByteOffset, text: String },
    Op { offset: ByteOffset, ch: char },
    Eof { offset: ByteOffset },
}

impl Token {
    fn offset(&self) -> ByteOffset {
        match self {
            Token::Num { offset, .. }
            | Token::Ident { offset, .. }
            | Token::Op { offset, .. }
            | Token::Eof { offset } => *offset,
        }
    }

    fn describe(&self) -> String {
        match self {
            Token::Num { value, .. } => format!("number `{value}`"),
            Token::Ident { text, .. } => format!("`{text}`"),
            Token::Op { ch, .. } => format!("`{ch}`"),
            Token::Eof { .. } => "end of input".to_string(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '+' | '-' | '*' | '/' | '^' | '(' | ')' | ',' => {
                out.push(Token::Op { offset: i, ch: c });
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let slice = &text[start..i];
                let value: f64 = slice.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    expected: "a numeric literal",
                    found: format!("`{slice}`"),
                })?;
                out.push(Token::Num {
                    offset: start,
                    value,
                });
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Token::Ident {
                    offset: start,
                    text: text[start..i].to_string(),
                });
            }
            other => {
                return Err(ParseError::Syntax {
                    offset: i,
                    expected: "a token",
                    found: format!("`{other}`"),
                })
            }
        }
    }
    out.push(Token::Eof { offset: bytes.len() });
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> &Token {
        let t = &self.tokens[self.pos];
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect_op(&mut self, ch: char, expected: &'static str) -> Result<(), ParseError> {
        match self.peek() {
            Token::Op { ch: c, .. } if *c == ch => {
                self.bump();
                Ok(())
            }
            t => Err(ParseError::Syntax {
                offset: t.offset(),
                expected,
                found: t.describe(),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Token::Op { ch: '+', .. } => BinOp::Add,
                Token::Op { ch: '-', .. } => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Token::Op { ch: '*', .. } => BinOp::Mul,
                Token::Op { ch: '/', .. } => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if let Token::Op { ch: '-', .. } = self.peek() {
            self.bump();
            let inner = self.unary()?;
            return Ok(Node::Call(Func::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if let Token::Op { ch: '^', .. } = self.peek() {
            self.bump();
            // Right-associative; the exponent may itself carry a unary minus.
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let token = self.peek().clone();
        match token {
            Token::Num { value, .. } => {
                self.bump();
                Ok(Node::Const(value))
            }
            Token::Op { ch: '(', .. } => {
                self.bump();
                let inner = self.expr()?;
                self.expect_op(')', "`)`")?;
                Ok(inner)
            }
            Token::Ident { ref text, offset } => {
                self.bump();
                self.ident_atom(text, offset)
            }
            t => Err(ParseError::Syntax {
                offset: t.offset(),
                expected: "an expression",
                found: t.describe(),
            }),
        }
    }

    fn ident_atom(&mut self, text: &str, offset: ByteOffset) -> Result<Node, ParseError> {
        if let Some(rest) = text.strip_prefix('x') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = rest.parse().map_err(|_| ParseError::Syntax {
                    offset,
                    expected: "a variable index",
                    found: format!("`{text}`"),
                })?;
                if index == 0 || index > self.dim {
                    return Err(ParseError::VarOutOfRange {
                        offset,
                        index,
                        dim: self.dim,
                    });
                }
                return Ok(Node::Var(index - 1));
            }
        }
        let func = match text {
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            "neg" => Some(Func::Neg),
            _ => None,
        };
        if let Some(func) = func {
            self.expect_op('(', "`(`")?;
            let arg = self.expr()?;
            self.expect_op(')', "`)`")?;
            return Ok(Node::Call(func, Box::new(arg)));
        }
        match text {
            "min" | "max" => {
                let is_min = text == "min";
                self.expect_op('(', "`(`")?;
                let mut args = vec![self.expr()?];
                while let Token::Op { ch: ',', .. } = self.peek() {
                    self.bump();
                    args.push(self.expr()?);
                }
                self.expect_op(')', "`)` or `,`")?;
                Ok(if is_min { Node::Min(args) } else { Node::Max(args) })
            }
            "normsq" => {
                self.expect_op('(', "`(`")?;
                match self.peek().clone() {
                    Token::Ident { ref text, .. } if text == "x" => {
                        self.bump();
                    }
                    t => {
                        return Err(ParseError::Syntax {
                            offset: t.offset(),
                            expected: "`x` (normsq applies to the whole point)",
                            found: t.describe(),
                        })
                    }
                }
                self.expect_op(')', "`)`")?;
                Ok(Node::NormSq)
            }
            _ => Err(ParseError::Syntax {
                offset,
                expected: "a variable or function name",
                found: format!("`{text}`"),
            }),
        }
    }
}
