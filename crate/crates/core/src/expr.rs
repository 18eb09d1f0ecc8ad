//! Small arithmetic expression language for user-supplied coefficient and
//! terminal functions.
//!
//! Grammar (precedence from loosest to tightest):
//!
//! ```text
//! expr   := expr ('+' | '-') expr
//!         | expr ('*' | '/') expr
//!         | '-' expr
//!         | expr '^' expr          (right associative)
//!         | number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `exp log sin cos sqrt abs` (one argument), `max min` (two).
//! The constants `pi` and `e` are available unless shadowed by a binding.
//! Any non-finite intermediate value is reported as a domain error naming the
//! offending sub-expression.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
    Max,
    Min,
}

impl Func {
    pub const ALL: [Func; 8] = [
        Func::Exp,
        Func::Log,
        Func::Sin,
        Func::Cos,
        Func::Sqrt,
        Func::Abs,
        Func::Max,
        Func::Min,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Max => "max",
            Func::Min => "min",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Max | Func::Min => 2,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at byte {offset}: expected {expected}, found {found}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("numeric domain error in `{expr}`: {message}")]
    Domain { expr: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "number {v:?}"),
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Op(c) => write!(f, "`{c}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::End => f.write_str("end of input"),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn next_token(&mut self) -> Result<(usize, Tok), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && (bytes[self.pos] as char).is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((start, Tok::End));
        };
        let c = c as char;
        if c.is_ascii_digit() || c == '.' {
            return self.number(start).map(|v| (start, Tok::Num(v)));
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while self.pos < bytes.len()
                && ((bytes[self.pos] as char).is_ascii_alphanumeric() || bytes[self.pos] == b'_')
            {
                self.pos += 1;
            }
            return Ok((start, Tok::Ident(self.src[start..self.pos].to_string())));
        }
        self.pos += 1;
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or(c);
                return Err(ParseError {
                    offset: start,
                    expected: "a number, identifier, operator or parenthesis".into(),
                    found: format!("character `{ch}`"),
                });
            }
        };
        Ok((start, tok))
    }

    fn number(&mut self, start: usize) -> Result<f64, ParseError> {
        let bytes = self.src.as_bytes();
        let digits = |pos: &mut usize| {
            let s = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            *pos - s
        };
        let mut n = digits(&mut self.pos);
        if self.pos < bytes.len() && bytes[self.pos] == b'.' {
            self.pos += 1;
            n += digits(&mut self.pos);
        }
        if n == 0 {
            return Err(ParseError {
                offset: start,
                expected: "digits".into(),
                found: "`.`".into(),
            });
        }
        if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < bytes.len() && (bytes[self.pos] == b'+' || bytes[self.pos] == b'-') {
                self.pos += 1;
            }
            if digits(&mut self.pos) == 0 {
                // `2e` is a number followed by the identifier `e`
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(ParseError {
                offset: start,
                expected: "a finite number".into(),
                found: format!("`{text}`"),
            }),
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    at: usize,
}

const BP_ADD: u8 = 10;
const BP_MUL: u8 = 20;
const BP_NEG: u8 = 30;
const BP_POW: u8 = 40;

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        let mut lexer = Lexer { src, pos: 0 };
        let (at, tok) = lexer.next_token()?;
        Ok(Parser { lexer, tok, at })
    }

    fn bump(&mut self) -> Result<Tok, ParseError> {
        let (at, tok) = self.lexer.next_token()?;
        self.at = at;
        Ok(std::mem::replace(&mut self.tok, tok))
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self.at,
            expected: expected.into(),
            found: self.tok.to_string(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.tok == tok {
            self.bump()?;
            Ok(())
        } else {
            self.fail(what)
        }
    }

    fn expr(&mut self, min_bp: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.prefix()?;
        loop {
            let (op, lbp, rbp) = match self.tok {
                Tok::Op('+') => (BinOp::Add, BP_ADD, BP_ADD + 1),
                Tok::Op('-') => (BinOp::Sub, BP_ADD, BP_ADD + 1),
                Tok::Op('*') => (BinOp::Mul, BP_MUL, BP_MUL + 1),
                Tok::Op('/') => (BinOp::Div, BP_MUL, BP_MUL + 1),
                Tok::Op('^') => (BinOp::Pow, BP_POW + 1, BP_POW),
                _ => break,
            };
            if lbp < min_bp {
                break;
            }
            self.bump()?;
            let rhs = self.expr(rbp)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Num(v))
            }
            Tok::Op('-') => {
                self.bump()?;
                Ok(Expr::Neg(Box::new(self.expr(BP_NEG)?)))
            }
            Tok::LParen => {
                self.bump()?;
                let e = self.expr(0)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump()?;
                match Func::from_name(&name) {
                    Some(f) => self.call(f),
                    None => Ok(Expr::Var(name)),
                }
            }
            _ => self.fail("an operand"),
        }
    }

    fn call(&mut self, f: Func) -> Result<Expr, ParseError> {
        self.expect(Tok::LParen, &format!("`(` after `{}`", f.name()))?;
        let mut args = vec![self.expr(0)?];
        while args.len() < f.arity() {
            self.expect(Tok::Comma, &format!("`,` ({} takes {} arguments)", f.name(), f.arity()))?;
            args.push(self.expr(0)?);
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(Expr::Call(f, args))
    }
}

/// Parses `source` into an expression tree.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(source)?;
    let e = p.expr(0)?;
    if p.tok != Tok::End {
        return p.fail("an operator or end of input");
    }
    Ok(e)
}

impl fmt::Display for Expr {
    /// Fully parenthesized form; `parse(e.to_string()) == e`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(s) => f.write_str(s),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

fn constant(name: &str) -> Option<f64> {
    match name {
        "pi" => Some(std::f64::consts::PI),
        "e" => Some(std::f64::consts::E),
        _ => None,
    }
}

fn apply_bin(op: BinOp, a: f64, b: f64) -> Result<f64, String> {
    let v = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err("division by zero".into());
            }
            a / b
        }
        BinOp::Pow => a.powf(b),
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite result {v}"))
    }
}

fn apply_func(f: Func, a: f64, b: f64) -> Result<f64, String> {
    let v = match f {
        Func::Exp => a.exp(),
        Func::Log => {
            if a <= 0.0 {
                return Err(format!("log of non-positive value {a}"));
            }
            a.ln()
        }
        Func::Sin => a.sin(),
        Func::Cos => a.cos(),
        Func::Sqrt => {
            if a < 0.0 {
                return Err(format!("sqrt of negative value {a}"));
            }
            a.sqrt()
        }
        Func::Abs => a.abs(),
        Func::Max => a.max(b),
        Func::Min => a.min(b),
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite result {v}"))
    }
}

impl Expr {
    /// Reference tree-walking evaluator.
    pub fn eval(&self, bindings: &HashMap<String, f64>) -> Result<f64, ExprError> {
        let domain = |e: &Expr, message: String| ExprError::Domain {
            expr: e.to_string(),
            message,
        };
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(name) => bindings
                .get(name)
                .copied()
                .or_else(|| constant(name))
                .ok_or_else(|| ExprError::Unbound(name.clone())),
            Expr::Neg(e) => Ok(-e.eval(bindings)?),
            Expr::Bin(op, l, r) => {
                let a = l.eval(bindings)?;
                let b = r.eval(bindings)?;
                apply_bin(*op, a, b).map_err(|m| domain(self, m))
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(bindings)?;
                let b = match args.get(1) {
                    Some(e) => e.eval(bindings)?,
                    None => 0.0,
                };
                apply_func(*f, a, b).map_err(|m| domain(self, m))
            }
        }
    }

    /// Free variables in first-occurrence order, excluding unshadowed constants.
    pub fn variables(&self) -> Vec<String> {
        fn walk(e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::Num(_) => {}
                Expr::Var(s) => {
                    if constant(s).is_none() && !out.contains(s) {
                        out.push(s.clone());
                    }
                }
                Expr::Neg(e) => walk(e, out),
                Expr::Bin(_, l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                Expr::Call(_, args) => args.iter().for_each(|a| walk(a, out)),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Compiles against a fixed variable order; unknown names other than
    /// `pi` and `e` are rejected.
    pub fn compile(&self, slots: &[&str]) -> Result<Compiled, ExprError> {
        let mut code = Vec::new();
        let mut nodes = Vec::new();
        self.emit(slots, &mut code, &mut nodes)?;
        Ok(Compiled {
            code,
            nodes,
            n_slots: slots.len(),
        })
    }

    fn emit(&self, slots: &[&str], code: &mut Vec<Op>, nodes: &mut Vec<Expr>) -> Result<(), ExprError> {
        match self {
            Expr::Num(v) => code.push(Op::Const(*v)),
            Expr::Var(name) => match slots.iter().position(|s| s == name) {
                Some(i) => code.push(Op::Slot(i)),
                None => match constant(name) {
                    Some(v) => code.push(Op::Const(v)),
                    None => return Err(ExprError::Unbound(name.clone())),
                },
            },
            Expr::Neg(e) => {
                e.emit(slots, code, nodes)?;
                code.push(Op::Neg);
            }
            Expr::Bin(op, l, r) => {
                l.emit(slots, code, nodes)?;
                r.emit(slots, code, nodes)?;
                nodes.push(self.clone());
                code.push(Op::Bin(*op, nodes.len() - 1));
            }
            Expr::Call(f, args) => {
                for a in args {
                    a.emit(slots, code, nodes)?;
                }
                nodes.push(self.clone());
                code.push(Op::Call(*f, nodes.len() - 1));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Slot(usize),
    Neg,
    Bin(BinOp, usize),
    Call(Func, usize),
}

/// Stack-machine form of an [`Expr`] with positional variables. Produces
/// bit-identical results to [`Expr::eval`].
#[derive(Debug, Clone)]
pub struct Compiled {
    code: Vec<Op>,
    nodes: Vec<Expr>,
    n_slots: usize,
}

impl Compiled {
    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn eval(&self, slots: &[f64]) -> Result<f64, ExprError> {
        debug_assert!(slots.len() >= self.n_slots);
        let mut stack: Vec<f64> = Vec::with_capacity(16);
        for op in &self.code {
            match *op {
                Op::Const(v) => stack.push(v),
                Op::Slot(i) => stack.push(slots[i]),
                Op::Neg => {
                    let a = stack.pop().unwrap_or_default();
                    stack.push(-a);
                }
                Op::Bin(bop, node) => {
                    let b = stack.pop().unwrap_or_default();
                    let a = stack.pop().unwrap_or_default();
                    let v = apply_bin(bop, a, b).map_err(|message| self.domain(node, message))?;
                    stack.push(v);
                }
                Op::Call(f, node) => {
                    let b = if f.arity() == 2 { stack.pop().unwrap_or_default() } else { 0.0 };
                    let a = stack.pop().unwrap_or_default();
                    let v = apply_func(f, a, b).map_err(|message| self.domain(node, message))?;
                    stack.push(v);
                }
            }
        }
        Ok(stack.pop().unwrap_or_default())
    }

    fn domain(&self, node: usize, message: String) -> ExprError {
        ExprError::Domain {
            expr: self.nodes[node].to_string(),
            message,
        }
    }

    /// True when the expression does not read any slot.
    pub fn is_constant(&self) -> bool {
        !self.code.iter().any(|op| matches!(op, Op::Slot(_)))
    }
}
