//! Symbolic expressions for the formulas that define a mechanical system.
//!
//! Mass-matrix entries, force components, and constraints are supplied as
//! infix text such as `"1+(3/2)*cos(p2)"` and parsed against a
//! [`SymbolTable`] declaring the coordinate, velocity, and parameter names.
//! The resulting [`Expr`] trees are immutable; evaluation and symbolic
//! differentiation build new trees and never mutate existing ones, so
//! expressions can be shared freely across threads.
//!
//! The grammar is deliberately small: `+ - * /`, literal non-negative
//! integer powers, and the functions `sin`, `cos`, `exp`, `log`, `sqrt`.
//! That covers rigid-multibody kinematics (trigonometric constraints,
//! rational mass matrices) while keeping the elementary-function table of
//! [`crate::series`] finite. Real exponents are written `exp(q*log(x))`.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// The reserved independent-variable symbol. It is always in scope and may
/// not be redeclared as a coordinate, velocity, or parameter.
pub const TIME_SYMBOL: &str = "t";

/// The elementary functions supported in expression text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }

    /// IEEE-double application with domain checks. `log` rejects the pole at
    /// zero as well as negative arguments so that downstream consumers never
    /// see non-finite values.
    pub fn apply(self, x: f64) -> Result<f64, EvalError> {
        match self {
            Func::Sin => Ok(x.sin()),
            Func::Cos => Ok(x.cos()),
            Func::Exp => Ok(x.exp()),
            Func::Log => {
                if x <= 0.0 {
                    Err(EvalError::OutOfDomain {
                        function: "log",
                        value: x,
                    })
                } else {
                    Ok(x.ln())
                }
            }
            Func::Sqrt => {
                if x < 0.0 {
                    Err(EvalError::OutOfDomain {
                        function: "sqrt",
                        value: x,
                    })
                } else {
                    Ok(x.sqrt())
                }
            }
        }
    }
}

/// An immutable expression tree.
///
/// `Pow` exponents are literal integers `>= 0` by construction: the parser
/// rejects anything else, and the symbolic derivative only lowers exponents.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    /// Collects every variable name referenced by the tree.
    pub fn free_symbols(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk_symbols(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn walk_symbols(&self, out: &mut Vec<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(name) => out.push(name.clone()),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.walk_symbols(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.walk_symbols(out);
                b.walk_symbols(out);
            }
        }
    }
}

/// Declared symbols of one mechanical system: ordered coordinates, ordered
/// velocities (same count), and named numeric parameters. The time symbol
/// [`TIME_SYMBOL`] is implicitly declared.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTable {
    coordinates: Vec<String>,
    velocities: Vec<String>,
    parameters: Vec<(String, f64)>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SymbolTableError {
    #[error("symbol name may not be empty")]
    EmptyName,
    #[error("symbol `{0}` is declared more than once")]
    Duplicate(String),
    #[error("symbol `t` is reserved for time")]
    ReservedTime,
    #[error("{coordinates} coordinates but {velocities} velocities; the lists must pair up")]
    MismatchedVelocities {
        coordinates: usize,
        velocities: usize,
    },
}

impl SymbolTable {
    pub fn new(
        coordinates: Vec<String>,
        velocities: Vec<String>,
        mut parameters: Vec<(String, f64)>,
    ) -> Result<SymbolTable, SymbolTableError> {
        if coordinates.len() != velocities.len() {
            return Err(SymbolTableError::MismatchedVelocities {
                coordinates: coordinates.len(),
                velocities: velocities.len(),
            });
        }
        parameters.sort_by(|a, b| a.0.cmp(&b.0));
        let mut seen = Vec::new();
        for name in coordinates
            .iter()
            .chain(velocities.iter())
            .chain(parameters.iter().map(|(n, _)| n))
        {
            if name.is_empty() {
                return Err(SymbolTableError::EmptyName);
            }
            if name == TIME_SYMBOL {
                return Err(SymbolTableError::ReservedTime);
            }
            if seen.contains(&name.as_str()) {
                return Err(SymbolTableError::Duplicate(name.clone()));
            }
            seen.push(name);
        }
        Ok(SymbolTable {
            coordinates,
            velocities,
            parameters,
        })
    }

    pub fn n_coordinates(&self) -> usize {
        self.coordinates.len()
    }

    pub fn coordinates(&self) -> &[String] {
        &self.coordinates
    }

    pub fn velocities(&self) -> &[String] {
        &self.velocities
    }

    /// Parameter names and values, sorted by name.
    pub fn parameters(&self) -> &[(String, f64)] {
        &self.parameters
    }

    pub fn is_declared(&self, name: &str) -> bool {
        name == TIME_SYMBOL
            || self.coordinates.iter().any(|c| c == name)
            || self.velocities.iter().any(|v| v == name)
            || self.parameters.iter().any(|(p, _)| p == name)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier `{name}` at byte {position}")]
    UnknownIdentifier { name: String, position: usize },
    #[error("unknown function `{name}` at byte {position}")]
    UnknownFunction { name: String, position: usize },
    #[error("exponent at byte {position} must be a literal non-negative integer")]
    NonIntegerExponent { position: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("symbol `{name}` has no binding")]
    UnboundSymbol { name: String },
    #[error("division by zero")]
    DivisionByZero,
    #[error("{function} of out-of-domain argument {value}")]
    OutOfDomain { function: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num { value: f64, integral: bool },
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            b'^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                let mut integral = true;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    integral = false;
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
                        integral = false;
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit = &text[start..i];
                let value: f64 = lit.parse().map_err(|_| ParseError::Syntax {
                    position: start,
                    message: format!("malformed number `{lit}`"),
                })?;
                toks.push((Tok::Num { value, integral }, start));
            }
            b'A'..=b'Z' | b'a'..=b'z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => {
                return Err(ParseError::Syntax {
                    position: i,
                    message: format!("unexpected character `{}`", &text[i..i + 1]),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    symbols: &'a SymbolTable,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, p)| *p)
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.bump() {
            Some((Tok::RParen, _)) => Ok(()),
            other => Err(ParseError::Syntax {
                position: other.map_or(self.end, |(_, p)| p),
                message: "expected `)`".to_string(),
            }),
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // term := factor (('*'|'/') factor)*
    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // factor := unary ('^' integer)?
    //
    // The exponent binds to the whole unary, so `-x^2` is (-x)^2 here.
    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.unary()?;
        if let Some(Tok::Caret) = self.peek() {
            self.bump();
            let pos = self.here();
            match self.bump() {
                Some((Tok::Num { value, integral }, _))
                    if integral && value >= 0.0 && value <= u32::MAX as f64 =>
                {
                    Ok(Expr::Pow(Box::new(base), value as u32))
                }
                _ => Err(ParseError::NonIntegerExponent { position: pos }),
            }
        } else {
            Ok(base)
        }
    }

    // unary := '-'? atom
    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(Tok::Minus) = self.peek() {
            self.bump();
            Ok(Expr::Neg(Box::new(self.atom()?)))
        } else {
            self.atom()
        }
    }

    // atom := number | identifier | function '(' expr ')' | '(' expr ')'
    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.bump() {
            Some((Tok::Num { value, .. }, _)) => Ok(Expr::Const(value)),
            Some((Tok::Ident(name), pos)) => {
                if let Some(Tok::LParen) = self.peek() {
                    let func = Func::from_name(&name).ok_or(ParseError::UnknownFunction {
                        name: name.clone(),
                        position: pos,
                    })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else if self.symbols.is_declared(&name) {
                    Ok(Expr::Var(name))
                } else {
                    Err(ParseError::UnknownIdentifier {
                        name,
                        position: pos,
                    })
                }
            }
            Some((Tok::LParen, _)) => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            other => Err(ParseError::Syntax {
                position: other.map_or(self.end, |(_, p)| p),
                message: "expected a number, identifier, function call, or `(`".to_string(),
            }),
        }
    }
}

/// Parses infix expression text against the declared symbols.
///
/// The rendered form of the returned tree (its `Display` output) re-parses
/// to a structurally identical tree.
pub fn parse_expression(text: &str, symbols: &SymbolTable) -> Result<Expr, ParseError> {
    let toks = tokenize(text)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        end: text.len(),
        symbols,
    };
    let e = parser.expr()?;
    if parser.pos != parser.toks.len() {
        return Err(ParseError::Syntax {
            position: parser.here(),
            message: "unexpected trailing input".to_string(),
        });
    }
    Ok(e)
}

/// Evaluates the tree at a point. `bindings` must cover every free symbol,
/// including `t` when it occurs.
pub fn evaluate(e: &Expr, bindings: &HashMap<String, f64>) -> Result<f64, EvalError> {
    match e {
        Expr::Const(c) => Ok(*c),
        Expr::Var(name) => bindings
            .get(name)
            .copied()
            .ok_or_else(|| EvalError::UnboundSymbol { name: name.clone() }),
        Expr::Neg(a) => Ok(-evaluate(a, bindings)?),
        Expr::Add(a, b) => Ok(evaluate(a, bindings)? + evaluate(b, bindings)?),
        Expr::Sub(a, b) => Ok(evaluate(a, bindings)? - evaluate(b, bindings)?),
        Expr::Mul(a, b) => Ok(evaluate(a, bindings)? * evaluate(b, bindings)?),
        Expr::Div(a, b) => {
            let den = evaluate(b, bindings)?;
            if den == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            Ok(evaluate(a, bindings)? / den)
        }
        Expr::Pow(a, k) => Ok(evaluate(a, bindings)?.powi(*k as i32)),
        Expr::Call(f, a) => f.apply(evaluate(a, bindings)?),
    }
}

// Smart constructors used by the symbolic derivative and the Adomian
// recursion oracle. Simplification is limited to constant folding and the
// neutral/absorbing elements 0 and 1; anything deeper would make results
// depend on rewrite order and hurt reproducibility.

pub(crate) fn fold_add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(0.0), b) => b,
        (a, Expr::Const(0.0)) => a,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn fold_sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (a, Expr::Const(0.0)) => a,
        (Expr::Const(0.0), b) => fold_neg(b),
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn fold_mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(x), _) | (_, Expr::Const(x)) if x == 0.0 => Expr::Const(0.0),
        (Expr::Const(1.0), b) => b,
        (a, Expr::Const(1.0)) => a,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn fold_div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), b) if x == 0.0 && !matches!(b, Expr::Const(c) if c == 0.0) => {
            Expr::Const(0.0)
        }
        (Expr::Const(x), Expr::Const(y)) if y != 0.0 && (x / y).is_finite() => Expr::Const(x / y),
        (a, Expr::Const(1.0)) => a,
        (a, b) => Expr::Div(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn fold_neg(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => Expr::Const(-x),
        a => Expr::Neg(Box::new(a)),
    }
}

pub(crate) fn fold_pow(a: Expr, k: u32) -> Expr {
    match (a, k) {
        (_, 0) => Expr::Const(1.0),
        (a, 1) => a,
        (Expr::Const(x), k) => Expr::Const(x.powi(k as i32)),
        (a, k) => Expr::Pow(Box::new(a), k),
    }
}

pub(crate) fn fold_call(f: Func, a: Expr) -> Expr {
    match a {
        Expr::Const(x) => match f.apply(x) {
            Ok(y) => Expr::Const(y),
            Err(_) => Expr::Call(f, Box::new(Expr::Const(x))),
        },
        a => Expr::Call(f, Box::new(a)),
    }
}

/// Exact symbolic partial derivative with respect to `var`.
///
/// The result is simplified only by constant folding and elimination of
/// `*0`, `*1`, `+0`; no deeper rewriting, so output shapes are stable.
pub fn differentiate(e: &Expr, var: &str) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(name) => {
            if name == var {
                Expr::Const(1.0)
            } else {
                Expr::Const(0.0)
            }
        }
        Expr::Neg(a) => fold_neg(differentiate(a, var)),
        Expr::Add(a, b) => fold_add(differentiate(a, var), differentiate(b, var)),
        Expr::Sub(a, b) => fold_sub(differentiate(a, var), differentiate(b, var)),
        Expr::Mul(a, b) => fold_add(
            fold_mul(differentiate(a, var), (**b).clone()),
            fold_mul((**a).clone(), differentiate(b, var)),
        ),
        Expr::Div(a, b) => fold_div(
            fold_sub(
                fold_mul(differentiate(a, var), (**b).clone()),
                fold_mul((**a).clone(), differentiate(b, var)),
            ),
            fold_pow((**b).clone(), 2),
        ),
        Expr::Pow(_, 0) => Expr::Const(0.0),
        Expr::Pow(a, k) => fold_mul(
            fold_mul(Expr::Const(f64::from(*k)), fold_pow((**a).clone(), k - 1)),
            differentiate(a, var),
        ),
        Expr::Call(Func::Sin, a) => {
            fold_mul(fold_call(Func::Cos, (**a).clone()), differentiate(a, var))
        }
        Expr::Call(Func::Cos, a) => fold_neg(fold_mul(
            fold_call(Func::Sin, (**a).clone()),
            differentiate(a, var),
        )),
        Expr::Call(Func::Exp, a) => fold_mul(e.clone(), differentiate(a, var)),
        Expr::Call(Func::Log, a) => fold_div(differentiate(a, var), (**a).clone()),
        Expr::Call(Func::Sqrt, a) => {
            fold_div(differentiate(a, var), fold_mul(Expr::Const(2.0), e.clone()))
        }
    }
}

/// Entry `(i, j)` of the result is `∂ es[i] / ∂ vars[j]`.
pub fn jacobian(es: &[Expr], vars: &[&str]) -> Vec<Vec<Expr>> {
    es.iter()
        .map(|e| vars.iter().map(|v| differentiate(e, v)).collect())
        .collect()
}

/// Replaces variable references by expressions. Symbols absent from the map
/// are left untouched.
pub(crate) fn substitute(e: &Expr, map: &HashMap<String, Expr>) -> Expr {
    match e {
        Expr::Const(_) => e.clone(),
        Expr::Var(name) => map.get(name).cloned().unwrap_or_else(|| e.clone()),
        Expr::Neg(a) => Expr::Neg(Box::new(substitute(a, map))),
        Expr::Add(a, b) => Expr::Add(Box::new(substitute(a, map)), Box::new(substitute(b, map))),
        Expr::Sub(a, b) => Expr::Sub(Box::new(substitute(a, map)), Box::new(substitute(b, map))),
        Expr::Mul(a, b) => Expr::Mul(Box::new(substitute(a, map)), Box::new(substitute(b, map))),
        Expr::Div(a, b) => Expr::Div(Box::new(substitute(a, map)), Box::new(substitute(b, map))),
        Expr::Pow(a, k) => Expr::Pow(Box::new(substitute(a, map)), *k),
        Expr::Call(f, a) => Expr::Call(*f, Box::new(substitute(a, map))),
    }
}

// Rendering. Each node is printed at the loosest grammar level that would
// re-parse to the same shape; parentheses appear only where the grammar
// demands them (right operands of -, /, and same-level +, *; non-atom
// children of unary minus; non-unary bases of ^).

fn is_atom(e: &Expr) -> bool {
    match e {
        Expr::Var(_) | Expr::Call(_, _) => true,
        Expr::Const(c) => !c.is_sign_negative(),
        _ => false,
    }
}

fn is_unary(e: &Expr) -> bool {
    is_atom(e) || matches!(e, Expr::Neg(a) if is_atom(a))
}

fn write_paren(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    write!(f, "(")?;
    write_expr(f, e)?;
    write!(f, ")")
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            write_expr(f, a)?;
            write!(f, "{}", if matches!(e, Expr::Add(..)) { "+" } else { "-" })?;
            if matches!(**b, Expr::Add(..) | Expr::Sub(..)) {
                write_paren(f, b)
            } else {
                write_term(f, b)
            }
        }
        _ => write_term(f, e),
    }
}

fn write_term(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Mul(a, b) | Expr::Div(a, b) => {
            write_term(f, a)?;
            write!(f, "{}", if matches!(e, Expr::Mul(..)) { "*" } else { "/" })?;
            if matches!(
                **b,
                Expr::Mul(..) | Expr::Div(..) | Expr::Add(..) | Expr::Sub(..)
            ) {
                write_paren(f, b)
            } else {
                write_factor(f, b)
            }
        }
        Expr::Add(..) | Expr::Sub(..) => write_paren(f, e),
        _ => write_factor(f, e),
    }
}

fn write_factor(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Pow(base, k) => {
            if is_unary(base) {
                write_unary(f, base)?;
            } else {
                write_paren(f, base)?;
            }
            write!(f, "^{k}")
        }
        _ => write_unary(f, e),
    }
}

fn write_unary(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Neg(a) => {
            write!(f, "-")?;
            if is_atom(a) {
                write_atom(f, a)
            } else {
                write_paren(f, a)
            }
        }
        // A negative constant prints as a minus on its magnitude, which
        // folds back to the same constant when re-parsed.
        Expr::Const(c) if c.is_sign_negative() => write!(f, "-{:?}", -c),
        _ => {
            if is_atom(e) {
                write_atom(f, e)
            } else {
                write_paren(f, e)
            }
        }
    }
}

fn write_atom(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Const(c) => write!(f, "{c:?}"),
        Expr::Var(name) => write!(f, "{name}"),
        Expr::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_expr(f, a)?;
            write!(f, ")")
        }
        _ => unreachable!("non-atom passed to write_atom"),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn robot_symbols() -> SymbolTable {
        SymbolTable::new(
            vec!["p1".into(), "p2".into()],
            vec!["v1".into(), "v2".into()],
            vec![],
        )
        .unwrap()
    }

    fn bind(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(n, v)| (n.to_string(), *v)).collect()
    }

    #[test]
    fn parses_constraint_of_the_two_link_arm() {
        let syms = robot_symbols();
        let g = parse_expression("sin(p1)+sin(p1+p2)", &syms).unwrap();
        let expected = Expr::Add(
            Box::new(Expr::Call(Func::Sin, Box::new(Expr::var("p1")))),
            Box::new(Expr::Call(
                Func::Sin,
                Box::new(Expr::Add(
                    Box::new(Expr::var("p1")),
                    Box::new(Expr::var("p2")),
                )),
            )),
        );
        assert_eq!(g, expected);
        // Rendering re-parses to the identical tree.
        let again = parse_expression(&g.to_string(), &syms).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn parses_zero_literal() {
        let syms = robot_symbols();
        assert_eq!(parse_expression("0", &syms).unwrap(), Expr::Const(0.0));
    }

    #[test]
    fn mass_entry_evaluates_at_origin() {
        let syms = robot_symbols();
        let e = parse_expression("1+(3/2)*cos(p2)", &syms).unwrap();
        let v = evaluate(&e, &bind(&[("p2", 0.0)])).unwrap();
        assert_relative_eq!(v, 2.5, epsilon = 1e-15);

        let d = parse_expression("5+3*cos(p2)", &syms).unwrap();
        assert_relative_eq!(evaluate(&d, &bind(&[("p2", 0.0)])).unwrap(), 8.0);
    }

    #[test]
    fn constraint_vanishes_at_consistent_origin() {
        let syms = robot_symbols();
        let g = parse_expression("sin(p1)+sin(p1+p2)", &syms).unwrap();
        let v = evaluate(&g, &bind(&[("p1", 0.0), ("p2", 0.0)])).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn time_symbol_is_always_in_scope() {
        let syms = robot_symbols();
        let e = parse_expression("t", &syms).unwrap();
        assert_relative_eq!(evaluate(&e, &bind(&[("t", 2.5)])).unwrap(), 2.5);
    }

    #[test]
    fn constraint_jacobian_matches_hand_derivative() {
        let syms = robot_symbols();
        let g = parse_expression("sin(p1)+sin(p1+p2)", &syms).unwrap();

        let dp1 = differentiate(&g, "p1");
        let origin = bind(&[("p1", 0.0), ("p2", 0.0)]);
        assert_relative_eq!(evaluate(&dp1, &origin).unwrap(), 2.0, epsilon = 1e-15);
        // Shape check, not just value: cos(p1)+cos(p1+p2).
        let expected = parse_expression("cos(p1)+cos(p1+p2)", &syms).unwrap();
        assert_eq!(dp1, expected);

        let dp2 = differentiate(&g, "p2");
        assert_relative_eq!(evaluate(&dp2, &origin).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(dp2, parse_expression("cos(p1+p2)", &syms).unwrap());

        assert_eq!(differentiate(&Expr::var("p1"), "t"), Expr::Const(0.0));
    }

    #[test]
    fn jacobian_rows_and_columns() {
        let syms = robot_symbols();
        let g = parse_expression("sin(p1)+sin(p1+p2)", &syms).unwrap();
        let jac = jacobian(&[g], &["p1", "p2"]);
        assert_eq!(jac.len(), 1);
        assert_eq!(jac[0].len(), 2);
        assert_eq!(
            jac[0][0],
            parse_expression("cos(p1)+cos(p1+p2)", &syms).unwrap()
        );

        let zeros = jacobian(&[Expr::Const(4.0), Expr::Const(-1.0)], &["p1", "p2"]);
        for row in &zeros {
            for e in row {
                assert_eq!(*e, Expr::Const(0.0));
            }
        }

        let prod = parse_expression("p1*p2", &syms).unwrap();
        let jp = jacobian(&[prod], &["p1", "p2"]);
        assert_eq!(jp[0][0], Expr::var("p2"));
        assert_eq!(jp[0][1], Expr::var("p1"));
    }

    #[test]
    fn negated_power_binds_like_the_grammar_says() {
        let syms = robot_symbols();
        // factor := unary ('^' integer)?, so the minus is inside the power.
        let e = parse_expression("-p1^2", &syms).unwrap();
        assert_eq!(
            e,
            Expr::Pow(Box::new(Expr::Neg(Box::new(Expr::var("p1")))), 2)
        );
        assert_relative_eq!(evaluate(&e, &bind(&[("p1", 3.0)])).unwrap(), 9.0);
    }

    #[test]
    fn subtraction_and_division_are_left_associative() {
        let syms = robot_symbols();
        let e = parse_expression("8-4-2", &syms).unwrap();
        assert_relative_eq!(evaluate(&e, &bind(&[])).unwrap(), 2.0);
        let e = parse_expression("8/4/2", &syms).unwrap();
        assert_relative_eq!(evaluate(&e, &bind(&[])).unwrap(), 1.0);
    }

    #[test]
    fn parse_errors_carry_positions() {
        let syms = robot_symbols();
        match parse_expression("sin(p1)+q3", &syms) {
            Err(ParseError::UnknownIdentifier { name, position }) => {
                assert_eq!(name, "q3");
                assert_eq!(position, 8);
            }
            other => panic!("expected unknown identifier, got {other:?}"),
        }
        match parse_expression("tan(p1)", &syms) {
            Err(ParseError::UnknownFunction { name, .. }) => assert_eq!(name, "tan"),
            other => panic!("expected unknown function, got {other:?}"),
        }
        assert!(matches!(
            parse_expression("p1^1.5", &syms),
            Err(ParseError::NonIntegerExponent { .. })
        ));
        assert!(matches!(
            parse_expression("p1^-2", &syms),
            Err(ParseError::NonIntegerExponent { .. })
        ));
        assert!(matches!(
            parse_expression("p1^p2", &syms),
            Err(ParseError::NonIntegerExponent { .. })
        ));
        assert!(matches!(
            parse_expression("(p1+", &syms),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse_expression("p1 p2", &syms),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse_expression("", &syms),
            Err(ParseError::Syntax { .. })
        ));
    }

    #[test]
    fn evaluation_domain_errors() {
        let syms = robot_symbols();
        let e = parse_expression("p1/p2", &syms).unwrap();
        assert_eq!(
            evaluate(&e, &bind(&[("p1", 1.0), ("p2", 0.0)])),
            Err(EvalError::DivisionByZero)
        );
        let e = parse_expression("sqrt(p1)", &syms).unwrap();
        assert!(matches!(
            evaluate(&e, &bind(&[("p1", -1.0)])),
            Err(EvalError::OutOfDomain {
                function: "sqrt",
                ..
            })
        ));
        let e = parse_expression("log(p1)", &syms).unwrap();
        assert!(matches!(
            evaluate(&e, &bind(&[("p1", 0.0)])),
            Err(EvalError::OutOfDomain {
                function: "log",
                ..
            })
        ));
        let e = parse_expression("p1+p2", &syms).unwrap();
        assert!(matches!(
            evaluate(&e, &bind(&[("p1", 1.0)])),
            Err(EvalError::UnboundSymbol { .. })
        ));
    }

    #[test]
    fn symbol_table_rejects_bad_declarations() {
        assert_eq!(
            SymbolTable::new(vec!["a".into()], vec!["a".into()], vec![]),
            Err(SymbolTableError::Duplicate("a".into()))
        );
        assert_eq!(
            SymbolTable::new(vec!["t".into()], vec!["v".into()], vec![]),
            Err(SymbolTableError::ReservedTime)
        );
        assert_eq!(
            SymbolTable::new(vec!["a".into(), "b".into()], vec!["va".into()], vec![]),
            Err(SymbolTableError::MismatchedVelocities {
                coordinates: 2,
                velocities: 1
            })
        );
        assert_eq!(
            SymbolTable::new(vec!["".into()], vec!["v".into()], vec![]),
            Err(SymbolTableError::EmptyName)
        );
    }

    // Random expression trees over {x, y, t, c} for the property tests.
    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-2.0..2.0f64).prop_map(Expr::Const),
            prop_oneof![
                Just(Expr::var("x")),
                Just(Expr::var("y")),
                Just(Expr::var("t")),
                Just(Expr::var("c")),
            ],
        ];
        leaf.prop_recursive(4, 24, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Div(Box::new(a), Box::new(b))),
                (inner.clone(), 0u32..4).prop_map(|(a, k)| Expr::Pow(Box::new(a), k)),
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (
                    inner,
                    prop_oneof![
                        Just(Func::Sin),
                        Just(Func::Cos),
                        Just(Func::Exp),
                        Just(Func::Log),
                        Just(Func::Sqrt),
                    ]
                )
                    .prop_map(|(a, f)| Expr::Call(f, Box::new(a))),
            ]
        })
    }

    fn arb_bindings() -> impl Strategy<Value = HashMap<String, f64>> {
        (0.3..1.2f64, 0.3..1.2f64, 0.3..1.2f64, 0.3..1.2f64)
            .prop_map(|(x, y, t, c)| bind(&[("x", x), ("y", y), ("t", t), ("c", c)]))
    }

    proptest! {
        // Derivatives agree with a central finite difference wherever the
        // expression is smooth and tame.
        #[test]
        fn derivative_matches_finite_difference(e in arb_expr(), b in arb_bindings()) {
            let x0 = b["x"];
            let f0 = match evaluate(&e, &b) {
                Ok(v) if v.is_finite() && v.abs() <= 1e3 => v,
                _ => return Ok(()),
            };
            let _ = f0;
            let h = 1e-6 * (x0.abs() + 1.0);
            let mut bp = b.clone();
            bp.insert("x".into(), x0 + h);
            let mut bm = b.clone();
            bm.insert("x".into(), x0 - h);
            let (fp, fm) = match (evaluate(&e, &bp), evaluate(&e, &bm)) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite()
                    && p.abs() <= 1e3 && m.abs() <= 1e3 => (p, m),
                _ => return Ok(()),
            };
            let fd = (fp - fm) / (2.0 * h);
            let de = differentiate(&e, "x");
            let exact = match evaluate(&de, &b) {
                Ok(v) if v.is_finite() && v.abs() <= 1e3 => v,
                _ => return Ok(()),
            };
            prop_assert!(
                (fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()),
                "fd={fd} exact={exact}"
            );
        }

        // Rendering loses nothing that evaluation can see.
        #[test]
        fn render_then_reparse_evaluates_identically(e in arb_expr(), b in arb_bindings()) {
            let syms = SymbolTable::new(
                vec!["x".into(), "y".into()],
                vec!["dx".into(), "dy".into()],
                vec![("c".into(), 0.0)],
            ).unwrap();
            let text = e.to_string();
            let reparsed = match parse_expression(&text, &syms) {
                Ok(r) => r,
                Err(err) => return Err(TestCaseError::fail(format!("`{text}`: {err}"))),
            };
            let v1 = evaluate(&e, &b);
            let v2 = evaluate(&reparsed, &b);
            match (v1, v2) {
                (Ok(a), Ok(c)) if a.is_finite() && c.is_finite() => {
                    prop_assert!(
                        (a - c).abs() <= 1e-14 * (1.0 + a.abs()),
                        "`{text}`: {a} vs {c}"
                    );
                    // And rendering is a fixed point from here on.
                    let text2 = reparsed.to_string();
                    let third = parse_expression(&text2, &syms).unwrap();
                    prop_assert_eq!(&reparsed, &third, "`{}` vs `{}`", text, text2);
                }
                _ => {}
            }
        }

        // D is linear: D(a*e1 + b*e2) = a*D(e1) + b*D(e2) pointwise.
        #[test]
        fn derivative_is_linear(
            e1 in arb_expr(),
            e2 in arb_expr(),
            a in -2.0..2.0f64,
            bcoef in -2.0..2.0f64,
            binds in arb_bindings(),
        ) {
            let combo = Expr::Add(
                Box::new(Expr::Mul(Box::new(Expr::Const(a)), Box::new(e1.clone()))),
                Box::new(Expr::Mul(Box::new(Expr::Const(bcoef)), Box::new(e2.clone()))),
            );
            let lhs = evaluate(&differentiate(&combo, "x"), &binds);
            let d1 = evaluate(&differentiate(&e1, "x"), &binds);
            let d2 = evaluate(&differentiate(&e2, "x"), &binds);
            if let (Ok(l), Ok(v1), Ok(v2)) = (lhs, d1, d2) {
                let r = a * v1 + bcoef * v2;
                if l.is_finite() && r.is_finite() && l.abs() <= 1e6 && r.abs() <= 1e6 {
                    prop_assert!((l - r).abs() <= 1e-12 * (1.0 + r.abs()), "{l} vs {r}");
                }
            }
        }
    }
}
