//! Integer/boolean expressions in the PRISM-subset syntax.
//!
//! The same AST is used for transition guards in the model front ends, for
//! commands and labels in the PRISM checker, and for CSL state formulas.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "|",
            BinOp::And => "&",
            BinOp::Eq => "=",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Real(f64),
    Bool(bool),
    Var(String),
    /// A quoted PRISM label reference, `"name"`.
    Label(String),
    Not(Box<Expr>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Min(Vec<Expr>),
    Max(Vec<Expr>),
    /// A parenthesised sub-expression; kept so rendering is faithful to the source.
    Paren(Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Bool(bool),
}

impl Value {
    pub fn as_bool(self) -> Result<bool, EvalError> {
        match self {
            Value::Bool(b) => Ok(b),
            other => Err(EvalError::Type(format!("expected boolean, found {other:?}"))),
        }
    }

    pub fn as_int(self) -> Result<i64, EvalError> {
        match self {
            Value::Int(i) => Ok(i),
            other => Err(EvalError::Type(format!("expected integer, found {other:?}"))),
        }
    }

    pub fn as_real(self) -> Result<f64, EvalError> {
        match self {
            Value::Int(i) => Ok(i as f64),
            Value::Real(r) => Ok(r),
            Value::Bool(_) => Err(EvalError::Type("expected number, found boolean".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown identifier '{0}'")]
    Unknown(String),
    #[error("type error: {0}")]
    Type(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("expression syntax error at column {column}: {message}")]
pub struct ExprSyntaxError {
    pub column: usize,
    pub message: String,
}

/// Identifier lookup used during evaluation. Labels are looked up with the
/// `Label` variant of [`Lookup::label`].
pub trait Lookup {
    fn var(&self, name: &str) -> Option<Value>;
    fn label(&self, _name: &str) -> Option<bool> {
        None
    }
}

impl<F: Fn(&str) -> Option<i64>> Lookup for F {
    fn var(&self, name: &str) -> Option<Value> {
        self(name).map(Value::Int)
    }
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn paren(inner: Expr) -> Expr {
        Expr::Paren(Box::new(inner))
    }

    /// Folds `terms` with `op`, left-associatively. Returns `None` for no terms.
    pub fn join(op: BinOp, terms: impl IntoIterator<Item = Expr>) -> Option<Expr> {
        terms.into_iter().reduce(|acc, t| Expr::bin(op, acc, t))
    }

    pub fn eval(&self, env: &dyn Lookup) -> Result<Value, EvalError> {
        Ok(match self {
            Expr::Int(i) => Value::Int(*i),
            Expr::Real(r) => Value::Real(*r),
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Var(name) => env.var(name).ok_or_else(|| EvalError::Unknown(name.clone()))?,
            Expr::Label(name) => Value::Bool(
                env.label(name)
                    .ok_or_else(|| EvalError::Unknown(format!("\"{name}\"")))?,
            ),
            Expr::Paren(inner) => inner.eval(env)?,
            Expr::Not(inner) => Value::Bool(!inner.eval(env)?.as_bool()?),
            Expr::Neg(inner) => match inner.eval(env)? {
                Value::Int(i) => Value::Int(-i),
                Value::Real(r) => Value::Real(-r),
                Value::Bool(_) => return Err(EvalError::Type("cannot negate boolean".into())),
            },
            Expr::Min(args) | Expr::Max(args) => {
                let is_min = matches!(self, Expr::Min(_));
                let mut vals = args.iter().map(|a| a.eval(env));
                let first = vals
                    .next()
                    .ok_or_else(|| EvalError::Type("min/max needs arguments".into()))??;
                vals.try_fold(first, |acc, v| {
                    let v = v?;
                    Ok(match (acc, v) {
                        (Value::Int(a), Value::Int(b)) => {
                            Value::Int(if is_min { a.min(b) } else { a.max(b) })
                        }
                        (a, b) => {
                            let (a, b) = (a.as_real()?, b.as_real()?);
                            Value::Real(if is_min { a.min(b) } else { a.max(b) })
                        }
                    })
                })?
            }
            Expr::Bin(op, lhs, rhs) => {
                let l = lhs.eval(env)?;
                match op {
                    BinOp::And => {
                        if !l.as_bool()? {
                            return Ok(Value::Bool(false));
                        }
                        Value::Bool(rhs.eval(env)?.as_bool()?)
                    }
                    BinOp::Or => {
                        if l.as_bool()? {
                            return Ok(Value::Bool(true));
                        }
                        Value::Bool(rhs.eval(env)?.as_bool()?)
                    }
                    _ => arith_or_compare(*op, l, rhs.eval(env)?)?,
                }
            }
        })
    }

    pub fn eval_bool(&self, env: &dyn Lookup) -> Result<bool, EvalError> {
        self.eval(env)?.as_bool()
    }

    /// Every variable name referenced, in first-occurrence order.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expr::Var(v) = e {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        });
        out
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expr::Label(v) = e {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        });
        out
    }

    fn walk(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Not(e) | Expr::Neg(e) | Expr::Paren(e) => e.walk(f),
            Expr::Bin(_, l, r) => {
                l.walk(f);
                r.walk(f);
            }
            Expr::Min(args) | Expr::Max(args) => args.iter().for_each(|a| a.walk(f)),
            _ => {}
        }
    }

    /// Returns a copy with every variable renamed through `rename`.
    pub fn rename(&self, rename: &dyn Fn(&str) -> String) -> Expr {
        match self {
            Expr::Var(v) => Expr::Var(rename(v)),
            Expr::Not(e) => Expr::Not(Box::new(e.rename(rename))),
            Expr::Neg(e) => Expr::Neg(Box::new(e.rename(rename))),
            Expr::Paren(e) => Expr::Paren(Box::new(e.rename(rename))),
            Expr::Bin(op, l, r) => Expr::bin(*op, l.rename(rename), r.rename(rename)),
            Expr::Min(args) => Expr::Min(args.iter().map(|a| a.rename(rename)).collect()),
            Expr::Max(args) => Expr::Max(args.iter().map(|a| a.rename(rename)).collect()),
            other => other.clone(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.precedence(),
            Expr::Not(_) => 3,
            Expr::Neg(_) => 7,
            _ => 8,
        }
    }
}

fn arith_or_compare(op: BinOp, l: Value, r: Value) -> Result<Value, EvalError> {
    use BinOp::*;
    if let (Value::Bool(a), Value::Bool(b)) = (l, r) {
        return match op {
            Eq => Ok(Value::Bool(a == b)),
            Ne => Ok(Value::Bool(a != b)),
            _ => Err(EvalError::Type(format!("operator {} on booleans", op.symbol()))),
        };
    }
    if let (Value::Int(a), Value::Int(b)) = (l, r) {
        return Ok(match op {
            Add => Value::Int(a + b),
            Sub => Value::Int(a - b),
            Mul => Value::Int(a * b),
            Eq => Value::Bool(a == b),
            Ne => Value::Bool(a != b),
            Lt => Value::Bool(a < b),
            Le => Value::Bool(a <= b),
            Gt => Value::Bool(a > b),
            Ge => Value::Bool(a >= b),
            And | Or => unreachable!(),
        });
    }
    let (a, b) = (l.as_real()?, r.as_real()?);
    Ok(match op {
        Add => Value::Real(a + b),
        Sub => Value::Real(a - b),
        Mul => Value::Real(a * b),
        Eq => Value::Bool(a == b),
        Ne => Value::Bool(a != b),
        Lt => Value::Bool(a < b),
        Le => Value::Bool(a <= b),
        Gt => Value::Bool(a > b),
        Ge => Value::Bool(a >= b),
        And | Or => unreachable!(),
    })
}

/// Renders a real number the way the emitters print rates: shortest
/// round-tripping form, always with a decimal point or exponent.
pub fn fmt_real(r: f64) -> String {
    let s = format!("{r:?}");
    if s.contains('e') {
        // `{:?}` gives "1e-6"; PRISM accepts it, but keep a mantissa point.
        let (m, e) = s.split_once('e').unwrap();
        let m = if m.contains('.') { m.to_string() } else { format!("{m}.0") };
        format!("{m}e{e}")
    } else {
        s
    }
}

impl fmt::Display for Expr {
    /// Comparisons and arithmetic are printed tight (`x=1`), boolean
    /// connectives spaced (`a & b`). Parentheses are inserted only where
    /// precedence requires them, plus wherever the AST carries `Paren`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(i) => write!(f, "{i}"),
            Expr::Real(r) => f.write_str(&fmt_real(*r)),
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Var(v) => f.write_str(v),
            Expr::Label(l) => write!(f, "\"{l}\""),
            Expr::Paren(e) => write!(f, "({e})"),
            Expr::Not(e) => {
                if e.precedence() < 3 {
                    write!(f, "!({e})")
                } else {
                    write!(f, "!{e}")
                }
            }
            Expr::Neg(e) => {
                if e.precedence() < 7 {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Min(args) | Expr::Max(args) => {
                f.write_str(if matches!(self, Expr::Min(_)) { "min(" } else { "max(" })?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Bin(op, l, r) => {
                let p = op.precedence();
                // Left-associative: the right operand needs parens at equal precedence.
                let lp = l.precedence() < p || (p == 4 && l.precedence() == 4);
                let rp = r.precedence() <= p;
                let sep = match op {
                    BinOp::And | BinOp::Or => format!(" {} ", op.symbol()),
                    _ => op.symbol().to_string(),
                };
                if lp {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                f.write_str(&sep)?;
                if rp {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Int(i64),
    Real(f64),
    Ident(String),
    Str(String),
    Sym(&'static str),
}

const SYMBOLS: [&str; 24] = [
    "<=", ">=", "!=", "->", "..", "=?", "'", "(", ")", "[", "]", "{", "}", ",", ";", ":", "&", "|",
    "!", "=", "<", ">", "+", "-",
];

/// Splits `src` into tokens, returning each with its 1-based column.
pub(crate) fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ExprSyntaxError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()))
        {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let mut real = false;
            // `0..3` is a range, not a real literal.
            if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1) != Some(&b'.') {
                real = true;
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
                    real = true;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let tok = if real {
                Tok::Real(text.parse().map_err(|_| err(col, "bad number"))?)
            } else {
                Tok::Int(text.parse().map_err(|_| err(col, "integer out of range"))?)
            };
            out.push((tok, col));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), col));
            continue;
        }
        if c == '"' {
            let start = i + 1;
            i += 1;
            while i < bytes.len() && bytes[i] != b'"' {
                i += 1;
            }
            if i >= bytes.len() {
                return Err(err(col, "unterminated string"));
            }
            out.push((Tok::Str(src[start..i].to_string()), col));
            i += 1;
            continue;
        }
        let rest = &src[i..];
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(sym) => {
                out.push((Tok::Sym(sym), col));
                i += sym.len();
            }
            None if c == '*' => {
                out.push((Tok::Sym("*"), col));
                i += 1;
            }
            None => return Err(err(col, &format!("unexpected character '{c}'"))),
        }
    }
    Ok(out)
}

fn err(column: usize, message: &str) -> ExprSyntaxError {
    ExprSyntaxError {
        column,
        message: message.to_string(),
    }
}

/// Recursive-descent parser over a token slice. Shared with the PRISM checker.
pub(crate) struct ExprParser<'a> {
    pub toks: &'a [(Tok, usize)],
    pub pos: usize,
    pub end_col: usize,
}

impl<'a> ExprParser<'a> {
    pub fn new(toks: &'a [(Tok, usize)], end_col: usize) -> Self {
        ExprParser { toks, pos: 0, end_col }
    }

    pub fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    pub fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |(_, c)| *c)
    }

    pub fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    pub fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn expect_sym(&mut self, s: &str) -> Result<(), ExprSyntaxError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(err(self.col(), &format!("expected '{s}'")))
        }
    }

    pub fn error(&self, message: &str) -> ExprSyntaxError {
        err(self.col(), message)
    }

    pub fn expr(&mut self) -> Result<Expr, ExprSyntaxError> {
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ExprSyntaxError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Sym(s)) => match *s {
                    "|" => BinOp::Or,
                    "&" => BinOp::And,
                    "=" => BinOp::Eq,
                    "!=" => BinOp::Ne,
                    "<" => BinOp::Lt,
                    "<=" => BinOp::Le,
                    ">" => BinOp::Gt,
                    ">=" => BinOp::Ge,
                    "+" => BinOp::Add,
                    "-" => BinOp::Sub,
                    "*" => BinOp::Mul,
                    _ => break,
                },
                _ => break,
            };
            let p = op.precedence();
            if p < min_prec {
                break;
            }
            self.pos += 1;
            let rhs = self.binary(p + 1)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprSyntaxError> {
        if self.eat_sym("!") {
            // `!` binds looser than comparisons, tighter than `&`.
            let inner = self.binary(4)?;
            return Ok(Expr::Not(Box::new(inner)));
        }
        if self.eat_sym("-") {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Int(i) => Expr::Int(-i),
                Expr::Real(r) => Expr::Real(-r),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ExprSyntaxError> {
        let col = self.col();
        let tok = self
            .peek()
            .cloned()
            .ok_or_else(|| err(col, "unexpected end of expression"))?;
        self.pos += 1;
        match tok {
            Tok::Int(i) => Ok(Expr::Int(i)),
            Tok::Real(r) => Ok(Expr::Real(r)),
            Tok::Str(s) => Ok(Expr::Label(s)),
            Tok::Ident(id) => match id.as_str() {
                "true" => Ok(Expr::Bool(true)),
                "false" => Ok(Expr::Bool(false)),
                "min" | "max" if self.is_sym("(") => {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.eat_sym(",") {
                        args.push(self.expr()?);
                    }
                    self.expect_sym(")")?;
                    Ok(if id == "min" { Expr::Min(args) } else { Expr::Max(args) })
                }
                _ => Ok(Expr::Var(id)),
            },
            Tok::Sym("(") => {
                let inner = self.expr()?;
                self.expect_sym(")")?;
                Ok(Expr::paren(inner))
            }
            Tok::Sym(s) => Err(err(col, &format!("unexpected '{s}'"))),
        }
    }
}

/// Parses a complete expression.
pub fn parse_expr(src: &str) -> Result<Expr, ExprSyntaxError> {
    let toks = tokenize(src)?;
    let mut p = ExprParser::new(&toks, src.len() + 1);
    let e = p.expr()?;
    if p.pos != toks.len() {
        return Err(p.error("trailing input"));
    }
    Ok(e)
}

/// An assignment `var = expr` (front ends) or `var' = expr` (PRISM).
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub var: String,
    pub value: Expr,
}

pub fn parse_update(src: &str) -> Result<Update, ExprSyntaxError> {
    let toks = tokenize(src)?;
    let mut p = ExprParser::new(&toks, src.len() + 1);
    let var = match p.peek() {
        Some(Tok::Ident(v)) => v.clone(),
        _ => return Err(p.error("expected variable name")),
    };
    p.pos += 1;
    p.eat_sym("'");
    p.expect_sym("=")?;
    let value = p.expr()?;
    if p.pos != toks.len() {
        return Err(p.error("trailing input"));
    }
    Ok(Update { var, value })
}
