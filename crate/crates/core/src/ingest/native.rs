//! Native `.qum` text format. The grammar is documented in
//! `docs/native-format.md`; the parser is a small recursive descent over a
//! token stream that remembers line numbers for diagnostics.

use thiserror::Error;

use super::{split_path, OpRef, RawAttribute, RawComponent, RawMachine, RawModel, RawState, RawTransition};
use crate::model::{ConfigOperator, RateEntry, TransitionKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NativeError {
    #[error("line {line}: expected {expected}")]
    Syntax { line: usize, expected: String },
}

impl NativeError {
    pub fn line(&self) -> usize {
        match self {
            NativeError::Syntax { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Num(f64),
    Sym(&'static str),
}

const SYMBOLS: [&str; 8] = ["->", "..", "{", "}", "=", ":", "[", "]"];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '.'
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, NativeError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '"' {
            let start_line = line;
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => {
                        return Err(NativeError::Syntax {
                            line: start_line,
                            expected: "closing '\"'".into(),
                        })
                    }
                    Some('"') => break,
                    Some('\\') if matches!(chars.get(i + 1), Some('"') | Some('\\')) => {
                        s.push(chars[i + 1]);
                        i += 2;
                        continue;
                    }
                    Some(&ch) => {
                        if ch == '\n' {
                            line += 1;
                        }
                        s.push(ch);
                    }
                }
                i += 1;
            }
            i += 1;
            out.push((Tok::Str(s), start_line));
        } else if c.is_ascii_digit()
            || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '+' || d == '-') && matches!(chars[i - 1], 'e' | 'E');
                let dot = d == '.' && chars.get(i + 1) != Some(&'.');
                if d.is_ascii_digit() || d == 'e' || d == 'E' || dot || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| NativeError::Syntax {
                line,
                expected: format!("a number, found '{text}'"),
            })?;
            out.push((Tok::Num(value), line));
        } else if is_word_char(c) && !(c == '.' && chars.get(i + 1) == Some(&'.')) {
            let start = i;
            while i < chars.len() {
                let d = chars[i];
                let hyphen = d == '-'
                    && chars.get(i + 1).is_some_and(|n| n.is_alphabetic());
                if is_word_char(d) && !(d == '.' && chars.get(i + 1) == Some(&'.')) || hyphen {
                    i += 1;
                } else {
                    break;
                }
            }
            if chars.get(i) == Some(&'(') && chars.get(i + 1) == Some(&')') {
                i += 2;
            }
            out.push((Tok::Word(chars[start..i].iter().collect()), line));
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
                Some(s) => {
                    out.push((Tok::Sym(s), line));
                    i += s.len();
                }
                None if c == '*' => {
                    out.push((Tok::Word("*".into()), line));
                    i += 1;
                }
                None => {
                    return Err(NativeError::Syntax {
                        line,
                        expected: format!("a token, found '{c}'"),
                    })
                }
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    last_line: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn line(&self) -> usize {
        self.toks.get(self.pos).map_or(self.last_line, |t| t.1)
    }

    fn err<T>(&self, expected: impl Into<String>) -> Result<T, NativeError> {
        Err(NativeError::Syntax {
            line: self.line(),
            expected: expected.into(),
        })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(x)) if x == w)
    }

    fn eat_word(&mut self, w: &str) -> bool {
        let hit = self.is_word(w);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        let hit = self.is_sym(s);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), NativeError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("'{s}'"))
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), NativeError> {
        if self.eat_word(w) {
            Ok(())
        } else {
            self.err(format!("'{w}'"))
        }
    }

    /// A bare word or a quoted string.
    fn name(&mut self, what: &str) -> Result<String, NativeError> {
        match self.peek() {
            Some(Tok::Word(w)) if w != "*" => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err(what),
        }
    }

    fn string(&mut self, what: &str) -> Result<String, NativeError> {
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err(what),
        }
    }

    fn number(&mut self, what: &str) -> Result<f64, NativeError> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => self.err(what),
        }
    }

    fn integer(&mut self, what: &str) -> Result<i64, NativeError> {
        let line = self.line();
        let v = self.number(what)?;
        if v.fract() != 0.0 || v.abs() > 1e15 {
            return Err(NativeError::Syntax {
                line,
                expected: what.to_string(),
            });
        }
        Ok(v as i64)
    }

    fn path(&mut self) -> Result<Vec<String>, NativeError> {
        match self.next() {
            Some(Tok::Word(w)) => Ok(split_path(&w)),
            Some(Tok::Str(s)) => Ok(split_path(&s)),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                self.err("a state path or '*'")
            }
        }
    }

    fn model(&mut self) -> Result<RawModel, NativeError> {
        let mut model = RawModel::default();
        if self.eat_word("model") {
            model.name = self.name("a model name")?;
        }
        while self.peek().is_some() {
            if self.eat_word("component") {
                model.components.push(self.component()?);
            } else {
                return self.err("'component'");
            }
        }
        if model.components.is_empty() {
            return Err(NativeError::Syntax {
                line: self.toks.last().map_or(1, |t| t.1).max(1),
                expected: if model.name.is_empty() && self.toks.is_empty() {
                    "'model' or 'component'".into()
                } else {
                    "'component'".into()
                },
            });
        }
        Ok(model)
    }

    fn component(&mut self) -> Result<RawComponent, NativeError> {
        let mut c = RawComponent {
            name: self.name("a component name")?,
            ..RawComponent::default()
        };
        self.expect_sym("{")?;
        loop {
            if self.eat_sym("}") {
                return Ok(c);
            } else if self.eat_word("rates") {
                self.expect_sym("{")?;
                while !self.eat_sym("}") {
                    let name = self.name("a rate name or '}'")?;
                    self.expect_sym("=")?;
                    let rate = self.number("a rate value")?;
                    c.rates.push(RateEntry { name, rate });
                }
            } else if self.eat_word("attribute") {
                let name = self.name("an attribute name")?;
                self.expect_sym(":")?;
                self.expect_sym("[")?;
                let lo = self.integer("an integer lower bound")?;
                self.expect_sym("..")?;
                let hi = self.integer("an integer upper bound")?;
                self.expect_sym("]")?;
                let init = if self.eat_word("init") {
                    self.integer("an integer initial value")?
                } else {
                    lo
                };
                c.attributes.push(RawAttribute { name, lo, hi, init });
            } else if self.eat_word("operations") {
                self.expect_sym("{")?;
                while !self.eat_sym("}") {
                    let op = self.name("an operation name or '}'")?;
                    c.operations.push(op.trim_end_matches("()").to_string());
                }
            } else if self.eat_word("normal") {
                if c.normal.is_some() {
                    return self.err("at most one 'normal' machine");
                }
                c.normal = Some(self.machine()?);
            } else if self.eat_word("failure") {
                c.failures.push(self.machine()?);
            } else {
                return self
                    .err("'rates', 'attribute', 'operations', 'normal', 'failure' or '}'");
            }
        }
    }

    fn machine(&mut self) -> Result<RawMachine, NativeError> {
        let mut m = RawMachine {
            name: self.name("a machine name")?,
            ..RawMachine::default()
        };
        self.expect_sym("{")?;
        loop {
            if self.eat_sym("}") {
                return Ok(m);
            } else if self.eat_word("state") {
                m.states.push(self.state()?);
            } else if self.eat_word("transition") {
                m.transitions.push(self.transition()?);
            } else {
                return self.err("'state', 'transition' or '}'");
            }
        }
    }

    fn state(&mut self) -> Result<RawState, NativeError> {
        let mut s = RawState {
            name: self.name("a state name")?,
            ..RawState::default()
        };
        loop {
            if self.eat_word("initial") {
                s.initial = true;
            } else if self.eat_word("entry") {
                let op = self.name("an operation reference")?;
                s.entry_ops.push(OpRef::parse(&op));
            } else if self.eat_word("config") {
                let name = self.name("a configuration name")?;
                let op = match self.next() {
                    Some(Tok::Word(w)) => ConfigOperator::parse(&w),
                    _ => None,
                };
                match op {
                    Some(op) => s.config_tags.push((name, op)),
                    None => {
                        self.pos -= 1;
                        return self.err("'AND' or 'OR'");
                    }
                }
            } else if self.eat_sym("{") {
                while !self.eat_sym("}") {
                    self.expect_word("state")?;
                    s.children.push(self.state()?);
                }
                return Ok(s);
            } else {
                return Ok(s);
            }
        }
    }

    fn transition(&mut self) -> Result<RawTransition, NativeError> {
        let source = self.path()?;
        self.expect_sym("->")?;
        let target = self.path()?;
        let kind = match self.peek() {
            Some(Tok::Word(w)) => TransitionKind::from_keyword(w),
            _ => None,
        };
        let Some(kind) = kind else {
            return self.err("a transition kind (plain, stochastic, abstract-stochastic, failure, abstract-failure, repair, abstract-repair, call, trigger)");
        };
        self.pos += 1;
        let mut t = RawTransition {
            source,
            target,
            kind,
            ..RawTransition::default()
        };
        match kind {
            TransitionKind::Stochastic | TransitionKind::Failure | TransitionKind::Repair => {
                t.rate = Some(self.number("a rate value")?);
            }
            TransitionKind::AbstractStochastic
            | TransitionKind::AbstractFailure
            | TransitionKind::AbstractRepair => {
                t.rate_name = Some(self.name("a rate name")?);
            }
            TransitionKind::OperationCall | TransitionKind::OperationTrigger => {
                let op = self.name("an operation reference")?;
                t.operation = Some(OpRef::parse(&op));
            }
            TransitionKind::Plain => {}
        }
        loop {
            if self.eat_word("rate") {
                t.rate = Some(self.number("a rate value")?);
            } else if self.eat_word("label") {
                t.label = Some(self.name("a label")?);
            } else if self.eat_word("guard") {
                t.guard = Some(self.string("a quoted guard expression")?);
            } else if self.eat_word("update") {
                t.updates.push(self.string("a quoted update 'x = expr'")?);
            } else {
                return Ok(t);
            }
        }
    }
}

/// Parses the native text format. Never panics; any malformed input yields
/// a [`NativeError::Syntax`] carrying a 1-based line number.
pub fn parse_native(src: &str) -> Result<RawModel, NativeError> {
    let toks = lex(src)?;
    let last_line = toks.last().map_or(1, |t| t.1);
    Parser {
        toks,
        pos: 0,
        last_line,
    }
    .model()
}
