//! Parser and interpreter for the PRISM subset the generator emits. It is the
//! grammar checker for generated text and, through [`CheckedModel::explore`],
//! an independent reading of the model's semantics.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use thiserror::Error;

use crate::expr::{tokenize, Expr, ExprParser, ExprSyntaxError, Lookup, Tok, Update, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct CheckError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrismVar {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    pub init: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrismCommand {
    pub action: Option<String>,
    pub guard: Expr,
    pub alternatives: Vec<(Expr, Vec<Update>)>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrismModule {
    pub name: String,
    pub vars: Vec<PrismVar>,
    pub commands: Vec<PrismCommand>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckedModel {
    pub model_type: String,
    pub constants: Vec<(String, Option<Expr>)>,
    pub formulas: Vec<(String, Expr)>,
    pub modules: Vec<PrismModule>,
    pub labels: Vec<(String, Expr)>,
}

/// Explicit state space of a checked model: states are variable valuations
/// in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Explored {
    pub vars: Vec<String>,
    pub states: Vec<Vec<i64>>,
    /// `(src, dst, rate, action)`.
    pub transitions: Vec<(usize, usize, f64, Option<String>)>,
}

struct P<'a> {
    src: &'a str,
    inner: ExprParser<'a>,
}

impl<'a> P<'a> {
    fn line_at(&self, col: usize) -> usize {
        let end = col.saturating_sub(1).min(self.src.len());
        1 + self.src.as_bytes()[..end].iter().filter(|b| **b == b'\n').count()
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, CheckError> {
        Err(CheckError {
            line: self.line_at(self.inner.col()),
            message: message.into(),
        })
    }

    fn from_expr(&self, e: ExprSyntaxError) -> CheckError {
        CheckError {
            line: self.line_at(e.column),
            message: e.message,
        }
    }

    fn expr(&mut self) -> Result<Expr, CheckError> {
        self.inner.expr().map_err(|e| self.from_expr(e))
    }

    fn sym(&mut self, s: &str) -> Result<(), CheckError> {
        if self.inner.eat_sym(s) {
            Ok(())
        } else {
            self.fail(format!("expected '{s}'"))
        }
    }

    fn ident(&mut self) -> Result<String, CheckError> {
        match self.inner.peek() {
            Some(Tok::Ident(id)) => {
                let id = id.clone();
                self.inner.pos += 1;
                Ok(id)
            }
            _ => self.fail("expected identifier"),
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.inner.peek(), Some(Tok::Ident(id)) if id == kw)
    }

    fn kw(&mut self, kw: &str) -> bool {
        let hit = self.is_kw(kw);
        if hit {
            self.inner.pos += 1;
        }
        hit
    }
}

const RESERVED: [&str; 12] = [
    "ctmc", "const", "double", "int", "bool", "formula", "module", "endmodule", "label", "init",
    "true", "false",
];

/// Parses and symbol-checks a model in the emitted PRISM subset.
pub fn check(src: &str) -> Result<CheckedModel, CheckError> {
    let toks = tokenize(src).map_err(|e| CheckError {
        line: 1 + src.as_bytes()[..e.column.saturating_sub(1).min(src.len())]
            .iter()
            .filter(|b| **b == b'\n')
            .count(),
        message: e.message,
    })?;
    let mut p = P {
        src,
        inner: ExprParser::new(&toks, src.len() + 1),
    };
    let mut model = CheckedModel::default();
    for t in ["ctmc", "dtmc", "mdp"] {
        if p.kw(t) {
            model.model_type = t.to_string();
        }
    }
    if model.model_type != "ctmc" {
        return p.fail("expected 'ctmc'");
    }
    while p.inner.peek().is_some() {
        if p.kw("const") {
            let _ = p.kw("double") || p.kw("int") || p.kw("bool");
            let name = p.ident()?;
            let value = if p.inner.eat_sym("=") { Some(p.expr()?) } else { None };
            p.sym(";")?;
            model.constants.push((name, value));
        } else if p.kw("formula") {
            let name = p.ident()?;
            p.sym("=")?;
            let body = p.expr()?;
            p.sym(";")?;
            model.formulas.push((name, body));
        } else if p.kw("label") {
            let name = match p.inner.peek() {
                Some(Tok::Str(s)) => s.clone(),
                _ => return p.fail("expected quoted label name"),
            };
            p.inner.pos += 1;
            p.sym("=")?;
            let body = p.expr()?;
            p.sym(";")?;
            model.labels.push((name, body));
        } else if p.kw("module") {
            model.modules.push(module(&mut p)?);
        } else {
            return p.fail("expected 'const', 'formula', 'module' or 'label'");
        }
    }
    symbols(&model)?;
    Ok(model)
}

fn module(p: &mut P<'_>) -> Result<PrismModule, CheckError> {
    let name = p.ident()?;
    let mut m = PrismModule {
        name,
        vars: Vec::new(),
        commands: Vec::new(),
    };
    loop {
        if p.kw("endmodule") {
            return Ok(m);
        }
        if p.inner.is_sym("[") {
            let line = p.line_at(p.inner.col());
            p.inner.pos += 1;
            let action = match p.inner.peek() {
                Some(Tok::Ident(_)) => Some(p.ident()?),
                _ => None,
            };
            p.sym("]")?;
            let guard = p.expr()?;
            p.sym("->")?;
            let mut alternatives = Vec::new();
            loop {
                let rate = p.expr()?;
                p.sym(":")?;
                alternatives.push((rate, updates(p)?));
                if !p.inner.eat_sym("+") {
                    break;
                }
            }
            p.sym(";")?;
            m.commands.push(PrismCommand {
                action,
                guard,
                alternatives,
                line,
            });
        } else if matches!(p.inner.peek(), Some(Tok::Ident(_))) && !p.is_kw("endmodule") {
            let name = p.ident()?;
            p.sym(":")?;
            p.sym("[")?;
            let lo = const_int(p)?;
            p.sym("..")?;
            let hi = const_int(p)?;
            p.sym("]")?;
            let init = if p.kw("init") { const_int(p)? } else { lo };
            p.sym(";")?;
            if lo > hi || init < lo || init > hi {
                return p.fail(format!("variable '{name}' has an empty range or bad initial value"));
            }
            m.vars.push(PrismVar { name, lo, hi, init });
        } else {
            return p.fail("expected variable declaration, command or 'endmodule'");
        }
    }
}

fn const_int(p: &mut P<'_>) -> Result<i64, CheckError> {
    let e = p.expr()?;
    let none = |_: &str| -> Option<i64> { None };
    match e.eval(&none) {
        Ok(Value::Int(i)) => Ok(i),
        _ => p.fail("expected an integer constant"),
    }
}

fn updates(p: &mut P<'_>) -> Result<Vec<Update>, CheckError> {
    if p.kw("true") {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    loop {
        p.sym("(")?;
        let var = p.ident()?;
        p.sym("'")?;
        p.sym("=")?;
        let value = p.expr()?;
        p.sym(")")?;
        out.push(Update { var, value });
        if !p.inner.eat_sym("&") {
            return Ok(out);
        }
    }
}

fn symbols(m: &CheckedModel) -> Result<(), CheckError> {
    let err = |line: usize, message: String| Err(CheckError { line, message });
    let mut names: HashSet<&str> = HashSet::new();
    let mut owner: HashMap<&str, &str> = HashMap::new();
    for md in &m.modules {
        if !names.insert(&md.name) {
            return err(0, format!("duplicate module '{}'", md.name));
        }
        for v in &md.vars {
            if RESERVED.contains(&v.name.as_str()) || owner.insert(&v.name, &md.name).is_some() {
                return err(0, format!("duplicate or reserved variable '{}'", v.name));
            }
        }
    }
    for (c, _) in &m.constants {
        if owner.contains_key(c.as_str()) || !names.insert(c) {
            return err(0, format!("duplicate identifier '{c}'"));
        }
    }
    let mut formulas: HashSet<&str> = HashSet::new();
    for (f, body) in &m.formulas {
        if owner.contains_key(f.as_str()) || !names.insert(f) {
            return err(0, format!("duplicate identifier '{f}'"));
        }
        for v in body.variables() {
            if !owner.contains_key(v.as_str()) && !formulas.contains(v.as_str()) {
                return err(0, format!("formula '{f}' uses undeclared '{v}'"));
            }
        }
        formulas.insert(f);
    }
    let known = |v: &str| {
        owner.contains_key(v) || formulas.contains(v) || m.constants.iter().any(|(c, _)| c == v)
    };
    let mut labels = HashSet::new();
    for (l, body) in &m.labels {
        if !labels.insert(l.as_str()) {
            return err(0, format!("duplicate label \"{l}\""));
        }
        if let Some(v) = body.variables().into_iter().find(|v| !known(v)) {
            return err(0, format!("label \"{l}\" uses undeclared '{v}'"));
        }
    }
    for md in &m.modules {
        for c in &md.commands {
            if let Some(v) = c.guard.variables().into_iter().find(|v| !known(v)) {
                return err(c.line, format!("guard uses undeclared '{v}'"));
            }
            for (rate, ups) in &c.alternatives {
                if let Some(v) = rate.variables().into_iter().find(|v| !known(v)) {
                    return err(c.line, format!("rate uses undeclared '{v}'"));
                }
                let mut seen = HashSet::new();
                for u in ups {
                    if owner.get(u.var.as_str()) != Some(&md.name.as_str()) {
                        return err(c.line, format!("'{}' is not a variable of module {}", u.var, md.name));
                    }
                    if !seen.insert(&u.var) {
                        return err(c.line, format!("'{}' updated twice", u.var));
                    }
                    if let Some(v) = u.value.variables().into_iter().find(|v| !known(v)) {
                        return err(c.line, format!("update uses undeclared '{v}'"));
                    }
                }
            }
        }
    }
    Ok(())
}

struct Env<'a> {
    model: &'a CheckedModel,
    index: &'a HashMap<String, usize>,
    vals: &'a [i64],
}

impl Lookup for Env<'_> {
    fn var(&self, name: &str) -> Option<Value> {
        if let Some(&i) = self.index.get(name) {
            return Some(Value::Int(self.vals[i]));
        }
        let (_, body) = self.model.formulas.iter().find(|(f, _)| f == name)?;
        body.eval(self).ok()
    }

    fn label(&self, name: &str) -> Option<bool> {
        let (_, body) = self.model.labels.iter().find(|(l, _)| l == name)?;
        body.eval_bool(self).ok()
    }
}

/// Enabled `(rate, updates)` choices of one module for an action.
fn enabled<'m>(
    env: &Env<'_>,
    m: &'m PrismModule,
    action: Option<&str>,
) -> Result<Vec<(f64, &'m Vec<Update>)>, CheckError> {
    let fail = |line: usize, message: String| CheckError { line, message };
    let mut out = Vec::new();
    for c in m.commands.iter().filter(|c| c.action.as_deref() == action) {
        let on = c.guard.eval_bool(env).map_err(|e| fail(c.line, e.to_string()))?;
        if !on {
            continue;
        }
        for (rate, ups) in &c.alternatives {
            let r = rate
                .eval(env)
                .ok()
                .and_then(|v| v.as_real().ok())
                .ok_or_else(|| fail(c.line, "rate is not numeric".into()))?;
            out.push((r, ups));
        }
    }
    Ok(out)
}

impl CheckedModel {
    pub fn var_names(&self) -> Vec<String> {
        self.modules
            .iter()
            .flat_map(|m| m.vars.iter().map(|v| v.name.clone()))
            .collect()
    }

    pub fn command_count(&self) -> usize {
        self.modules.iter().map(|m| m.commands.len()).sum()
    }

    /// Whether a state formula only refers to declared variables, formulas
    /// and labels.
    pub fn check_state_formula(&self, text: &str) -> Result<(), CheckError> {
        let e = crate::expr::parse_expr(text).map_err(|e| CheckError {
            line: 1,
            message: e.message,
        })?;
        let vars = self.var_names();
        for v in e.variables() {
            if !vars.contains(&v) && !self.formulas.iter().any(|(f, _)| *f == v) {
                return Err(CheckError {
                    line: 1,
                    message: format!("undeclared identifier '{v}'"),
                });
            }
        }
        for l in e.labels() {
            if !self.labels.iter().any(|(n, _)| *n == l) {
                return Err(CheckError {
                    line: 1,
                    message: format!("undeclared label \"{l}\""),
                });
            }
        }
        Ok(())
    }

    /// Evaluates a state formula in a valuation of [`Self::var_names`].
    pub fn eval_state(&self, e: &Expr, vals: &[i64]) -> Option<bool> {
        let index: HashMap<String, usize> = self
            .var_names()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, i))
            .collect();
        e.eval_bool(&Env { model: self, index: &index, vals }).ok()
    }

    /// Breadth-first exploration with PRISM's CTMC product semantics: local
    /// commands interleave, commands sharing an action synchronize across
    /// every module that uses the action, and rates multiply.
    pub fn explore(&self, cap: usize) -> Result<Explored, CheckError> {
        let vars = self.var_names();
        let index: HashMap<String, usize> =
            vars.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
        let bounds: Vec<(i64, i64)> = self
            .modules
            .iter()
            .flat_map(|m| m.vars.iter().map(|v| (v.lo, v.hi)))
            .collect();
        let init: Vec<i64> = self
            .modules
            .iter()
            .flat_map(|m| m.vars.iter().map(|v| v.init))
            .collect();
        let mut actions: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, m) in self.modules.iter().enumerate() {
            for c in &m.commands {
                if let Some(a) = &c.action {
                    let users = actions.entry(a.as_str()).or_default();
                    if users.last() != Some(&i) {
                        users.push(i);
                    }
                }
            }
        }
        let fail = |line: usize, message: String| CheckError { line, message };

        let mut ids: HashMap<Vec<i64>, usize> = HashMap::new();
        let mut states = vec![init.clone()];
        ids.insert(init, 0);
        let mut queue = VecDeque::from([0usize]);
        let mut transitions = Vec::new();
        while let Some(s) = queue.pop_front() {
            let vals = states[s].clone();
            let env = Env {
                model: self,
                index: &index,
                vals: &vals,
            };
            let mut moves: Vec<(f64, Vec<&Vec<Update>>, Option<String>)> = Vec::new();
            for m in &self.modules {
                for (r, ups) in enabled(&env, m, None)? {
                    moves.push((r, vec![ups], None));
                }
            }
            for (a, users) in &actions {
                let mut combos: Vec<(f64, Vec<&Vec<Update>>)> = vec![(1.0, Vec::new())];
                for &u in users {
                    let choices = enabled(&env, &self.modules[u], Some(a))?;
                    let mut next = Vec::new();
                    for (r0, ups0) in &combos {
                        for (r, ups) in &choices {
                            let mut v = ups0.clone();
                            v.push(*ups);
                            next.push((r0 * r, v));
                        }
                    }
                    combos = next;
                }
                for (r, ups) in combos {
                    moves.push((r, ups, Some(a.to_string())));
                }
            }
            for (rate, ups, action) in moves {
                let mut next = vals.clone();
                for u in ups.iter().flat_map(|u| u.iter()) {
                    let i = index[&u.var];
                    let v = u
                        .value
                        .eval(&env)
                        .and_then(|v| v.as_int())
                        .map_err(|e| fail(0, e.to_string()))?;
                    if v < bounds[i].0 || v > bounds[i].1 {
                        return Err(fail(0, format!("'{}' leaves its range (value {v})", u.var)));
                    }
                    next[i] = v;
                }
                let id = match ids.get(&next) {
                    Some(&id) => id,
                    None => {
                        if states.len() >= cap {
                            return Err(fail(0, format!("more than {cap} states")));
                        }
                        let id = states.len();
                        ids.insert(next.clone(), id);
                        states.push(next);
                        queue.push_back(id);
                        id
                    }
                };
                transitions.push((s, id, rate, action));
            }
        }
        Ok(Explored {
            vars,
            states,
            transitions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "ctmc\n\nconst double T;\n\nmodule a\n  a_state : [0..1] init 0;\n  [] a_state=0 -> 0.5 : (a_state'=1);\n  [go] a_state=1 -> 2.0 : (a_state'=0);\nendmodule\n\nmodule b\n  b_state : [0..1] init 0;\n  [go] b_state=0 -> 1.0 : (b_state'=1);\nendmodule\n\nlabel \"up\" = (b_state = 1);\n";

    #[test]
    fn parses_and_explores() {
        let m = check(SMALL).unwrap();
        assert_eq!(m.modules.len(), 2);
        assert_eq!(m.command_count(), 3);
        let x = m.explore(100).unwrap();
        // (0,0) -0.5-> (1,0) -go 2.0-> (0,1) -0.5-> (1,1), go blocked.
        assert_eq!(x.states.len(), 4);
        assert_eq!(x.transitions.len(), 3);
        assert!(m.check_state_formula("\"up\" & a_state=0").is_ok());
        assert!(m.check_state_formula("c_state=0").is_err());
    }

    #[test]
    fn reports_lines() {
        let bad = SMALL.replace("[go] b_state=0 -> 1.0 : (b_state'=1);", "[go] b_state=0 -> 1.0 (b_state'=1);");
        assert_eq!(check(&bad).unwrap_err().line, 13);
        let undeclared = SMALL.replace("(b_state'=1);", "(a_state'=1);");
        assert!(check(&undeclared).unwrap_err().message.contains("not a variable of module b"));
        assert!(check("").is_err());
        assert!(check("ctmc module x").is_err());
    }
}
