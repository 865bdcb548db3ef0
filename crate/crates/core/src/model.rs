//! The validated dependability model, profile validation, and the integer
//! state encoding used by every downstream emitter.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::expr::{parse_expr, parse_update, Expr, Update};
use crate::ingest::{OpRef, RawComponent, RawMachine, RawModel, RawState, RawTransition};

/// Rates are events per hour throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEntry {
    pub name: String,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConfigOperator {
    And,
    Or,
}

impl ConfigOperator {
    pub fn parse(text: &str) -> Option<ConfigOperator> {
        match text.trim().to_ascii_uppercase().as_str() {
            "AND" => Some(ConfigOperator::And),
            "OR" => Some(ConfigOperator::Or),
            _ => None,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ConfigOperator::And => "&",
            ConfigOperator::Or => "|",
        }
    }
}

impl fmt::Display for ConfigOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfigOperator::And => "AND",
            ConfigOperator::Or => "OR",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TransitionKind {
    #[default]
    Plain,
    Stochastic,
    AbstractStochastic,
    Failure,
    AbstractFailure,
    Repair,
    AbstractRepair,
    OperationCall,
    OperationTrigger,
}

impl TransitionKind {
    pub const ALL: [TransitionKind; 9] = [
        TransitionKind::Plain,
        TransitionKind::Stochastic,
        TransitionKind::AbstractStochastic,
        TransitionKind::Failure,
        TransitionKind::AbstractFailure,
        TransitionKind::Repair,
        TransitionKind::AbstractRepair,
        TransitionKind::OperationCall,
        TransitionKind::OperationTrigger,
    ];

    pub fn is_abstract(self) -> bool {
        matches!(
            self,
            TransitionKind::AbstractStochastic
                | TransitionKind::AbstractFailure
                | TransitionKind::AbstractRepair
        )
    }

    pub fn needs_concrete_rate(self) -> bool {
        matches!(
            self,
            TransitionKind::Stochastic | TransitionKind::Failure | TransitionKind::Repair
        )
    }

    pub fn is_failure_entry(self) -> bool {
        matches!(self, TransitionKind::Failure | TransitionKind::AbstractFailure)
    }

    pub fn is_repair(self) -> bool {
        matches!(self, TransitionKind::Repair | TransitionKind::AbstractRepair)
    }

    /// Keyword used by the native format and in diagnostics.
    pub fn keyword(self) -> &'static str {
        match self {
            TransitionKind::Plain => "plain",
            TransitionKind::Stochastic => "stochastic",
            TransitionKind::AbstractStochastic => "abstract-stochastic",
            TransitionKind::Failure => "failure",
            TransitionKind::AbstractFailure => "abstract-failure",
            TransitionKind::Repair => "repair",
            TransitionKind::AbstractRepair => "abstract-repair",
            TransitionKind::OperationCall => "call",
            TransitionKind::OperationTrigger => "trigger",
        }
    }

    /// Profile stereotype name, for the stochastic kinds.
    pub fn stereotype(self) -> Option<&'static str> {
        Some(match self {
            TransitionKind::Stochastic => "QUMStochasticTransition",
            TransitionKind::AbstractStochastic => "QUMAbstractStochasticTransition",
            TransitionKind::Failure => "QUMFailureTransition",
            TransitionKind::AbstractFailure => "QUMAbstractFailureTransition",
            TransitionKind::Repair => "QUMRepairTransition",
            TransitionKind::AbstractRepair => "QUMAbstractRepairTransition",
            _ => return None,
        })
    }

    pub fn from_keyword(word: &str) -> Option<TransitionKind> {
        Self::ALL.into_iter().find(|k| k.keyword() == word)
    }

    pub fn from_stereotype(name: &str) -> Option<TransitionKind> {
        Self::ALL.into_iter().find(|k| k.stereotype() == Some(name))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    pub init: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub name: String,
    pub initial: bool,
    pub children: Vec<State>,
    pub entry_ops: Vec<OperationRef>,
    pub config_tags: Vec<(String, ConfigOperator)>,
}

impl State {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn initial_child(&self) -> Option<&State> {
        self.children.iter().find(|c| c.initial)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateMachine {
    pub name: String,
    pub states: Vec<State>,
    pub transitions: Vec<Transition>,
}

impl StateMachine {
    pub fn initial(&self) -> Option<&State> {
        self.states.iter().find(|s| s.initial)
    }

    /// Resolves a path of state names, starting at the top level.
    pub fn find(&self, path: &[String]) -> Option<&State> {
        let (first, rest) = path.split_first()?;
        let mut cur = self.states.iter().find(|s| &s.name == first)?;
        for name in rest {
            cur = cur.children.iter().find(|s| &s.name == name)?;
        }
        Some(cur)
    }
}

/// A resolved operation: `callee` provides it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OperationRef {
    pub callee: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub kind: TransitionKind,
    pub rate: Option<f64>,
    pub rate_name: Option<String>,
    pub operation: Option<OperationRef>,
    pub guard: Option<Expr>,
    pub updates: Vec<Update>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QumComponent {
    pub name: String,
    pub normal_machine: Option<StateMachine>,
    pub failure_machines: Vec<StateMachine>,
    pub rates: Vec<RateEntry>,
    pub attributes: Vec<Attribute>,
    pub operations: Vec<String>,
}

impl QumComponent {
    pub fn rate(&self, name: &str) -> Option<f64> {
        self.rates.iter().find(|r| r.name == name).map(|r| r.rate)
    }

    pub fn machines(&self) -> impl Iterator<Item = &StateMachine> {
        self.normal_machine.iter().chain(self.failure_machines.iter())
    }

    pub fn machine(&self, name: &str) -> Option<&StateMachine> {
        self.machines().find(|m| m.name == name)
    }
}

/// A state inside one of a component's machines.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateRef {
    pub component: String,
    pub machine: String,
    pub path: Vec<String>,
}

impl fmt::Display for StateRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.component, self.machine)?;
        for p in &self.path {
            write!(f, ".{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateConfiguration {
    pub name: String,
    pub operator: ConfigOperator,
    pub members: Vec<StateRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperationSignature {
    pub name: String,
    /// Component providing the operation (the callee).
    pub owner: String,
    /// Component whose machines call it, if any does.
    pub caller: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QumModel {
    pub model_name: String,
    pub components: Vec<QumComponent>,
    pub state_configs: Vec<StateConfiguration>,
    pub operations: Vec<OperationSignature>,
}

impl QumModel {
    pub fn component(&self, name: &str) -> Option<&QumComponent> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn config(&self, name: &str) -> Option<&StateConfiguration> {
        self.state_configs.iter().find(|c| c.name == name)
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("no rate named '{0}' in the owning component's Rates list")]
    MissingRate(String),
    #[error("dangling state reference '{path}' in {component}.{machine}")]
    DanglingStateRef {
        component: String,
        machine: String,
        path: String,
    },
    #[error("duplicate name '{name}' in {scope}")]
    DuplicateName { scope: String, name: String },
    #[error("component '{0}' declares no failure pattern machine")]
    EmptyFailureMachines(String),
    #[error("state configuration '{0}' is tagged with both AND and OR")]
    MixedOperatorConfig(String),
    #[error("{scope}: expected exactly one initial state, found {found}")]
    InitialState { scope: String, found: usize },
    #[error("rate '{name}' in component '{component}' must be positive and finite")]
    InvalidRate { component: String, name: String },
    #[error("{component}.{machine}: {kind} transition '{label}' {problem}")]
    InvalidTransition {
        component: String,
        machine: String,
        label: String,
        kind: &'static str,
        problem: String,
    },
    #[error("failure pattern {component}.{machine} has no failure transition entering it")]
    MissingFailureEntry { component: String, machine: String },
    #[error("{component}: unsupported guard or action '{text}': {reason}")]
    UnsupportedAction {
        component: String,
        text: String,
        reason: String,
    },
    #[error("{component}: unknown attribute '{name}'")]
    UnknownAttribute { component: String, name: String },
    #[error("{component}: attribute '{name}' has an empty or inconsistent domain")]
    InvalidAttribute { component: String, name: String },
    #[error("{component}: unknown operation '{op}'")]
    UnknownOperation { component: String, op: String },
    #[error("operation {op} is called by more than one component ({first}, {second})")]
    ConflictingCallers {
        op: String,
        first: String,
        second: String,
    },
    #[error("'{0}' is not a valid identifier for a state configuration")]
    InvalidIdentifier(String),
}

impl ValidationError {
    /// Stable name of the violation kind.
    pub fn code(&self) -> &'static str {
        match self {
            ValidationError::MissingRate(_) => "MissingRate",
            ValidationError::DanglingStateRef { .. } => "DanglingStateRef",
            ValidationError::DuplicateName { .. } => "DuplicateName",
            ValidationError::EmptyFailureMachines(_) => "EmptyFailureMachines",
            ValidationError::MixedOperatorConfig(_) => "MixedOperatorConfig",
            ValidationError::InitialState { .. } => "InitialState",
            ValidationError::InvalidRate { .. } => "InvalidRate",
            ValidationError::InvalidTransition { .. } => "InvalidTransition",
            ValidationError::MissingFailureEntry { .. } => "MissingFailureEntry",
            ValidationError::UnsupportedAction { .. } => "UnsupportedAction",
            ValidationError::UnknownAttribute { .. } => "UnknownAttribute",
            ValidationError::InvalidAttribute { .. } => "InvalidAttribute",
            ValidationError::UnknownOperation { .. } => "UnknownOperation",
            ValidationError::ConflictingCallers { .. } => "ConflictingCallers",
            ValidationError::InvalidIdentifier(_) => "InvalidIdentifier",
        }
    }
}

/// Validates a raw model. All violations are collected; the function never
/// panics on malformed input.
pub fn validate(raw: &RawModel) -> Result<QumModel, Vec<ValidationError>> {
    let mut errs = Vec::new();
    let mut seen = HashSet::new();
    for c in &raw.components {
        if !seen.insert(c.name.as_str()) {
            errs.push(ValidationError::DuplicateName {
                scope: format!("model {}", raw.name),
                name: c.name.clone(),
            });
        }
    }
    let provided: HashMap<&str, &RawComponent> =
        raw.components.iter().map(|c| (c.name.as_str(), c)).collect();

    let mut components = Vec::new();
    for c in &raw.components {
        components.push(validate_component(c, &provided, &mut errs));
    }

    // Operation signatures and their (single) caller.
    let mut operations: Vec<OperationSignature> = Vec::new();
    for c in &raw.components {
        for op in &c.operations {
            operations.push(OperationSignature {
                name: op.clone(),
                owner: c.name.clone(),
                caller: None,
            });
        }
    }
    for c in &components {
        for m in c.machines() {
            for t in &m.transitions {
                if t.kind != TransitionKind::OperationCall {
                    continue;
                }
                let Some(op) = &t.operation else { continue };
                if let Some(sig) = operations
                    .iter_mut()
                    .find(|s| s.owner == op.callee && s.name == op.name)
                {
                    match &sig.caller {
                        None => sig.caller = Some(c.name.clone()),
                        Some(existing) if *existing != c.name => {
                            errs.push(ValidationError::ConflictingCallers {
                                op: format!("{}.{}", op.callee, op.name),
                                first: existing.clone(),
                                second: c.name.clone(),
                            })
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    let state_configs = collect_configs(&components, &mut errs);

    if errs.is_empty() {
        Ok(QumModel {
            model_name: raw.name.clone(),
            components,
            state_configs,
            operations,
        })
    } else {
        Err(errs)
    }
}

fn collect_configs(
    components: &[QumComponent],
    errs: &mut Vec<ValidationError>,
) -> Vec<StateConfiguration> {
    let mut configs: Vec<StateConfiguration> = Vec::new();
    let mut mixed = HashSet::new();
    for c in components {
        for m in c.machines() {
            let mut stack: Vec<(Vec<String>, &State)> =
                m.states.iter().rev().map(|s| (vec![s.name.clone()], s)).collect();
            while let Some((path, s)) = stack.pop() {
                for (name, op) in &s.config_tags {
                    let member = StateRef {
                        component: c.name.clone(),
                        machine: m.name.clone(),
                        path: path.clone(),
                    };
                    match configs.iter_mut().find(|cfg| &cfg.name == name) {
                        Some(cfg) => {
                            if cfg.operator != *op && mixed.insert(name.clone()) {
                                errs.push(ValidationError::MixedOperatorConfig(name.clone()));
                            }
                            cfg.members.push(member);
                        }
                        None => {
                            if !is_identifier(name) {
                                errs.push(ValidationError::InvalidIdentifier(name.clone()));
                            }
                            configs.push(StateConfiguration {
                                name: name.clone(),
                                operator: *op,
                                members: vec![member],
                            });
                        }
                    }
                }
                for child in s.children.iter().rev() {
                    let mut p = path.clone();
                    p.push(child.name.clone());
                    stack.push((p, child));
                }
            }
        }
    }
    configs
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !matches!(
            s,
            "true" | "false" | "min" | "max" | "const" | "module" | "endmodule" | "label"
                | "formula" | "init" | "ctmc" | "double" | "int" | "bool" | "rate"
        )
}

fn validate_component(
    c: &RawComponent,
    provided: &HashMap<&str, &RawComponent>,
    errs: &mut Vec<ValidationError>,
) -> QumComponent {
    let scope = format!("component {}", c.name);
    if c.failures.is_empty() {
        errs.push(ValidationError::EmptyFailureMachines(c.name.clone()));
    }
    check_unique(&scope, c.rates.iter().map(|r| r.name.as_str()), errs);
    for r in &c.rates {
        if !(r.rate.is_finite() && r.rate > 0.0) {
            errs.push(ValidationError::InvalidRate {
                component: c.name.clone(),
                name: r.name.clone(),
            });
        }
    }
    check_unique(&scope, c.attributes.iter().map(|a| a.name.as_str()), errs);
    check_unique(&scope, c.operations.iter().map(|a| a.as_str()), errs);
    check_unique(
        &scope,
        c.normal.iter().chain(&c.failures).map(|m| m.name.as_str()),
        errs,
    );
    let attributes: Vec<Attribute> = c
        .attributes
        .iter()
        .map(|a| {
            if a.lo > a.hi || a.init < a.lo || a.init > a.hi {
                errs.push(ValidationError::InvalidAttribute {
                    component: c.name.clone(),
                    name: a.name.clone(),
                });
            }
            Attribute {
                name: a.name.clone(),
                lo: a.lo,
                hi: a.hi,
                init: a.init,
            }
        })
        .collect();

    let ctx = ComponentCtx {
        raw: c,
        provided,
        attributes: &attributes,
    };
    let normal_machine = c.normal.as_ref().map(|m| ctx.machine(m, false, errs));
    let failure_machines: Vec<StateMachine> =
        c.failures.iter().map(|m| ctx.machine(m, true, errs)).collect();

    for m in &failure_machines {
        if !m.transitions.iter().any(|t| t.kind.is_failure_entry()) {
            errs.push(ValidationError::MissingFailureEntry {
                component: c.name.clone(),
                machine: m.name.clone(),
            });
        }
    }

    QumComponent {
        name: c.name.clone(),
        normal_machine,
        failure_machines,
        rates: c.rates.clone(),
        attributes,
        operations: c.operations.clone(),
    }
}

fn check_unique<'a>(
    scope: &str,
    names: impl Iterator<Item = &'a str>,
    errs: &mut Vec<ValidationError>,
) {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            errs.push(ValidationError::DuplicateName {
                scope: scope.to_string(),
                name: n.to_string(),
            });
        }
    }
}

struct ComponentCtx<'a> {
    raw: &'a RawComponent,
    provided: &'a HashMap<&'a str, &'a RawComponent>,
    attributes: &'a [Attribute],
}

impl ComponentCtx<'_> {
    fn name(&self) -> &str {
        &self.raw.name
    }

    fn resolve_op(&self, op: &OpRef, errs: &mut Vec<ValidationError>) -> Option<OperationRef> {
        let callee = op.component.as_deref().unwrap_or(self.name());
        let ok = self
            .provided
            .get(callee)
            .is_some_and(|c| c.operations.iter().any(|o| *o == op.name));
        if ok {
            Some(OperationRef {
                callee: callee.to_string(),
                name: op.name.clone(),
            })
        } else {
            errs.push(ValidationError::UnknownOperation {
                component: self.name().to_string(),
                op: op.to_string(),
            });
            None
        }
    }

    fn state(&self, s: &RawState, scope: &str, errs: &mut Vec<ValidationError>) -> State {
        let scope = format!("{scope}.{}", s.name);
        if !s.children.is_empty() {
            self.check_level(&scope, &s.children, errs);
        }
        State {
            name: s.name.clone(),
            initial: s.initial,
            children: s.children.iter().map(|c| self.state(c, &scope, errs)).collect(),
            entry_ops: s
                .entry_ops
                .iter()
                .filter_map(|op| self.resolve_op(op, errs))
                .collect(),
            config_tags: s.config_tags.clone(),
        }
    }

    fn check_level(&self, scope: &str, states: &[RawState], errs: &mut Vec<ValidationError>) {
        check_unique(scope, states.iter().map(|s| s.name.as_str()), errs);
        let found = states.iter().filter(|s| s.initial).count();
        if found != 1 {
            errs.push(ValidationError::InitialState {
                scope: scope.to_string(),
                found,
            });
        }
    }

    fn machine(&self, m: &RawMachine, failure: bool, errs: &mut Vec<ValidationError>) -> StateMachine {
        let scope = format!("{}.{}", self.name(), m.name);
        self.check_level(&scope, &m.states, errs);
        let states: Vec<State> = m.states.iter().map(|s| self.state(s, &scope, errs)).collect();
        let mut machine = StateMachine {
            name: m.name.clone(),
            states,
            transitions: Vec::new(),
        };
        let transitions = m
            .transitions
            .iter()
            .filter_map(|t| self.transition(&machine, t, failure, errs))
            .collect();
        machine.transitions = transitions;
        machine
    }

    fn transition(
        &self,
        m: &StateMachine,
        t: &RawTransition,
        in_failure: bool,
        errs: &mut Vec<ValidationError>,
    ) -> Option<Transition> {
        let label = t
            .label
            .clone()
            .or_else(|| t.rate_name.clone())
            .or_else(|| t.operation.as_ref().map(|o| o.name.clone()))
            .unwrap_or_else(|| format!("{}_to_{}", t.source.join("_"), t.target.join("_")));
        let before = errs.len();
        let bad = |problem: &str| ValidationError::InvalidTransition {
            component: self.name().to_string(),
            machine: m.name.clone(),
            label: label.clone(),
            kind: t.kind.keyword(),
            problem: problem.to_string(),
        };

        // Rate payload.
        if t.kind.needs_concrete_rate() && t.rate.is_none() {
            errs.push(bad("requires a concrete rate"));
        }
        if t.kind.is_abstract() {
            if t.rate.is_some() {
                errs.push(bad("is abstract and must not carry a concrete rate"));
            }
            match &t.rate_name {
                None => errs.push(bad("is abstract and needs a rate name")),
                Some(n) if self.raw.rates.iter().all(|r| &r.name != n) => {
                    errs.push(ValidationError::MissingRate(n.clone()))
                }
                _ => {}
            }
        }
        if matches!(
            t.kind,
            TransitionKind::Plain | TransitionKind::OperationTrigger
        ) && t.rate.is_some()
        {
            errs.push(bad("must not carry a rate"));
        }
        if let Some(r) = t.rate {
            if !(r.is_finite() && r > 0.0) {
                errs.push(bad("has a non-positive rate"));
            }
        }

        // Operation payload.
        let operation = match t.kind {
            TransitionKind::OperationCall | TransitionKind::OperationTrigger => match &t.operation {
                None => {
                    errs.push(bad("names no operation"));
                    None
                }
                Some(op) => {
                    let resolved = self.resolve_op(op, errs);
                    if t.kind == TransitionKind::OperationTrigger {
                        if let Some(r) = &resolved {
                            if r.callee != self.name() {
                                errs.push(bad("can only be triggered by an own operation"));
                            }
                        }
                    }
                    resolved
                }
            },
            _ => None,
        };

        // Endpoints.
        let normal = self.raw.normal.as_ref();
        let dangling = |machine: &str, path: &[String]| ValidationError::DanglingStateRef {
            component: self.name().to_string(),
            machine: machine.to_string(),
            path: path.join("."),
        };
        if t.kind.is_failure_entry() {
            if !in_failure {
                errs.push(bad("must be declared in a failure pattern machine"));
            }
            if !t.source.is_empty() {
                errs.push(bad("enters from the whole normal region; use '*' as source"));
            }
            if !t.target.is_empty() && m.find(&t.target).is_none() {
                errs.push(dangling(&m.name, &t.target));
            }
        } else if t.kind.is_repair() {
            if !in_failure {
                errs.push(bad("must be declared in a failure pattern machine"));
            }
            if m.find(&t.source).is_none() {
                errs.push(dangling(&m.name, &t.source));
            }
            match normal {
                None => errs.push(bad("targets a normal machine, but the component has none")),
                Some(n) => {
                    if !t.target.is_empty() && find_raw(&n.states, &t.target).is_none() {
                        errs.push(dangling(&n.name, &t.target));
                    }
                }
            }
        } else {
            for p in [&t.source, &t.target] {
                if m.find(p).is_none() {
                    errs.push(dangling(&m.name, p));
                }
            }
        }

        // Guards and updates over bounded local attributes only.
        let guard = t.guard.as_ref().and_then(|g| match parse_expr(g) {
            Ok(e) => {
                self.check_vars(&e, errs);
                Some(e)
            }
            Err(e) => {
                errs.push(ValidationError::UnsupportedAction {
                    component: self.name().to_string(),
                    text: g.clone(),
                    reason: e.to_string(),
                });
                None
            }
        });
        let mut updates = Vec::new();
        for u in &t.updates {
            match parse_update(u) {
                Ok(up) => {
                    if self.attributes.iter().all(|a| a.name != up.var) {
                        errs.push(ValidationError::UnknownAttribute {
                            component: self.name().to_string(),
                            name: up.var.clone(),
                        });
                    }
                    self.check_vars(&up.value, errs);
                    updates.push(up);
                }
                Err(e) => errs.push(ValidationError::UnsupportedAction {
                    component: self.name().to_string(),
                    text: u.clone(),
                    reason: e.to_string(),
                }),
            }
        }

        if errs.len() != before {
            return None;
        }
        Some(Transition {
            source: t.source.clone(),
            target: t.target.clone(),
            kind: t.kind,
            rate: t.rate,
            rate_name: t.rate_name.clone(),
            operation,
            guard,
            updates,
            label,
        })
    }

    fn check_vars(&self, e: &Expr, errs: &mut Vec<ValidationError>) {
        for v in e.variables() {
            if self.attributes.iter().all(|a| a.name != v) {
                errs.push(ValidationError::UnknownAttribute {
                    component: self.name().to_string(),
                    name: v,
                });
            }
        }
    }
}

fn find_raw<'a>(states: &'a [RawState], path: &[String]) -> Option<&'a RawState> {
    let (first, rest) = path.split_first()?;
    let mut cur = states.iter().find(|s| &s.name == first)?;
    for name in rest {
        cur = cur.children.iter().find(|s| &s.name == name)?;
    }
    Some(cur)
}

// ---------------------------------------------------------------------------
// State encoding

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub u32);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Normal,
    /// Stand-in normal state for components without a normal machine.
    Idle,
    /// Index into the component's failure machines.
    Failure(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState {
    pub machine: String,
    pub path: Vec<String>,
    pub id: StateId,
    /// Highest id among the state's descendants (equals `id` for leaves).
    pub span_hi: StateId,
    pub leaf: bool,
    pub region: Region,
}

impl EncodedState {
    pub fn qualified(&self) -> String {
        let mut s = self.machine.clone();
        for p in &self.path {
            s.push('.');
            s.push_str(p);
        }
        s
    }

    pub fn name(&self) -> &str {
        self.path.last().map_or(self.machine.as_str(), |s| s.as_str())
    }
}

/// Name used for the synthetic normal state of failure-only components.
pub const IDLE_STATE: &str = "idle";

#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoding {
    pub component: String,
    pub module_id: String,
    /// Pre-order: normal region first, then failure machines in declaration order.
    pub states: Vec<EncodedState>,
    /// Number of states in the normal machine (`#normstate`). Zero for
    /// failure-only components, which get a synthetic idle state with id 0.
    pub normstate_count: u32,
    pub total_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodingError {
    #[error("unknown state '{state}' in component '{component}'")]
    UnknownState { component: String, state: String },
    #[error("state name '{state}' is ambiguous in component '{component}'; qualify it")]
    AmbiguousState { component: String, state: String },
}

impl StateEncoding {
    pub fn state_var(&self) -> String {
        format!("{}_state", self.module_id)
    }

    pub fn has_synthetic_idle(&self) -> bool {
        self.states.first().is_some_and(|s| s.region == Region::Idle)
    }

    /// Smallest id belonging to a failure pattern.
    pub fn first_failure_id(&self) -> u32 {
        self.normstate_count + u32::from(self.has_synthetic_idle())
    }

    pub fn get(&self, machine: &str, path: &[String]) -> Option<&EncodedState> {
        self.states
            .iter()
            .find(|s| s.machine == machine && s.path == path)
    }

    pub fn by_id(&self, id: StateId) -> Option<&EncodedState> {
        self.states.iter().find(|s| s.id == id)
    }

    pub fn span(&self, machine: &str, path: &[String]) -> Option<(StateId, StateId)> {
        self.get(machine, path).map(|s| (s.id, s.span_hi))
    }

    /// Looks a state up by `Machine.Path.To.State`, by a path relative to any
    /// machine, or by a simple name when that name is unique in the component.
    pub fn lookup(&self, state: &str) -> Result<&EncodedState, EncodingError> {
        let parts: Vec<String> = state.split('.').map(str::to_string).collect();
        let unknown = || EncodingError::UnknownState {
            component: self.component.clone(),
            state: state.to_string(),
        };
        if parts.iter().any(|p| p.is_empty()) {
            return Err(unknown());
        }
        if let Some(s) = self.get(&parts[0], &parts[1..]) {
            if !parts[1..].is_empty() {
                return Ok(s);
            }
        }
        let mut hits: Vec<&EncodedState> =
            self.states.iter().filter(|s| s.path == parts).collect();
        if hits.is_empty() && parts.len() == 1 {
            hits = self.states.iter().filter(|s| s.name() == parts[0]).collect();
        }
        match hits.len() {
            0 => Err(unknown()),
            1 => Ok(hits[0]),
            _ => Err(EncodingError::AmbiguousState {
                component: self.component.clone(),
                state: state.to_string(),
            }),
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &EncodedState> {
        self.states.iter().filter(|s| s.leaf)
    }
}

/// Deterministic pre-order numbering of one component's states.
pub fn assign_ids(component: &QumComponent, module_id: &str) -> StateEncoding {
    let mut states = Vec::new();
    let mut next = 0u32;
    fn walk(
        machine: &str,
        prefix: &[String],
        list: &[State],
        region: Region,
        next: &mut u32,
        out: &mut Vec<EncodedState>,
    ) {
        for s in list {
            let mut path = prefix.to_vec();
            path.push(s.name.clone());
            let idx = out.len();
            out.push(EncodedState {
                machine: machine.to_string(),
                path: path.clone(),
                id: StateId(*next),
                span_hi: StateId(*next),
                leaf: s.is_leaf(),
                region,
            });
            *next += 1;
            walk(machine, &path, &s.children, region, next, out);
            out[idx].span_hi = StateId(*next - 1);
        }
    }
    match &component.normal_machine {
        Some(m) => walk(&m.name, &[], &m.states, Region::Normal, &mut next, &mut states),
        None => {
            states.push(EncodedState {
                machine: IDLE_STATE.to_string(),
                path: Vec::new(),
                id: StateId(0),
                span_hi: StateId(0),
                leaf: true,
                region: Region::Idle,
            });
            next = 1;
        }
    }
    let normstate_count = if component.normal_machine.is_some() { next } else { 0 };
    for (i, m) in component.failure_machines.iter().enumerate() {
        walk(&m.name, &[], &m.states, Region::Failure(i), &mut next, &mut states);
    }
    StateEncoding {
        component: component.name.clone(),
        module_id: module_id.to_string(),
        states,
        normstate_count,
        total_count: next,
    }
}

/// Module identifiers: lower-cased component names with non-alphanumerics
/// replaced by `_`; collisions get a numeric suffix.
pub fn module_ids(model: &QumModel) -> Vec<String> {
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for c in &model.components {
        let mut base: String = c
            .name
            .chars()
            .map(|ch| if ch.is_ascii_alphanumeric() { ch.to_ascii_lowercase() } else { '_' })
            .collect();
        if base.is_empty() || base.starts_with(|ch: char| ch.is_ascii_digit()) {
            base.insert(0, 'c');
        }
        let mut id = base.clone();
        let mut n = 1;
        while used.contains_key(&id) {
            n += 1;
            id = format!("{base}_{n}");
        }
        used.insert(id.clone(), 1);
        out.push(id);
    }
    out
}

/// Encodings for every component of the model, in declaration order.
pub fn encode_model(model: &QumModel) -> Vec<StateEncoding> {
    model
        .components
        .iter()
        .zip(module_ids(model))
        .map(|(c, id)| assign_ids(c, &id))
        .collect()
}

/// The boolean expression "component is in `state` or one of its sub-states".
pub fn in_state_expr(encoding: &StateEncoding, state: &str) -> Result<String, EncodingError> {
    let s = encoding.lookup(state)?;
    Ok(render_in_state(encoding, s))
}

pub(crate) fn render_in_state(encoding: &StateEncoding, s: &EncodedState) -> String {
    let var = encoding.state_var();
    if s.leaf {
        format!("({var} = {})", s.id)
    } else {
        format!("({} <= {var} & {var} <= {})", s.id, s.span_hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_native;

    fn model(src: &str) -> QumModel {
        validate(&parse_native(src).unwrap()).unwrap()
    }

    const MC: &str = r#"
model M
component MC {
  rates { fail_mc = 1.0e-6 }
  normal N {
    state A initial { state A1 initial  state A2 }
    state B
    transition A.A1 -> A.A2 stochastic 1.0
    transition A -> B stochastic 2.0
  }
  failure F {
    state X initial
    state Y
    transition * -> X abstract-failure fail_mc
    transition X -> Y stochastic 5.0
  }
}
"#;

    #[test]
    fn abstract_failure_with_rate_is_valid() {
        let m = model(MC);
        assert_eq!(m.components[0].rate("fail_mc"), Some(1e-6));
    }

    #[test]
    fn missing_rate_is_reported() {
        let src = MC.replace("rates { fail_mc = 1.0e-6 }", "rates { }");
        let errs = validate(&parse_native(&src).unwrap()).unwrap_err();
        assert!(errs.contains(&ValidationError::MissingRate("fail_mc".into())), "{errs:?}");
    }

    #[test]
    fn mixed_operator_config_is_reported() {
        let src = MC
            .replace("state B\n", "state B config hazard AND\n")
            .replace("state Y\n", "state Y config hazard OR\n");
        let errs = validate(&parse_native(&src).unwrap()).unwrap_err();
        assert_eq!(errs, vec![ValidationError::MixedOperatorConfig("hazard".into())]);
    }

    #[test]
    fn duplicate_and_dangling_names() {
        let src = format!("{MC}\n{}", MC.replace("model M", ""))
            .replace("transition X -> Y", "transition X -> Z");
        let errs = validate(&parse_native(&src).unwrap()).unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, ValidationError::DuplicateName { .. })));
        assert!(errs.iter().any(|e| matches!(e, ValidationError::DanglingStateRef { .. })));
    }

    #[test]
    fn empty_failure_machines() {
        let src = "model M\ncomponent C {\n normal N {\n state A initial\n }\n}\n";
        let errs = validate(&parse_native(src).unwrap()).unwrap_err();
        assert_eq!(errs, vec![ValidationError::EmptyFailureMachines("C".into())]);
    }

    #[test]
    fn preorder_ids_and_spans() {
        let m = model(MC);
        let enc = assign_ids(&m.components[0], "mc");
        let id = |p: &str| enc.lookup(p).unwrap().id.0;
        assert_eq!((id("A"), id("A1"), id("A2"), id("B")), (0, 1, 2, 3));
        assert_eq!(enc.span("N", &["A".into()]), Some((StateId(0), StateId(2))));
        assert_eq!(enc.normstate_count, 4);
        assert_eq!((id("X"), id("Y")), (4, 5));
        assert_eq!(enc.total_count, 6);
    }

    #[test]
    fn three_leaves_two_failure_states() {
        let src = r#"
component C {
  rates { f = 0.1 }
  normal N { state a initial
  state b
  state c }
  failure F { state x initial
  state y
  transition * -> x abstract-failure f }
}"#;
        let m = model(src);
        let enc = assign_ids(&m.components[0], "c");
        let ids: Vec<u32> = enc.states.iter().map(|s| s.id.0).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(enc.normstate_count, 3);
        assert!(enc.states[3..].iter().all(|s| matches!(s.region, Region::Failure(0))));
    }

    #[test]
    fn in_state_expressions() {
        let m = model(MC);
        let enc = assign_ids(&m.components[0], "mc");
        assert_eq!(in_state_expr(&enc, "Y").unwrap(), "(mc_state = 5)");
        assert_eq!(in_state_expr(&enc, "N.A").unwrap(), "(0 <= mc_state & mc_state <= 2)");
        assert!(matches!(
            in_state_expr(&enc, "Nope"),
            Err(EncodingError::UnknownState { .. })
        ));
    }

    #[test]
    fn failure_only_component_gets_idle_state() {
        let src = r#"
component Ext {
  rates { f = 0.1 }
  failure F { state Broken initial
  transition * -> Broken abstract-failure f }
}"#;
        let m = model(src);
        let enc = assign_ids(&m.components[0], "ext");
        assert_eq!(enc.normstate_count, 0);
        assert!(enc.has_synthetic_idle());
        assert_eq!(enc.first_failure_id(), 1);
        assert_eq!(enc.lookup("Broken").unwrap().id, StateId(1));
    }

    #[test]
    fn module_id_collisions_get_suffixes() {
        let src = r#"
component "A-b" { rates { f = 1.0 } failure F { state s initial
 transition * -> s abstract-failure f } }
component "A.b" { rates { f = 1.0 } failure F { state s initial
 transition * -> s abstract-failure f } }
"#;
        let m = model(src);
        assert_eq!(module_ids(&m), vec!["a_b", "a_b_2"]);
    }
}
