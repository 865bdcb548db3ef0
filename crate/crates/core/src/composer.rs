//! Merging normal behaviour with failure patterns, flattening hierarchy, and
//! the synchronized product used by the code generator, the state-space
//! builder and the replay engine.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::expr::{EvalError, Expr, Update};
use crate::model::{
    assign_ids, module_ids, Attribute, OperationRef, QumComponent, QumModel, Region, State,
    StateConfiguration, StateEncoding, StateId, StateMachine, Transition, TransitionKind,
};

/// Rate given to untimed transitions (plain moves and untimed calls).
pub const DEFAULT_FAST_RATE: f64 = 1.0e9;

#[derive(Debug, Clone, PartialEq)]
pub struct FlatTransition {
    pub source: StateId,
    pub target: StateId,
    pub kind: TransitionKind,
    /// Resolved rate. Triggers are passive and carry 1.
    pub rate: f64,
    /// Operation for calls and triggers; these synchronize.
    pub operation: Option<OperationRef>,
    pub guard: Option<Expr>,
    pub updates: Vec<Update>,
    pub label: String,
}

impl FlatTransition {
    pub fn is_sync(&self) -> bool {
        self.operation.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedMachine {
    pub component: String,
    pub module_id: String,
    pub encoding: StateEncoding,
    /// Leaf states, ascending by id.
    pub flat_states: Vec<StateId>,
    pub flat_transitions: Vec<FlatTransition>,
    pub initial: StateId,
    pub attributes: Vec<Attribute>,
}

impl ComposedMachine {
    pub fn is_failure_state(&self, id: StateId) -> bool {
        id.0 >= self.encoding.first_failure_id()
    }
}

/// Merges a validated component's machines into one flat machine.
pub fn compose(component: &QumComponent, module_id: &str, fast_rate: f64) -> ComposedMachine {
    let encoding = assign_ids(component, module_id);
    let mut out = Vec::new();
    let normal_leaves: Vec<StateId> = encoding
        .states
        .iter()
        .filter(|s| s.leaf && matches!(s.region, Region::Normal | Region::Idle))
        .map(|s| s.id)
        .collect();
    let rate_of = |t: &Transition| -> f64 {
        match t.kind {
            TransitionKind::Plain => fast_rate,
            TransitionKind::OperationTrigger => 1.0,
            TransitionKind::OperationCall => t.rate.unwrap_or(fast_rate),
            k if k.is_abstract() => t
                .rate_name
                .as_deref()
                .and_then(|n| component.rate(n))
                .unwrap_or(0.0),
            _ => t.rate.unwrap_or(0.0),
        }
    };
    let flat = |source: StateId, target: StateId, t: &Transition| FlatTransition {
        source,
        target,
        kind: t.kind,
        rate: rate_of(t),
        operation: t.operation.clone(),
        guard: t.guard.clone(),
        updates: t.updates.clone(),
        label: match &t.operation {
            Some(op) => op.name.clone(),
            None => t.label.clone(),
        },
    };

    let machines: Vec<&StateMachine> = component.machines().collect();
    for m in &machines {
        let leaves = leaf_sources(&encoding, m);
        for (leaf, transitions) in leaves {
            for t in transitions {
                let target = enter(&encoding, component, m, t);
                out.push(flat(leaf, target, t));
            }
        }
        for t in m.transitions.iter().filter(|t| t.kind.is_failure_entry()) {
            let target = enter(&encoding, component, m, t);
            for &leaf in &normal_leaves {
                out.push(flat(leaf, target, t));
            }
        }
    }
    // Source order within a leaf; leaves ascending.
    out.sort_by_key(|t| t.source);

    let flat_states: Vec<StateId> = encoding.leaves().map(|s| s.id).collect();
    let initial = initial_leaf(&encoding, component);
    ComposedMachine {
        component: component.name.clone(),
        module_id: module_id.to_string(),
        encoding,
        flat_states,
        flat_transitions: out,
        initial,
        attributes: component.attributes.clone(),
    }
}

/// For each leaf of `m`, the transitions leaving it after composite-level
/// replication with innermost-first shadowing by label.
fn leaf_sources<'m>(
    enc: &StateEncoding,
    m: &'m StateMachine,
) -> Vec<(StateId, Vec<&'m Transition>)> {
    let ordinary: Vec<&Transition> = m
        .transitions
        .iter()
        .filter(|t| !t.kind.is_failure_entry())
        .collect();
    let mut out = Vec::new();
    for leaf in enc.leaves().filter(|s| s.machine == m.name) {
        // Transitions whose source is an ancestor-or-self of the leaf.
        let applicable: Vec<(&Transition, usize)> = ordinary
            .iter()
            .filter(|t| leaf.path.starts_with(&t.source) && !t.source.is_empty())
            .map(|t| (*t, t.source.len()))
            .collect();
        let kept: Vec<&Transition> = applicable
            .iter()
            .filter(|(t, depth)| {
                !applicable
                    .iter()
                    .any(|(u, d)| u.label == t.label && d > depth)
            })
            .map(|(t, _)| *t)
            .collect();
        out.push((leaf.id, kept));
    }
    out
}

fn descend_initial(enc: &StateEncoding, machine: &str, mut path: Vec<String>, mut state: &State) -> StateId {
    while let Some(child) = state.initial_child() {
        path.push(child.name.clone());
        state = child;
    }
    enc.get(machine, &path).map_or(StateId(0), |s| s.id)
}

fn initial_leaf(enc: &StateEncoding, component: &QumComponent) -> StateId {
    match &component.normal_machine {
        Some(m) => match m.initial() {
            Some(s) => descend_initial(enc, &m.name, vec![s.name.clone()], s),
            None => StateId(0),
        },
        None => StateId(0),
    }
}

/// The leaf a transition actually enters.
fn enter(enc: &StateEncoding, component: &QumComponent, m: &StateMachine, t: &Transition) -> StateId {
    let target_machine = if t.kind.is_repair() {
        match &component.normal_machine {
            Some(n) => n,
            None => return StateId(0),
        }
    } else {
        m
    };
    let path = if t.target.is_empty() {
        match target_machine.initial() {
            Some(s) => vec![s.name.clone()],
            None => return StateId(0),
        }
    } else {
        t.target.clone()
    };
    match target_machine.find(&path) {
        Some(s) => descend_initial(enc, &target_machine.name, path, s),
        None => StateId(0),
    }
}

// ---------------------------------------------------------------------------
// Global product

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SyncAction {
    /// Action label shared by caller and callee commands.
    pub label: String,
    pub operation: OperationRef,
    pub caller: usize,
    pub callee: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalAttribute {
    pub machine: usize,
    pub name: String,
    /// Variable name in the emitted model: `<module_id>_<name>`.
    pub var: String,
    pub lo: i64,
    pub hi: i64,
    pub init: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub machines: Vec<ComposedMachine>,
    pub sync_actions: Vec<SyncAction>,
    pub attributes: Vec<GlobalAttribute>,
    pub state_configs: Vec<StateConfiguration>,
    pub fast_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComposeError {
    #[error("{caller} calls {op}, but no transition of the callee is triggered by it")]
    UnboundOperation { caller: String, op: String },
    #[error("{component} calls its own operation {op}; self-calls cannot synchronize")]
    SelfCall { component: String, op: String },
}

/// Global state: per-machine leaf id plus every attribute value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GlobalState {
    pub locs: Vec<StateId>,
    pub vals: Vec<i64>,
}

pub fn build_global(model: &QumModel) -> Result<GlobalModel, ComposeError> {
    build_global_with(model, DEFAULT_FAST_RATE)
}

pub fn build_global_with(model: &QumModel, fast_rate: f64) -> Result<GlobalModel, ComposeError> {
    let ids = module_ids(model);
    let machines: Vec<ComposedMachine> = model
        .components
        .iter()
        .zip(&ids)
        .map(|(c, id)| compose(c, id, fast_rate))
        .collect();
    let index: HashMap<&str, usize> = machines
        .iter()
        .enumerate()
        .map(|(i, m)| (m.component.as_str(), i))
        .collect();

    let mut ops: BTreeSet<(usize, usize, OperationRef)> = BTreeSet::new();
    let mut order: Vec<(usize, usize, OperationRef)> = Vec::new();
    for (i, m) in machines.iter().enumerate() {
        for t in &m.flat_transitions {
            if t.kind != TransitionKind::OperationCall {
                continue;
            }
            let Some(op) = &t.operation else { continue };
            let callee = index.get(op.callee.as_str()).copied().unwrap_or(i);
            if callee == i {
                return Err(ComposeError::SelfCall {
                    component: m.component.clone(),
                    op: op.name.clone(),
                });
            }
            let bound = machines[callee].flat_transitions.iter().any(|u| {
                u.kind == TransitionKind::OperationTrigger && u.operation.as_ref() == Some(op)
            });
            if !bound {
                return Err(ComposeError::UnboundOperation {
                    caller: m.component.clone(),
                    op: format!("{}.{}", op.callee, op.name),
                });
            }
            if ops.insert((i, callee, op.clone())) {
                order.push((i, callee, op.clone()));
            }
        }
    }
    // Labels are the bare operation names unless two callees share one.
    let mut name_count: HashMap<&str, usize> = HashMap::new();
    for (_, _, op) in &order {
        *name_count.entry(op.name.as_str()).or_default() += 1;
    }
    let sync_actions: Vec<SyncAction> = order
        .iter()
        .map(|(caller, callee, op)| SyncAction {
            label: if name_count[op.name.as_str()] > 1 {
                format!("{}_{}", machines[*callee].module_id, op.name)
            } else {
                op.name.clone()
            },
            operation: op.clone(),
            caller: *caller,
            callee: *callee,
        })
        .collect();

    let attributes = machines
        .iter()
        .enumerate()
        .flat_map(|(i, m)| {
            m.attributes.iter().map(move |a| GlobalAttribute {
                machine: i,
                name: a.name.clone(),
                var: format!("{}_{}", m.module_id, a.name),
                lo: a.lo,
                hi: a.hi,
                init: a.init,
            })
        })
        .collect();

    Ok(GlobalModel {
        machines,
        sync_actions,
        attributes,
        state_configs: model.state_configs.clone(),
        fast_rate,
    })
}

/// One enabled step: either a local transition or a caller/callee pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Move {
    pub label: String,
    pub rate: f64,
    /// `(machine, flat transition index)`; one entry for local moves, two
    /// (caller first) for synchronized ones.
    pub parts: Vec<(usize, usize)>,
    pub sync: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("update of '{var}' leaves its domain [{lo}..{hi}] (value {value})")]
    OutOfRange {
        var: String,
        value: i64,
        lo: i64,
        hi: i64,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("event {0} is not enabled")]
    Stuck(usize),
    #[error("unknown event '{0}'")]
    UnknownEvent(String),
}

/// How a replayed event is applied.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReplayStep {
    Take(String),
    /// Synchronized event whose effect on the callee is withheld: the call
    /// must be enabled on both sides, but only the caller moves. Local
    /// events are skipped entirely.
    Mute(String),
}

impl ReplayStep {
    pub fn label(&self) -> &str {
        match self {
            ReplayStep::Take(l) | ReplayStep::Mute(l) => l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Failure,
    OperationCall,
    Local,
}

impl GlobalModel {
    pub fn initial_state(&self) -> GlobalState {
        GlobalState {
            locs: self.machines.iter().map(|m| m.initial).collect(),
            vals: self.attributes.iter().map(|a| a.init).collect(),
        }
    }

    /// Values of the emitted model's variables (`<id>_state` and attribute
    /// variables) in state `s`.
    pub fn var_lookup<'a>(&'a self, s: &'a GlobalState) -> impl Fn(&str) -> Option<i64> + 'a {
        move |name: &str| {
            if let Some(i) = self.machines.iter().position(|m| m.encoding.state_var() == name) {
                return Some(i64::from(s.locs[i].0));
            }
            self.attributes.iter().position(|a| a.var == name).map(|k| s.vals[k])
        }
    }

    pub fn action_label(&self, op: &OperationRef) -> Option<&str> {
        self.sync_actions
            .iter()
            .find(|a| a.operation == *op)
            .map(|a| a.label.as_str())
    }

    /// Global indices of machine `i`'s attributes.
    fn attr_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.attributes.iter().position(|a| a.machine == i).unwrap_or(0);
        let len = self.attributes.iter().filter(|a| a.machine == i).count();
        start..start + len
    }

    fn local_lookup<'a>(&'a self, i: usize, s: &'a GlobalState) -> impl Fn(&str) -> Option<i64> + 'a {
        let range = self.attr_range(i);
        move |name: &str| {
            range
                .clone()
                .find(|&k| self.attributes[k].name == name)
                .map(|k| s.vals[k])
        }
    }

    fn enabled(&self, i: usize, t: &FlatTransition, s: &GlobalState) -> Result<bool, StepError> {
        if s.locs[i] != t.source {
            return Ok(false);
        }
        match &t.guard {
            None => Ok(true),
            Some(g) => Ok(g.eval_bool(&self.local_lookup(i, s))?),
        }
    }

    /// Every enabled move in deterministic order: local moves by machine and
    /// transition order, then synchronized moves by action order.
    pub fn moves(&self, s: &GlobalState) -> Result<Vec<Move>, StepError> {
        let mut out = Vec::new();
        for (i, m) in self.machines.iter().enumerate() {
            for (k, t) in m.flat_transitions.iter().enumerate() {
                if !t.is_sync() && self.enabled(i, t, s)? {
                    out.push(Move {
                        label: t.label.clone(),
                        rate: t.rate,
                        parts: vec![(i, k)],
                        sync: None,
                    });
                }
            }
        }
        for (a, action) in self.sync_actions.iter().enumerate() {
            let side = |m: usize, kind: TransitionKind| -> Result<Vec<usize>, StepError> {
                let mut v = Vec::new();
                for (k, t) in self.machines[m].flat_transitions.iter().enumerate() {
                    if t.kind == kind
                        && t.operation.as_ref() == Some(&action.operation)
                        && self.enabled(m, t, s)?
                    {
                        v.push(k);
                    }
                }
                Ok(v)
            };
            let callers = side(action.caller, TransitionKind::OperationCall)?;
            if callers.is_empty() {
                continue;
            }
            let callees = side(action.callee, TransitionKind::OperationTrigger)?;
            for &c in &callers {
                for &d in &callees {
                    let rate = self.machines[action.caller].flat_transitions[c].rate
                        * self.machines[action.callee].flat_transitions[d].rate;
                    out.push(Move {
                        label: action.label.clone(),
                        rate,
                        parts: vec![(action.caller, c), (action.callee, d)],
                        sync: Some(a),
                    });
                }
            }
        }
        Ok(out)
    }

    /// Applies the given parts; all updates read the pre-state.
    pub fn apply(&self, s: &GlobalState, parts: &[(usize, usize)]) -> Result<GlobalState, StepError> {
        let mut next = s.clone();
        for &(i, k) in parts {
            let t = &self.machines[i].flat_transitions[k];
            next.locs[i] = t.target;
            let lookup = self.local_lookup(i, s);
            for u in &t.updates {
                let value = u.value.eval(&lookup)?.as_int()?;
                let g = self
                    .attr_range(i)
                    .find(|&g| self.attributes[g].name == u.var)
                    .ok_or_else(|| EvalError::Unknown(u.var.clone()))?;
                let a = &self.attributes[g];
                if value < a.lo || value > a.hi {
                    return Err(StepError::OutOfRange {
                        var: a.var.clone(),
                        value,
                        lo: a.lo,
                        hi: a.hi,
                    });
                }
                next.vals[g] = value;
            }
        }
        Ok(next)
    }

    /// Every label that may appear as an event.
    pub fn event_labels(&self) -> BTreeSet<String> {
        let mut set: BTreeSet<String> = self.sync_actions.iter().map(|a| a.label.clone()).collect();
        for m in &self.machines {
            for t in m.flat_transitions.iter().filter(|t| !t.is_sync()) {
                set.insert(t.label.clone());
            }
        }
        set
    }

    pub fn event_kind(&self, label: &str) -> EventKind {
        if self.sync_actions.iter().any(|a| a.label == label) {
            return EventKind::OperationCall;
        }
        let failure = self.machines.iter().any(|m| {
            m.flat_transitions
                .iter()
                .any(|t| t.label == label && t.kind.is_failure_entry())
        });
        if failure {
            EventKind::Failure
        } else {
            EventKind::Local
        }
    }

    /// Component owning a local event, or the caller of a synchronized one.
    pub fn event_owner(&self, label: &str) -> Option<usize> {
        if let Some(a) = self.sync_actions.iter().find(|a| a.label == label) {
            return Some(a.caller);
        }
        self.machines
            .iter()
            .position(|m| m.flat_transitions.iter().any(|t| !t.is_sync() && t.label == label))
    }

    /// Applies one replay step; `None` when it is not enabled.
    pub fn step(&self, s: &GlobalState, step: &ReplayStep) -> Option<GlobalState> {
        match step {
            ReplayStep::Take(label) => {
                let moves = self.moves(s).ok()?;
                let mv = moves.iter().find(|m| &m.label == label)?;
                self.apply(s, &mv.parts).ok()
            }
            ReplayStep::Mute(label) => {
                let moves = self.moves(s).ok()?;
                let mv = moves.iter().find(|m| &m.label == label && m.sync.is_some())?;
                self.apply(s, &mv.parts[..1]).ok()
            }
        }
    }

    /// Replays a step sequence from the initial state.
    pub fn replay_steps(&self, steps: &[ReplayStep]) -> Result<GlobalState, ReplayError> {
        let labels = self.event_labels();
        if let Some(bad) = steps.iter().find(|s| !labels.contains(s.label())) {
            return Err(ReplayError::UnknownEvent(bad.label().to_string()));
        }
        let mut s = self.initial_state();
        for (i, step) in steps.iter().enumerate() {
            if matches!(step, ReplayStep::Mute(_)) && self.sync_index_of(step.label()).is_none() {
                continue;
            }
            s = self.step(&s, step).ok_or(ReplayError::Stuck(i))?;
        }
        Ok(s)
    }

    fn sync_index_of(&self, label: &str) -> Option<usize> {
        self.sync_actions.iter().position(|a| a.label == label)
    }
}

/// Replays event labels from the initial state.
pub fn replay<S: AsRef<str>>(global: &GlobalModel, events: &[S]) -> Result<GlobalState, ReplayError> {
    let steps: Vec<ReplayStep> = events
        .iter()
        .map(|e| ReplayStep::Take(e.as_ref().to_string()))
        .collect();
    global.replay_steps(&steps)
}
