//! Fault trees from counterexamples.
//!
//! Each path is reduced to the events that are causal for the hazard under a
//! counterfactual replay test, paths with the same causal events are grouped
//! into classes, and every class is checked for order sensitivity by
//! replaying permutations. The tree is an OR over classes; each class is an
//! AND, PAND or SEQ gate over its basic events.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::composer::{EventKind, GlobalModel, GlobalState, ReplayStep};
use crate::ctmc::{Counterexample, StateFormula};

/// A counterexample path after causal filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPath {
    /// Replayable steps: kept events as `Take`, suppressed synchronized
    /// events as `Mute`.
    pub steps: Vec<ReplayStep>,
    /// Labels of the kept events, in path order.
    pub kept: Vec<String>,
    pub probability: f64,
    /// Index of the source path in the counterexample.
    pub source: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gate {
    /// Order-free.
    And,
    /// The events must occur in the listed order.
    Pand,
    /// Some pairs are ordered; see [`CausalClass::order`].
    Seq,
}

impl Gate {
    pub fn as_str(self) -> &'static str {
        match self {
            Gate::And => "AND",
            Gate::Pand => "PAND",
            Gate::Seq => "SEQ",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicEvent {
    pub label: String,
    pub kind: EventKind,
    /// Owning component, or the caller of an operation call.
    pub component: Option<String>,
}

impl BasicEvent {
    pub fn kind_str(&self) -> &'static str {
        match self.kind {
            EventKind::Failure => "failure",
            EventKind::OperationCall => "operation-call",
            EventKind::Local => "local",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalClass {
    pub gate: Gate,
    /// Basic events in the order of the class representative.
    pub events: Vec<BasicEvent>,
    /// Witnessed precedences `(i, j)`: event `i` must come before event `j`.
    pub order: Vec<(usize, usize)>,
    /// Sum of member path probabilities.
    pub probability: f64,
    pub members: usize,
    /// Steps of the most probable member.
    pub representative: Vec<ReplayStep>,
}

impl CausalClass {
    pub fn labels(&self) -> Vec<&str> {
        self.events.iter().map(|e| e.label.as_str()).collect()
    }

    /// Kept-event multiset, sorted.
    pub fn key(&self) -> Vec<&str> {
        let mut k = self.labels();
        k.sort_unstable();
        k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultTree {
    pub top: String,
    /// Ordered by descending probability, ties by sorted event labels.
    pub classes: Vec<CausalClass>,
}

impl FaultTree {
    pub fn total_probability(&self) -> f64 {
        self.classes.iter().map(|c| c.probability).sum()
    }
}

/// Whether replaying `steps` from the initial state visits a hazard state.
/// Muted steps that are not enabled are skipped.
pub fn reaches_hazard(global: &GlobalModel, hazard: &StateFormula<'_>, steps: &[ReplayStep]) -> bool {
    let holds = |s: &GlobalState| hazard.holds(s).unwrap_or(false);
    let mut s = global.initial_state();
    if holds(&s) {
        return true;
    }
    for step in steps {
        match (step, global.step(&s, step)) {
            (_, Some(next)) => s = next,
            // A suppressed event whose caller cannot move did not happen.
            (ReplayStep::Mute(_), None) => continue,
            (ReplayStep::Take(_), None) => return false,
        }
        if holds(&s) {
            return true;
        }
    }
    false
}

/// Reduces every counterexample path to its causal events.
///
/// Events are tested from last to first, repeating until nothing changes:
/// a local or failure event is dropped, and a synchronized event is muted
/// (caller moves, callee does not), whenever the hazard is still reached
/// without it. The result is minimal with respect to single-event removal.
pub fn causal_filter(
    ce: &Counterexample,
    global: &GlobalModel,
    hazard: &StateFormula<'_>,
) -> Vec<FilteredPath> {
    ce.paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut steps: Vec<ReplayStep> =
                p.events.iter().map(|e| ReplayStep::Take(e.clone())).collect();
            loop {
                let mut changed = false;
                for k in (0..steps.len()).rev() {
                    let ReplayStep::Take(label) = &steps[k] else {
                        continue;
                    };
                    let mut trial = steps.clone();
                    if global.event_kind(label) == EventKind::OperationCall {
                        trial[k] = ReplayStep::Mute(label.clone());
                    } else {
                        trial.remove(k);
                    }
                    if reaches_hazard(global, hazard, &trial) {
                        steps = trial;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            let kept = steps
                .iter()
                .filter_map(|s| match s {
                    ReplayStep::Take(l) => Some(l.clone()),
                    ReplayStep::Mute(_) => None,
                })
                .collect();
            FilteredPath {
                steps,
                kept,
                probability: p.probability,
                source: i,
            }
        })
        .collect()
}

/// Groups filtered paths by kept-event multiset and determines each class's
/// gate. For every pair `i < j` of kept events in the representative, the
/// pair is reversed twice, once by moving event `j` directly before event
/// `i` and once by moving event `i` directly after event `j`. The pair is
/// order-free if either reversal still reaches the hazard.
pub fn classify(
    paths: &[FilteredPath],
    global: &GlobalModel,
    hazard: &StateFormula<'_>,
) -> Vec<CausalClass> {
    let mut groups: BTreeMap<Vec<String>, Vec<&FilteredPath>> = BTreeMap::new();
    for p in paths {
        let mut key = p.kept.clone();
        key.sort_unstable();
        groups.entry(key).or_default().push(p);
    }
    let mut classes: Vec<CausalClass> = groups
        .into_values()
        .map(|members| {
            let probability = members.iter().map(|p| p.probability).sum();
            let rep = members
                .iter()
                .copied()
                .reduce(|best, p| if p.probability > best.probability { p } else { best })
                .expect("non-empty group");
            let (gate, order) = order_check(&rep.steps, global, hazard);
            CausalClass {
                gate,
                events: rep
                    .kept
                    .iter()
                    .map(|l| BasicEvent {
                        label: l.clone(),
                        kind: global.event_kind(l),
                        component: global
                            .event_owner(l)
                            .map(|i| global.machines[i].component.clone()),
                    })
                    .collect(),
                order,
                probability,
                members: members.len(),
                representative: rep.steps.clone(),
            }
        })
        .collect();
    classes.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.key().cmp(&b.key()))
    });
    classes
}

fn order_check(
    steps: &[ReplayStep],
    global: &GlobalModel,
    hazard: &StateFormula<'_>,
) -> (Gate, Vec<(usize, usize)>) {
    let pos: Vec<usize> = (0..steps.len())
        .filter(|&k| matches!(steps[k], ReplayStep::Take(_)))
        .collect();
    let mut order = Vec::new();
    let mut pairs = 0;
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            pairs += 1;
            let mut early = steps.to_vec();
            let moved = early.remove(pos[j]);
            early.insert(pos[i], moved);
            let mut late = steps.to_vec();
            let moved = late.remove(pos[i]);
            late.insert(pos[j], moved);
            if !reaches_hazard(global, hazard, &early) && !reaches_hazard(global, hazard, &late) {
                order.push((i, j));
            }
        }
    }
    let gate = if order.is_empty() {
        Gate::And
    } else if order.len() == pairs {
        Gate::Pand
    } else {
        Gate::Seq
    };
    (gate, order)
}

/// Filter, classify and assemble.
pub fn build_fault_tree(
    top: &str,
    ce: &Counterexample,
    global: &GlobalModel,
    hazard: &StateFormula<'_>,
) -> FaultTree {
    let filtered = causal_filter(ce, global, hazard);
    FaultTree {
        top: top.to_string(),
        classes: classify(&filtered, global, hazard),
    }
}

pub fn format_probability(p: f64) -> String {
    format!("{p:.5e}")
}

fn gate_caption(c: &CausalClass) -> String {
    let labels = c.labels();
    match c.gate {
        Gate::And => "AND".to_string(),
        Gate::Pand => format!("PAND {}", labels.join(" < ")),
        Gate::Seq => {
            let pairs: Vec<String> = c
                .order
                .iter()
                .map(|&(i, j)| format!("{} < {}", labels[i], labels[j]))
                .collect();
            format!("SEQ {}", pairs.join(", "))
        }
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering: the top event is the OR gate, one gate node per
/// class carrying its probability, one leaf per basic event.
pub fn emit_dot(tree: &FaultTree) -> String {
    let mut s = String::from("digraph fault_tree {\n  rankdir=TB;\n  node [fontname=\"Helvetica\"];\n");
    let _ = writeln!(
        s,
        "  top [shape=box, label=\"{}\\nOR\"];",
        dot_escape(&tree.top)
    );
    for (i, c) in tree.classes.iter().enumerate() {
        let _ = writeln!(
            s,
            "  c{i} [shape=invtrapezium, label=\"{}\\np = {}\"];",
            dot_escape(&gate_caption(c)),
            format_probability(c.probability)
        );
        let _ = writeln!(s, "  top -> c{i};");
        for (k, e) in c.events.iter().enumerate() {
            let _ = writeln!(
                s,
                "  c{i}_e{k} [shape=ellipse, label=\"{}\\n({})\"];",
                dot_escape(&e.label),
                e.kind_str()
            );
            let _ = writeln!(s, "  c{i} -> c{i}_e{k};");
        }
    }
    s.push_str("}\n");
    s
}

/// Indented plain-text rendering.
pub fn emit_text(tree: &FaultTree) -> String {
    let mut s = format!(
        "{} OR ({} classes, p = {})\n",
        tree.top,
        tree.classes.len(),
        format_probability(tree.total_probability())
    );
    for (i, c) in tree.classes.iter().enumerate() {
        let _ = writeln!(
            s,
            "  [{}] {} p = {} ({} paths)",
            i + 1,
            gate_caption(c),
            format_probability(c.probability),
            c.members
        );
        for e in &c.events {
            let _ = writeln!(s, "      {} ({})", e.label, e.kind_str());
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composer::build_global;
    use crate::ctmc::CePath;
    use crate::expr::parse_expr;
    use crate::ingest::parse_native;
    use crate::model::validate;

    const SRC: &str = r#"
component Ctl { rates { f = 0.01 h = 5.0 }
  normal N { state Idle initial state Busy
    transition Idle -> Busy stochastic 5.0 label heartbeat
    transition Busy -> Idle stochastic 5.0 label rest }
  failure Broken { state Start initial state Done
    transition * -> Start abstract-failure f label CtlBroken
    transition Start -> Done call Out.arm }
}
component Out { rates { s = 0.001 } operations { arm }
  normal N { state Off initial state On config hazard OR
    transition Off -> On trigger arm }
  failure Short { state Shorted initial config hazard OR
    transition * -> Shorted abstract-failure s label OutShort }
}
"#;

    fn path(events: &[&str], p: f64) -> CePath {
        CePath {
            events: events.iter().map(|e| e.to_string()).collect(),
            states: vec![],
            probability: p,
            jump_probability: p,
        }
    }

    fn ce(paths: Vec<CePath>) -> Counterexample {
        Counterexample {
            total_mass: paths.iter().map(|p| p.probability).sum(),
            paths,
            target: 0.0,
            model_probability: 0.0,
            expansions: 0,
            complete: true,
        }
    }

    #[test]
    fn filter_drops_non_causal_events() {
        let g = build_global(&validate(&parse_native(SRC).unwrap()).unwrap()).unwrap();
        let hz = StateFormula::new(&g, parse_expr("\"hazard\"").unwrap());
        let (fail_ctl, short) = ("CtlBroken".to_string(), "OutShort".to_string());
        let c = ce(vec![
            path(&["heartbeat", "rest", "heartbeat", &short], 0.3),
            path(&[&fail_ctl, "arm"], 0.5),
            path(&["heartbeat", &fail_ctl, "arm"], 0.2),
        ]);
        let f = causal_filter(&c, &g, &hz);
        assert_eq!(f[0].kept, vec![short.clone()]);
        assert_eq!(f[1].kept, vec![fail_ctl.clone(), "arm".to_string()]);
        assert_eq!(f[2].kept, f[1].kept);
        let classes = classify(&f, &g, &hz);
        assert_eq!(classes.len(), 2);
        assert!((classes[0].probability - 0.7).abs() < 1e-15);
        assert_eq!(classes[0].gate, Gate::Pand);
        assert_eq!(classes[0].order, vec![(0, 1)]);
        assert_eq!(classes[1].gate, Gate::And);
        assert_eq!(classes[1].events[0].kind, EventKind::Failure);
        assert!(causal_filter(&ce(vec![]), &g, &hz).is_empty());
    }

    #[test]
    fn dot_for_singleton_tree() {
        let tree = FaultTree {
            top: "hazard".into(),
            classes: vec![CausalClass {
                gate: Gate::And,
                events: vec![BasicEvent {
                    label: "Short".into(),
                    kind: EventKind::Failure,
                    component: Some("Out".into()),
                }],
                order: vec![],
                probability: 1.5e-6,
                members: 1,
                representative: vec![ReplayStep::Take("Short".into())],
            }],
        };
        let dot = emit_dot(&tree);
        assert_eq!(dot.matches("shape=").count(), 3);
        assert!(dot.contains("p = 1.50000e-6"), "{dot}");
        assert_eq!(dot, emit_dot(&tree));
        assert!(emit_text(&tree).starts_with("hazard OR (1 classes"));
    }
}
