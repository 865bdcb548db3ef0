//! Explicit-state CTMC construction, transient analysis and counterexamples.

mod counterexample;
mod transient;

pub use counterexample::{
    collect_counterexample, CePath, Counterexample, CounterexampleError, SearchConfig,
};
pub use transient::{dense_transient, transient_until, TransientConfig, TransientError};

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::composer::{GlobalModel, GlobalState, StepError};
use crate::expr::{EvalError, Expr, Lookup, Value};
use crate::model::StateId;

pub const DEFAULT_STATE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtmcTransition {
    pub src: u32,
    pub dst: u32,
    pub rate: f64,
    /// Index into [`Ctmc::labels`].
    pub label: u32,
}

/// Sparse CTMC. Transitions are grouped by source (`row_start` offsets);
/// self-loops are omitted because they do not affect transient behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct Ctmc {
    pub states: Vec<GlobalState>,
    pub transitions: Vec<CtmcTransition>,
    pub row_start: Vec<usize>,
    pub labels: Vec<String>,
    pub initial: usize,
    pub exit_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("state space exceeds the limit of {0} states")]
    StateSpaceLimit(usize),
    #[error(transparent)]
    Step(#[from] StepError),
}

impl Ctmc {
    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn out(&self, s: usize) -> &[CtmcTransition] {
        &self.transitions[self.row_start[s]..self.row_start[s + 1]]
    }

    pub fn label(&self, t: &CtmcTransition) -> &str {
        &self.labels[t.label as usize]
    }

    /// A chain over `n` anonymous states from `(src, dst, rate)` triples;
    /// used for hand-built and randomly generated chains.
    pub fn from_triples(n: usize, triples: &[(usize, usize, f64)]) -> Ctmc {
        let mut sorted: Vec<(usize, usize, f64)> = triples
            .iter()
            .copied()
            .filter(|(s, d, r)| s != d && *r > 0.0)
            .collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let states = (0..n)
            .map(|i| GlobalState {
                locs: vec![StateId(i as u32)],
                vals: Vec::new(),
            })
            .collect();
        let transitions = sorted
            .iter()
            .map(|&(s, d, r)| CtmcTransition {
                src: s as u32,
                dst: d as u32,
                rate: r,
                label: 0,
            })
            .collect();
        finish(states, transitions, vec!["t".into()], 0)
    }

    /// Marks states satisfying `phi`.
    pub fn mark(&self, global: &GlobalModel, phi: &Expr) -> Result<Vec<bool>, EvalError> {
        let f = StateFormula::new(global, phi.clone());
        self.states.iter().map(|s| f.holds(s)).collect()
    }

    /// PRISM explicit `.tra` text: header `states transitions`, then
    /// `src dst rate` with parallel edges merged.
    pub fn export_tra(&self) -> String {
        let mut rows: Vec<(u32, u32, f64)> = Vec::new();
        for s in 0..self.state_count() {
            let mut merged: Vec<(u32, f64)> = Vec::new();
            for t in self.out(s) {
                match merged.iter_mut().find(|(d, _)| *d == t.dst) {
                    Some(e) => e.1 += t.rate,
                    None => merged.push((t.dst, t.rate)),
                }
            }
            merged.sort_by_key(|e| e.0);
            rows.extend(merged.into_iter().map(|(d, r)| (s as u32, d, r)));
        }
        let mut out = format!("{} {}\n", self.state_count(), rows.len());
        for (s, d, r) in rows {
            let _ = writeln!(out, "{s} {d} {}", crate::expr::fmt_real(r));
        }
        out
    }

    /// PRISM explicit `.sta` text: variable header, then one valuation per state.
    pub fn export_sta(&self, global: &GlobalModel) -> String {
        let mut names = Vec::new();
        for (i, m) in global.machines.iter().enumerate() {
            names.push(m.encoding.state_var());
            names.extend(global.attributes.iter().filter(|a| a.machine == i).map(|a| a.var.clone()));
        }
        let mut out = format!("({})\n", names.join(","));
        for (k, s) in self.states.iter().enumerate() {
            let look = global.var_lookup(s);
            let vals: Vec<String> = names
                .iter()
                .map(|n| look(n).map_or_else(|| "?".into(), |v| v.to_string()))
                .collect();
            let _ = writeln!(out, "{k}:({})", vals.join(","));
        }
        out
    }
}

/// A state formula over the emitted model's variables, evaluated directly
/// on global states. Quoted labels and bare configuration names resolve to
/// the state configurations.
#[derive(Debug, Clone)]
pub struct StateFormula<'g> {
    global: &'g GlobalModel,
    phi: Expr,
    configs: Vec<(String, Expr)>,
}

impl<'g> StateFormula<'g> {
    pub fn new(global: &'g GlobalModel, phi: Expr) -> Self {
        let encodings: Vec<_> = global.machines.iter().map(|m| &m.encoding).collect();
        let configs = global
            .state_configs
            .iter()
            .filter_map(|c| {
                let body = crate::csl::config_formula(c, encodings.iter().copied()).ok()?;
                Some((c.name.clone(), crate::expr::parse_expr(&body).ok()?))
            })
            .collect();
        StateFormula { global, phi, configs }
    }

    pub fn expr(&self) -> &Expr {
        &self.phi
    }

    pub fn holds(&self, s: &GlobalState) -> Result<bool, EvalError> {
        struct Env<'a> {
            vars: &'a dyn Fn(&str) -> Option<i64>,
            configs: &'a [(String, Expr)],
        }
        impl Lookup for Env<'_> {
            fn var(&self, name: &str) -> Option<Value> {
                if let Some(v) = (self.vars)(name) {
                    return Some(Value::Int(v));
                }
                let (_, body) = self.configs.iter().find(|(n, _)| n == name)?;
                body.eval(self).ok()
            }
            fn label(&self, name: &str) -> Option<bool> {
                let (_, body) = self.configs.iter().find(|(n, _)| n == name)?;
                body.eval_bool(self).ok()
            }
        }
        let vars = self.global.var_lookup(s);
        self.phi.eval_bool(&Env {
            vars: &vars,
            configs: &self.configs,
        })
    }
}

fn finish(
    states: Vec<GlobalState>,
    transitions: Vec<CtmcTransition>,
    labels: Vec<String>,
    initial: usize,
) -> Ctmc {
    let n = states.len();
    let mut row_start = vec![0usize; n + 1];
    for t in &transitions {
        row_start[t.src as usize + 1] += 1;
    }
    for i in 0..n {
        row_start[i + 1] += row_start[i];
    }
    let mut exit_rates = vec![0.0; n];
    for t in &transitions {
        exit_rates[t.src as usize] += t.rate;
    }
    Ctmc {
        states,
        transitions,
        row_start,
        labels,
        initial,
        exit_rates,
    }
}

/// Breadth-first exploration from the initial global state.
pub fn build_ctmc(global: &GlobalModel, state_cap: usize) -> Result<Ctmc, BuildError> {
    let init = global.initial_state();
    let mut index: HashMap<GlobalState, u32> = HashMap::new();
    let mut states = vec![init.clone()];
    index.insert(init, 0);
    let mut labels: Vec<String> = Vec::new();
    let mut label_ids: HashMap<String, u32> = HashMap::new();
    let mut transitions = Vec::new();
    let mut queue = VecDeque::from([0u32]);
    while let Some(s) = queue.pop_front() {
        let state = states[s as usize].clone();
        for mv in global.moves(&state)? {
            let next = global.apply(&state, &mv.parts)?;
            if next == state {
                continue;
            }
            let dst = match index.get(&next) {
                Some(&d) => d,
                None => {
                    if states.len() >= state_cap {
                        return Err(BuildError::StateSpaceLimit(state_cap));
                    }
                    let d = states.len() as u32;
                    index.insert(next.clone(), d);
                    states.push(next);
                    queue.push_back(d);
                    d
                }
            };
            let next_id = label_ids.len() as u32;
            let label = *label_ids.entry(mv.label.clone()).or_insert_with(|| {
                labels.push(mv.label.clone());
                next_id
            });
            transitions.push(CtmcTransition {
                src: s,
                dst,
                rate: mv.rate,
                label,
            });
        }
    }
    Ok(finish(states, transitions, labels, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composer::build_global;
    use crate::ingest::parse_native;
    use crate::model::validate;

    fn global(src: &str) -> GlobalModel {
        build_global(&validate(&parse_native(src).unwrap()).unwrap()).unwrap()
    }

    const ONE: &str = "component A { rates { f = 0.1 } normal N { state Ok initial } failure F { state X initial transition * -> * abstract-failure f } }";

    #[test]
    fn single_machine() {
        let c = build_ctmc(&global(ONE), 100).unwrap();
        assert_eq!((c.state_count(), c.transition_count()), (2, 1));
        assert_eq!(c.exit_rates, vec![0.1, 0.0]);
    }

    #[test]
    fn independent_product() {
        let src = format!("{ONE}\n{}", ONE.replace("component A", "component B"));
        let c = build_ctmc(&global(&src), 100).unwrap();
        assert_eq!((c.state_count(), c.transition_count()), (4, 4));
        assert_eq!(build_ctmc(&global(&src), 3), Err(BuildError::StateSpaceLimit(3)));
        assert_eq!(c.export_tra().lines().next(), Some("4 4"));
        assert!(c.export_sta(&global(&src)).starts_with("(a_state,b_state)\n0:(0,0)\n"));
    }

    #[test]
    fn marking_with_labels() {
        let src = ONE.replace("state X initial", "state X initial config bad OR");
        let g = global(&src);
        let c = build_ctmc(&g, 100).unwrap();
        let phi = crate::expr::parse_expr("\"bad\"").unwrap();
        assert_eq!(c.mark(&g, &phi).unwrap(), vec![false, true]);
        let phi = crate::expr::parse_expr("bad | a_state=0").unwrap();
        assert_eq!(c.mark(&g, &phi).unwrap(), vec![true, true]);
    }
}
