//! Counterexamples as sets of paths into the target states.
//!
//! Paths are enumerated best-first over the embedded jump chain, ordered by
//! the product of branching probabilities `R(s,s')/E(s)`. Each completed path
//! is scored with its exact probability of being taken and finished within
//! the time bound: the jump product times the hypoexponential CDF of its
//! sojourn times. Enumeration stops once the collected mass reaches the
//! requested fraction of the model probability, or on one of the caps.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::DMatrix;
use thiserror::Error;

use super::transient::dense_transient;
use super::Ctmc;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Fraction of the model probability the path set must cover.
    pub mass_fraction: f64,
    pub path_cap: usize,
    /// Bound on frontier pops.
    pub max_expansions: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            mass_fraction: 0.9,
            path_cap: 10_000,
            max_expansions: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CePath {
    pub events: Vec<String>,
    /// Visited CTMC states, initial first, target last.
    pub states: Vec<usize>,
    pub probability: f64,
    pub jump_probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    /// Sorted by probability, highest first.
    pub paths: Vec<CePath>,
    pub total_mass: f64,
    /// The mass that was requested: `mass_fraction * model_probability`.
    pub target: f64,
    pub model_probability: f64,
    pub expansions: usize,
    /// Whether the requested mass was reached.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CounterexampleError {
    #[error("no target state is reachable from the initial state")]
    TargetUnreachable,
    #[error("mass fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("target vector has {got} entries for {expected} states")]
    TargetSize { expected: usize, got: usize },
}

struct Node {
    state: usize,
    parent: usize,
    /// Index into `Ctmc::transitions` of the step into this node.
    via: usize,
    jump: f64,
}

const ROOT: usize = usize::MAX;

#[derive(PartialEq)]
struct Entry {
    jump: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.jump
            .total_cmp(&other.jump)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn can_reach(ctmc: &Ctmc, target: &[bool]) -> Vec<bool> {
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); ctmc.state_count()];
    for t in &ctmc.transitions {
        preds[t.dst as usize].push(t.src as usize);
    }
    let mut can = target.to_vec();
    let mut stack: Vec<usize> = (0..can.len()).filter(|&s| can[s]).collect();
    while let Some(s) = stack.pop() {
        for &p in &preds[s] {
            if !can[p] {
                can[p] = true;
                stack.push(p);
            }
        }
    }
    can
}

/// `P(X_1 + ... + X_k <= t)` for independent `X_i ~ Exp(rates[i])`.
pub(crate) fn hypoexponential_cdf(rates: &[f64], t: f64) -> f64 {
    let k = rates.len();
    if k == 0 {
        return 1.0;
    }
    let mut q = DMatrix::<f64>::zeros(k + 1, k + 1);
    for (i, &r) in rates.iter().enumerate() {
        q[(i, i)] = -r;
        q[(i, i + 1)] = r;
    }
    dense_transient(&q, 0, t)[k].clamp(0.0, 1.0)
}

pub fn collect_counterexample(
    ctmc: &Ctmc,
    target: &[bool],
    t: f64,
    model_probability: f64,
    cfg: &SearchConfig,
) -> Result<Counterexample, CounterexampleError> {
    if target.len() != ctmc.state_count() {
        return Err(CounterexampleError::TargetSize {
            expected: ctmc.state_count(),
            got: target.len(),
        });
    }
    if !(cfg.mass_fraction > 0.0 && cfg.mass_fraction <= 1.0) {
        return Err(CounterexampleError::InvalidFraction(cfg.mass_fraction));
    }
    let can = can_reach(ctmc, target);
    if !can[ctmc.initial] {
        return Err(CounterexampleError::TargetUnreachable);
    }
    let goal = cfg.mass_fraction * model_probability;
    let reached = |mass: f64| mass >= goal * (1.0 - 1e-9);

    let mut nodes = vec![Node {
        state: ctmc.initial,
        parent: ROOT,
        via: 0,
        jump: 1.0,
    }];
    let mut heap = BinaryHeap::from([Entry { jump: 1.0, node: 0 }]);
    let mut cdf_cache: HashMap<Vec<u64>, f64> = HashMap::new();
    let mut paths = Vec::new();
    let mut total = 0.0;
    let mut expansions = 0;

    while let Some(Entry { node, .. }) = heap.pop() {
        if (!paths.is_empty() && reached(total))
            || paths.len() >= cfg.path_cap
            || expansions >= cfg.max_expansions
        {
            break;
        }
        expansions += 1;
        let s = nodes[node].state;
        if target[s] {
            let path = trace(ctmc, &nodes, node);
            let rates: Vec<f64> = path.states[..path.states.len() - 1]
                .iter()
                .map(|&v| ctmc.exit_rates[v])
                .collect();
            let key: Vec<u64> = rates.iter().map(|r| r.to_bits()).collect();
            let cdf = *cdf_cache
                .entry(key)
                .or_insert_with(|| hypoexponential_cdf(&rates, t));
            let probability = nodes[node].jump * cdf;
            total += probability;
            paths.push(CePath {
                probability,
                jump_probability: nodes[node].jump,
                ..path
            });
            continue;
        }
        let exit = ctmc.exit_rates[s];
        for (k, tr) in ctmc.out(s).iter().enumerate() {
            let d = tr.dst as usize;
            if !can[d] {
                continue;
            }
            let jump = nodes[node].jump * tr.rate / exit;
            if jump == 0.0 {
                continue;
            }
            nodes.push(Node {
                state: d,
                parent: node,
                via: ctmc.row_start[s] + k,
                jump,
            });
            heap.push(Entry {
                jump,
                node: nodes.len() - 1,
            });
        }
    }

    paths.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.events.cmp(&b.events))
    });
    log::debug!(
        "counterexample: {} paths, mass {total:e} of {goal:e} after {expansions} expansions",
        paths.len()
    );
    Ok(Counterexample {
        paths,
        total_mass: total,
        target: goal,
        model_probability,
        expansions,
        complete: reached(total),
    })
}

fn trace(ctmc: &Ctmc, nodes: &[Node], mut at: usize) -> CePath {
    let mut states = Vec::new();
    let mut events = Vec::new();
    loop {
        let n = &nodes[at];
        states.push(n.state);
        if n.parent == ROOT {
            break;
        }
        events.push(ctmc.label(&ctmc.transitions[n.via]).to_string());
        at = n.parent;
    }
    states.reverse();
    events.reverse();
    CePath {
        events,
        states,
        probability: 0.0,
        jump_probability: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypoexponential_matches_closed_forms() {
        let t = 2.0f64;
        assert!((hypoexponential_cdf(&[0.5], t) - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        // Erlang(2, 1): 1 - e^{-t}(1 + t)
        let e = 1.0 - (-t).exp() * (1.0 + t);
        assert!((hypoexponential_cdf(&[1.0, 1.0], t) - e).abs() < 1e-12);
        // Distinct rates a, b: 1 - (b e^{-at} - a e^{-bt}) / (b - a)
        let (a, b) = (1.0f64, 3.0f64);
        let e = 1.0 - (b * (-a * t).exp() - a * (-b * t).exp()) / (b - a);
        assert!((hypoexponential_cdf(&[a, b], t) - e).abs() < 1e-12);
    }

    #[test]
    fn diamond_paths_cover_the_probability() {
        // 0 -> 1 -> 3 and 0 -> 2 -> 3; state 4 is a dead end.
        let c = Ctmc::from_triples(
            5,
            &[(0, 1, 2.0), (0, 2, 1.0), (0, 4, 1.0), (1, 3, 1.0), (2, 3, 5.0)],
        );
        let target = [false, false, false, true, false];
        let p = super::super::transient_until(&c, &target, 1.0, &Default::default()).unwrap();
        let cfg = SearchConfig {
            mass_fraction: 1.0,
            ..Default::default()
        };
        let ce = collect_counterexample(&c, &target, 1.0, p, &cfg).unwrap();
        assert_eq!(ce.paths.len(), 2);
        assert!(ce.complete);
        assert!((ce.total_mass - p).abs() < 1e-9, "{} vs {p}", ce.total_mass);
        assert!(ce.paths[0].probability >= ce.paths[1].probability);
        assert_eq!(ce.paths[0].states.first(), Some(&0));
        assert_eq!(ce.paths[0].states.last(), Some(&3));
    }

    #[test]
    fn unreachable_target_is_an_error() {
        let c = Ctmc::from_triples(2, &[(0, 1, 1.0)]);
        let e = collect_counterexample(&c, &[false, false], 1.0, 0.0, &Default::default());
        assert_eq!(e, Err(CounterexampleError::TargetUnreachable));
    }

    #[test]
    fn path_cap_bounds_cyclic_chains() {
        let c = Ctmc::from_triples(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1e-3)]);
        let cfg = SearchConfig {
            mass_fraction: 1.0,
            path_cap: 5,
            ..Default::default()
        };
        let ce = collect_counterexample(&c, &[false, false, true], 1.0, 1.0, &cfg).unwrap();
        assert_eq!(ce.paths.len(), 5);
        assert!(!ce.complete);
    }
}
