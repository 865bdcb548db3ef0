//! End-to-end analysis of one state configuration: state space, transient
//! probability, counterexample, fault tree and sequence diagram, for one or
//! more mission times.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::composer::{build_global_with, ComposeError, GlobalModel, DEFAULT_FAST_RATE};
use crate::ctmc::{
    build_ctmc, collect_counterexample, transient_until, BuildError, Counterexample,
    CounterexampleError, Ctmc, SearchConfig, StateFormula, TransientConfig, TransientError,
    DEFAULT_STATE_CAP,
};
use crate::expr::Expr;
use crate::faulttree::{build_fault_tree, format_probability, FaultTree};
use crate::model::QumModel;
use crate::seqdiag::{build_diagram, SeqDiagError, SequenceDiagram};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub transient: TransientConfig,
    pub search: SearchConfig,
    pub state_cap: usize,
    pub fast_rate: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            transient: TransientConfig::default(),
            search: SearchConfig::default(),
            state_cap: DEFAULT_STATE_CAP,
            fast_rate: DEFAULT_FAST_RATE,
        }
    }
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("unknown state configuration '{0}'")]
    UnknownConfig(String),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("cannot evaluate the hazard formula: {0}")]
    Hazard(#[from] crate::expr::EvalError),
    #[error(transparent)]
    Transient(#[from] TransientError),
    #[error(transparent)]
    Counterexample(#[from] CounterexampleError),
    #[error(transparent)]
    SequenceDiagram(#[from] SeqDiagError),
}

/// A model with its state space built and the hazard states marked.
#[derive(Debug)]
pub struct Prepared {
    pub config: String,
    pub global: GlobalModel,
    pub ctmc: Ctmc,
    pub target: Vec<bool>,
    pub hazard: Expr,
    pub build_time: Duration,
    options: AnalysisOptions,
}

#[derive(Debug, Clone)]
pub struct TimedResult {
    pub time: f64,
    pub probability: f64,
    pub counterexample: Counterexample,
    pub tree: FaultTree,
    pub diagram: SequenceDiagram,
    pub probability_runtime: Duration,
    pub counterexample_runtime: Duration,
    pub fault_tree_runtime: Duration,
}

pub fn prepare(
    model: &QumModel,
    config: &str,
    options: &AnalysisOptions,
) -> Result<Prepared, AnalysisError> {
    if model.config(config).is_none() {
        return Err(AnalysisError::UnknownConfig(config.to_string()));
    }
    let start = Instant::now();
    let global = build_global_with(model, options.fast_rate)?;
    let ctmc = build_ctmc(&global, options.state_cap)?;
    let hazard = Expr::Label(config.to_string());
    let target = ctmc.mark(&global, &hazard)?;
    log::info!(
        "state space: {} states, {} transitions, {} hazard states",
        ctmc.state_count(),
        ctmc.transition_count(),
        target.iter().filter(|&&b| b).count()
    );
    Ok(Prepared {
        config: config.to_string(),
        global,
        ctmc,
        target,
        hazard,
        build_time: start.elapsed(),
        options: options.clone(),
    })
}

impl Prepared {
    pub fn probability(&self, t: f64) -> Result<f64, TransientError> {
        transient_until(&self.ctmc, &self.target, t, &self.options.transient)
    }

    pub fn run(&self, t: f64) -> Result<TimedResult, AnalysisError> {
        let start = Instant::now();
        let probability = self.probability(t)?;
        let probability_runtime = start.elapsed();

        let start = Instant::now();
        let counterexample = match collect_counterexample(
            &self.ctmc,
            &self.target,
            t,
            probability,
            &self.options.search,
        ) {
            Ok(ce) => ce,
            // The hazard cannot occur at all: nothing to explain.
            Err(CounterexampleError::TargetUnreachable) => Counterexample {
                paths: Vec::new(),
                total_mass: 0.0,
                target: 0.0,
                model_probability: probability,
                expansions: 0,
                complete: true,
            },
            Err(e) => return Err(e.into()),
        };
        let counterexample_runtime = start.elapsed();

        let start = Instant::now();
        let formula = StateFormula::new(&self.global, self.hazard.clone());
        let tree = build_fault_tree(&self.config, &counterexample, &self.global, &formula);
        let fault_tree_runtime = start.elapsed();
        let diagram = build_diagram(&self.config, &tree.classes, &self.global)?;
        Ok(TimedResult {
            time: t,
            probability,
            counterexample,
            tree,
            diagram,
            probability_runtime,
            counterexample_runtime,
            fault_tree_runtime,
        })
    }
}

/// Plain-text result table, one row per mission time.
pub fn render_report(p: &Prepared, results: &[TimedResult]) -> String {
    let mut s = format!(
        "configuration: {}\nstates: {}  transitions: {}\n\n",
        p.config,
        p.ctmc.state_count(),
        p.ctmc.transition_count()
    );
    let _ = writeln!(
        s,
        "{:>10}  {:>13}  {:>7}  {:>9}  {:>12}  {:>12}  {:>12}",
        "T", "probability", "#paths", "#classes", "runtime P", "runtime CX", "runtime FT"
    );
    for r in results {
        let _ = writeln!(
            s,
            "{:>10}  {:>13}  {:>7}  {:>9}  {:>12}  {:>12}  {:>12}",
            crate::expr::fmt_real(r.time),
            format_probability(r.probability),
            r.counterexample.paths.len(),
            r.tree.classes.len(),
            format!("{:.3} s", r.probability_runtime.as_secs_f64()),
            format!("{:.3} s", r.counterexample_runtime.as_secs_f64()),
            format!("{:.3} s", r.fault_tree_runtime.as_secs_f64()),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn minimal_model_end_to_end() {
        let p = prepare(&fixtures::minimal(), "pump_dry", &AnalysisOptions::default()).unwrap();
        let r = p.run(10.0).unwrap();
        // Two exponential phases, rates 1e-3 and 0.5.
        let (a, b, t) = (1e-3f64, 0.5f64, 10.0f64);
        let exact = 1.0 - (b * (-a * t).exp() - a * (-b * t).exp()) / (b - a);
        assert!((r.probability - exact).abs() < 1e-9);
        assert_eq!(r.tree.classes.len(), 1);
        assert_eq!(r.diagram.operands.len(), 1);
        assert_eq!(p.run(0.0).unwrap().probability, 0.0);
        let report = render_report(&p, &[r]);
        assert!(report.contains("#classes"), "{report}");
    }

    #[test]
    fn unknown_config() {
        let e = prepare(&fixtures::minimal(), "nope", &AnalysisOptions::default());
        assert!(matches!(e, Err(AnalysisError::UnknownConfig(_))));
    }
}
