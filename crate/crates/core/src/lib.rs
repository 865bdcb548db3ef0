//! Translation of UML models annotated with the QuantUM dependability
//! profile into CTMC analysis artifacts, plus a desk-scale analyzer.
//!
//! The pipeline: [`ingest`] reads the native text format or XMI,
//! [`model::validate`] checks it, [`composer`] flattens each component's
//! machines and builds the synchronized product, [`prism`] and [`csl`] emit
//! the model checker inputs, [`ctmc`] builds the explicit chain and computes
//! probabilities and counterexamples, and [`faulttree`] and [`seqdiag`]
//! explain the counterexample.

pub mod expr;
pub mod ingest;
pub mod composer;
pub mod model;
pub mod csl;
pub mod prism;
pub mod ctmc;
pub mod faulttree;
pub mod seqdiag;
pub mod fixtures;
pub mod analysis;

pub use analysis::{prepare, AnalysisError, AnalysisOptions, Prepared, TimedResult};
pub use composer::{build_global, GlobalModel, GlobalState, ReplayStep};
pub use csl::{CslCategory, CslProperty};
pub use ctmc::{build_ctmc, Counterexample, Ctmc, SearchConfig, StateFormula, TransientConfig};
pub use faulttree::{CausalClass, FaultTree, Gate};
pub use ingest::{parse_native, parse_xmi, NativeError, RawModel, XmiError};
pub use model::{validate, QumModel, ValidationError};
pub use prism::PrismModel;
pub use seqdiag::SequenceDiagram;
