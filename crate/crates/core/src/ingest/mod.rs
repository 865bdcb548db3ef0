//! Front ends producing a [`RawModel`]: an XMI 2.1 subset and a native
//! line-oriented text format. Neither front end resolves references; that is
//! [`crate::model::validate`]'s job.

mod native;
pub(crate) mod xmi;

pub use native::{parse_native, NativeError};
pub use xmi::{parse_xmi, XmiError};

use crate::model::{ConfigOperator, RateEntry, TransitionKind};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawModel {
    pub name: String,
    pub components: Vec<RawComponent>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawComponent {
    pub name: String,
    pub rates: Vec<RateEntry>,
    pub attributes: Vec<RawAttribute>,
    /// Operations this component provides (it is the callee).
    pub operations: Vec<String>,
    pub normal: Option<RawMachine>,
    pub failures: Vec<RawMachine>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawAttribute {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    pub init: i64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawMachine {
    pub name: String,
    pub states: Vec<RawState>,
    pub transitions: Vec<RawTransition>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawState {
    pub name: String,
    pub initial: bool,
    pub children: Vec<RawState>,
    pub entry_ops: Vec<OpRef>,
    pub config_tags: Vec<(String, ConfigOperator)>,
}

/// `Component.operation`, or a bare operation name meaning "own operation".
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpRef {
    pub component: Option<String>,
    pub name: String,
}

impl OpRef {
    pub fn parse(text: &str) -> OpRef {
        let text = text.trim().trim_end_matches("()");
        match text.rsplit_once('.') {
            Some((c, n)) => OpRef {
                component: Some(c.to_string()),
                name: n.to_string(),
            },
            None => OpRef {
                component: None,
                name: text.to_string(),
            },
        }
    }
}

impl std::fmt::Display for OpRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.component {
            Some(c) => write!(f, "{c}.{}", self.name),
            None => f.write_str(&self.name),
        }
    }
}

/// Endpoints are dotted paths relative to a machine. For failure-entry
/// transitions the source is the whole normal region (empty path); an empty
/// target means "the machine's initial state".
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawTransition {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub kind: TransitionKind,
    pub rate: Option<f64>,
    pub rate_name: Option<String>,
    pub operation: Option<OpRef>,
    pub guard: Option<String>,
    pub updates: Vec<String>,
    pub label: Option<String>,
}

pub(crate) fn split_path(text: &str) -> Vec<String> {
    let text = text.trim();
    if text.is_empty() || text == "*" {
        return Vec::new();
    }
    text.split('.').map(|s| s.trim().to_string()).collect()
}
