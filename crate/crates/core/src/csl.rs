//! Generated CSL properties: per-component failure, any failure, and one
//! property per state configuration. All are time-bounded until properties
//! over the mission time constant `T`.

use std::fmt::Write as _;

use crate::composer::GlobalModel;
use crate::model::{render_in_state, EncodingError, StateConfiguration, StateEncoding};

pub const TIME_SYMBOL: &str = "T";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CslCategory {
    ComponentFailure,
    AnyFailure,
    StateConfig,
    RawStateFormula,
}

impl CslCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            CslCategory::ComponentFailure => "component failure",
            CslCategory::AnyFailure => "any failure",
            CslCategory::StateConfig => "state configuration",
            CslCategory::RawStateFormula => "state formula",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CslProperty {
    pub name: String,
    pub category: CslCategory,
    /// Rendered property; for raw state formulas this is the bare formula.
    pub text: String,
    /// The target state formula, fully expanded.
    pub phi: String,
    pub time_symbol: &'static str,
    /// Model element the property was generated from.
    pub source: String,
}

/// `P=? [ (true) U<=T φ ]`; `phi` carries its own outer parentheses.
pub fn until_text(phi: &str) -> String {
    format!("P=? [ (true) U<={TIME_SYMBOL} {phi} ]")
}

fn join(terms: &[String], sep: &str) -> String {
    match terms {
        [one] => one.clone(),
        _ => format!("({})", terms.join(sep)),
    }
}

/// `(<id>_state > #normstate-1)`; failure-only components use `>= 1`
/// against their synthetic idle state.
pub fn failure_term(encoding: &StateEncoding) -> String {
    let var = encoding.state_var();
    if encoding.has_synthetic_idle() {
        format!("({var} >= 1)")
    } else {
        format!("({var} > {})", i64::from(encoding.normstate_count) - 1)
    }
}

pub fn component_failure(encoding: &StateEncoding) -> CslProperty {
    let phi = failure_term(encoding);
    CslProperty {
        name: format!("{}_failure", encoding.module_id),
        category: CslCategory::ComponentFailure,
        text: until_text(&phi),
        phi,
        time_symbol: TIME_SYMBOL,
        source: encoding.component.clone(),
    }
}

pub fn any_failure<'a>(encodings: impl IntoIterator<Item = &'a StateEncoding>) -> CslProperty {
    let terms: Vec<String> = encodings.into_iter().map(failure_term).collect();
    let phi = if terms.is_empty() {
        "(false)".to_string()
    } else {
        join(&terms, "|")
    };
    CslProperty {
        name: "any_failure".into(),
        category: CslCategory::AnyFailure,
        text: until_text(&phi),
        phi,
        time_symbol: TIME_SYMBOL,
        source: "all components".into(),
    }
}

/// Member terms joined by the configuration's operator.
pub fn config_formula<'a>(
    config: &StateConfiguration,
    encodings: impl IntoIterator<Item = &'a StateEncoding> + Clone,
) -> Result<String, EncodingError> {
    let mut terms = Vec::new();
    for m in &config.members {
        let enc = encodings
            .clone()
            .into_iter()
            .find(|e| e.component == m.component)
            .ok_or_else(|| EncodingError::UnknownState {
                component: m.component.clone(),
                state: m.to_string(),
            })?;
        let s = enc.get(&m.machine, &m.path).ok_or_else(|| EncodingError::UnknownState {
            component: m.component.clone(),
            state: m.to_string(),
        })?;
        terms.push(render_in_state(enc, s));
    }
    Ok(join(&terms, config.operator.symbol()))
}

/// The label-based property and the bare formula for manual reuse.
pub fn state_config_property<'a>(
    config: &StateConfiguration,
    encodings: impl IntoIterator<Item = &'a StateEncoding> + Clone,
) -> Result<(CslProperty, CslProperty), EncodingError> {
    let phi = config_formula(config, encodings)?;
    let source = format!("state configuration {} ({})", config.name, config.operator);
    let prop = CslProperty {
        name: config.name.clone(),
        category: CslCategory::StateConfig,
        text: until_text(&format!("({})", config.name)),
        phi: phi.clone(),
        time_symbol: TIME_SYMBOL,
        source: source.clone(),
    };
    let raw = CslProperty {
        name: format!("{}_formula", config.name),
        category: CslCategory::RawStateFormula,
        text: phi.clone(),
        phi,
        time_symbol: TIME_SYMBOL,
        source,
    };
    Ok((prop, raw))
}

/// Every property for the model, in a fixed order: component failures,
/// any failure, then each configuration followed by its raw formula.
pub fn generate(global: &GlobalModel) -> Result<Vec<CslProperty>, EncodingError> {
    let encodings: Vec<&StateEncoding> = global.machines.iter().map(|m| &m.encoding).collect();
    let mut out: Vec<CslProperty> = encodings.iter().map(|e| component_failure(e)).collect();
    out.push(any_failure(encodings.iter().copied()));
    for c in &global.state_configs {
        let (p, raw) = state_config_property(c, encodings.iter().copied())?;
        out.push(p);
        out.push(raw);
    }
    Ok(out)
}

/// `.csl` file text: a `//` comment line before each property.
pub fn render(props: &[CslProperty]) -> String {
    let mut s = String::new();
    for p in props {
        let _ = writeln!(s, "// {}: {} [{}]", p.category.as_str(), p.name, p.source);
        let _ = writeln!(s, "{}", p.text);
    }
    s
}

/// The fully expanded form of a property, independent of model formulas.
pub fn expanded_text(p: &CslProperty) -> String {
    match p.category {
        CslCategory::RawStateFormula => p.phi.clone(),
        _ => until_text(&wrap(&p.phi)),
    }
}

fn wrap(phi: &str) -> String {
    if phi.starts_with('(') && balanced_outer(phi) {
        phi.to_string()
    } else {
        format!("({phi})")
    }
}

/// Whether the first parenthesis closes at the very end.
fn balanced_outer(s: &str) -> bool {
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 && i + 1 != s.len() {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConfigOperator, EncodedState, Region, StateId, StateRef};

    fn enc(component: &str, id: &str, normal: u32, total: u32, idle: bool) -> StateEncoding {
        let states = (0..total)
            .map(|k| EncodedState {
                machine: if k < normal || (idle && k == 0) { "N".into() } else { "F".into() },
                path: vec![format!("s{k}")],
                id: StateId(k),
                span_hi: StateId(k),
                leaf: true,
                region: if idle && k == 0 {
                    Region::Idle
                } else if k < normal {
                    Region::Normal
                } else {
                    Region::Failure(0)
                },
            })
            .collect();
        StateEncoding {
            component: component.into(),
            module_id: id.into(),
            states,
            normstate_count: normal,
            total_count: total,
        }
    }

    #[test]
    fn component_failure_template() {
        let p = component_failure(&enc("MC", "mc", 3, 5, false));
        assert_eq!(p.text, "P=? [ (true) U<=T (mc_state > 2) ]");
        let ext = component_failure(&enc("X", "x", 0, 2, true));
        assert_eq!(ext.phi, "(x_state >= 1)");
    }

    #[test]
    fn any_failure_disjunction() {
        let a = enc("A", "a", 3, 5, false);
        let b = enc("B", "b", 2, 3, false);
        assert_eq!(any_failure([&a]).phi, component_failure(&a).phi);
        assert_eq!(
            any_failure([&a, &b]).text,
            "P=? [ (true) U<=T ((a_state > 2)|(b_state > 1)) ]"
        );
    }

    #[test]
    fn config_property_and_raw_formula() {
        let a = enc("A", "a", 3, 5, false);
        let b = enc("B", "b", 5, 7, false);
        let mut cfg = StateConfiguration {
            name: "hazard".into(),
            operator: ConfigOperator::Or,
            members: vec![
                StateRef { component: "A".into(), machine: "F".into(), path: vec!["s4".into()] },
                StateRef { component: "B".into(), machine: "F".into(), path: vec!["s6".into()] },
            ],
        };
        let (p, raw) = state_config_property(&cfg, [&a, &b]).unwrap();
        assert_eq!(p.text, "P=? [ (true) U<=T (hazard) ]");
        assert_eq!(raw.text, "((a_state = 4)|(b_state = 6))");
        assert_eq!(expanded_text(&p), "P=? [ (true) U<=T ((a_state = 4)|(b_state = 6)) ]");
        cfg.operator = ConfigOperator::And;
        let (_, raw) = state_config_property(&cfg, [&a, &b]).unwrap();
        assert_eq!(raw.text, "((a_state = 4)&(b_state = 6))");
    }
}
