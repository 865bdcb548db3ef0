//! PRISM CTMC model text generation and a checker for the emitted subset.

mod check;

pub use check::{check, CheckError, CheckedModel, Explored, PrismCommand, PrismModule, PrismVar};

use std::fmt::Write as _;

use crate::composer::{FlatTransition, GlobalModel};
use crate::csl::config_formula;
use crate::expr::{fmt_real, BinOp, Expr};
use crate::model::EncodingError;

#[derive(Debug, Clone, PartialEq)]
pub struct PrismModel {
    pub header: String,
    pub constants: Vec<String>,
    pub formulas: Vec<String>,
    pub modules: Vec<String>,
    pub labels: Vec<String>,
}

impl PrismModel {
    /// The `.sm` file text. Sections are separated by blank lines.
    pub fn render(&self) -> String {
        let mut s = format!("{}\n\n", self.header);
        for c in &self.constants {
            let _ = writeln!(s, "{c}");
        }
        for section in [&self.formulas, &self.modules, &self.labels] {
            if section.is_empty() {
                continue;
            }
            s.push('\n');
            for item in section {
                s.push_str(item);
                if !item.ends_with('\n') {
                    s.push('\n');
                }
                if section == &self.modules {
                    s.push('\n');
                }
            }
        }
        while s.ends_with("\n\n") {
            s.pop();
        }
        s
    }

    pub fn command_count(&self) -> usize {
        self.modules
            .iter()
            .flat_map(|m| m.lines())
            .filter(|l| l.trim_start().starts_with('['))
            .count()
    }
}

/// One command per flat transition, in source order.
pub fn emit_module(global: &GlobalModel, index: usize) -> String {
    let m = &global.machines[index];
    let var = m.encoding.state_var();
    let attr_var = |name: &str| -> String {
        global
            .attributes
            .iter()
            .find(|a| a.machine == index && a.name == name)
            .map_or_else(|| name.to_string(), |a| a.var.clone())
    };
    let mut s = format!("module {}\n", m.module_id);
    let _ = writeln!(
        s,
        "  {var} : [0..{}] init {};",
        m.encoding.total_count.saturating_sub(1),
        m.initial
    );
    for a in global.attributes.iter().filter(|a| a.machine == index) {
        let _ = writeln!(s, "  {} : [{}..{}] init {};", a.var, a.lo, a.hi, a.init);
    }
    for t in &m.flat_transitions {
        let _ = writeln!(s, "  {}", command(global, &var, t, &attr_var));
    }
    s.push_str("endmodule\n");
    s
}

fn command(
    global: &GlobalModel,
    var: &str,
    t: &FlatTransition,
    attr_var: &dyn Fn(&str) -> String,
) -> String {
    let action = t
        .operation
        .as_ref()
        .and_then(|op| global.action_label(op))
        .unwrap_or("");
    let at = Expr::bin(BinOp::Eq, Expr::var(var), Expr::Int(i64::from(t.source.0)));
    let guard = match &t.guard {
        Some(g) => Expr::bin(BinOp::And, at, Expr::paren(g.rename(attr_var))),
        None => at,
    };
    let mut updates = format!("({var}'={})", t.target);
    for u in &t.updates {
        let _ = write!(updates, "&({}'={})", attr_var(&u.var), u.value.rename(attr_var));
    }
    format!("[{action}] {guard} -> {} : {updates};", fmt_real(t.rate))
}

/// `label "name" = body;` per state configuration, in declaration order.
pub fn emit_labels(global: &GlobalModel) -> Result<Vec<String>, EncodingError> {
    config_bodies(global).map(|v| {
        v.into_iter()
            .map(|(name, body)| format!("label \"{name}\" = {body};"))
            .collect()
    })
}

fn config_bodies(global: &GlobalModel) -> Result<Vec<(String, String)>, EncodingError> {
    let encodings: Vec<_> = global.machines.iter().map(|m| &m.encoding).collect();
    global
        .state_configs
        .iter()
        .map(|c| Ok((c.name.clone(), config_formula(c, encodings.iter().copied())?)))
        .collect()
}

/// The complete model. Each configuration is also declared as a formula so
/// properties may refer to it by its bare name.
pub fn emit_model(global: &GlobalModel) -> Result<PrismModel, EncodingError> {
    let bodies = config_bodies(global)?;
    Ok(PrismModel {
        header: "ctmc".into(),
        constants: vec![format!("const double {};", crate::csl::TIME_SYMBOL)],
        formulas: bodies
            .iter()
            .map(|(n, b)| format!("formula {n} = {b};"))
            .collect(),
        modules: (0..global.machines.len()).map(|i| emit_module(global, i)).collect(),
        labels: emit_labels(global)?,
    })
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

    #[test]
    fn one_transition_module() {
        let g = global(
            "component MC { rates { f = 0.01 } normal N { state Ok initial } failure F { state Failed initial transition * -> * abstract-failure f } }",
        );
        let text = emit_module(&g, 0);
        assert!(text.contains("  mc_state : [0..1] init 0;\n"), "{text}");
        assert!(text.contains("  [] mc_state=0 -> 0.01 : (mc_state'=1);\n"), "{text}");
    }

    #[test]
    fn empty_model_is_header_and_constant() {
        let g = GlobalModel {
            machines: vec![],
            sync_actions: vec![],
            attributes: vec![],
            state_configs: vec![],
            fast_rate: 1e9,
        };
        assert_eq!(emit_model(&g).unwrap().render(), "ctmc\n\nconst double T;\n");
    }

    #[test]
    fn sync_and_guarded_commands() {
        let g = global(
            r#"
component A { rates { f = 1.0 }
  attribute n : [0..3] init 0
  normal N { state S initial state U
    transition S -> U call B.go guard "n < 3" update "n = n + 1" }
  failure F { state X initial transition * -> X abstract-failure f } }
component B { rates { f = 1.0 } operations { go }
  normal N { state S initial config done OR state U config done OR
    transition S -> U trigger go }
  failure F { state X initial transition * -> X abstract-failure f } }"#,
        );
        let m = emit_model(&g).unwrap();
        let text = m.render();
        assert!(
            text.contains("[go] a_state=0 & (a_n<3) -> 1000000000.0 : (a_state'=1)&(a_n'=a_n+1);"),
            "{text}"
        );
        assert!(text.contains("[go] b_state=0 -> 1.0 : (b_state'=1);"), "{text}");
        assert!(text.contains("label \"done\" = ((b_state = 0)|(b_state = 1));"), "{text}");
        assert!(text.contains("formula done = ((b_state = 0)|(b_state = 1));"), "{text}");
        assert_eq!(m.command_count(), 2 + 2 + 2);
        check(&text).unwrap();
    }
}
