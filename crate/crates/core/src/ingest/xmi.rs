//! XMI 2.1 front end. Only the subset described in `docs/xmi-dialect.md` is
//! understood; unknown elements and attributes are skipped.

use std::collections::HashMap;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use super::{OpRef, RawAttribute, RawComponent, RawMachine, RawModel, RawState, RawTransition};
use crate::model::{ConfigOperator, RateEntry, TransitionKind};

pub const XMI_VERSION: &str = "2.1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XmiError {
    #[error("XML syntax error at line {line}: {message}")]
    XmlSyntax { line: usize, message: String },
    #[error("unsupported XMI version '{0}' (expected 2.1)")]
    UnsupportedXmiVersion(String),
    #[error("the QuantUM profile is not applied to the model")]
    MissingProfileApplication,
    #[error("malformed QuantUM payload: {0}")]
    Payload(String),
}

/// Minimal element tree; text content is concatenated per element.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct XmlNode {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<XmlNode>,
    pub text: String,
}

impl XmlNode {
    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn xmi_type(&self) -> Option<&str> {
        self.attr("xmi:type")
    }

    pub fn id(&self) -> Option<&str> {
        self.attr("xmi:id")
    }

    pub fn children_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a XmlNode> + 'a {
        self.children.iter().filter(move |c| c.name == name)
    }

    pub fn walk<'a>(&'a self, out: &mut Vec<&'a XmlNode>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }
}

fn line_of(src: &[u8], pos: usize) -> usize {
    1 + src[..pos.min(src.len())].iter().filter(|b| **b == b'\n').count()
}

fn element(src: &[u8], e: &BytesStart<'_>, pos: usize) -> Result<XmlNode, XmiError> {
    let mut node = XmlNode {
        name: String::from_utf8_lossy(e.name().as_ref()).into_owned(),
        ..XmlNode::default()
    };
    for a in e.attributes() {
        let a = a.map_err(|err| XmiError::XmlSyntax {
            line: line_of(src, pos),
            message: err.to_string(),
        })?;
        let value = a.unescape_value().map_err(|err| XmiError::XmlSyntax {
            line: line_of(src, pos),
            message: err.to_string(),
        })?;
        node.attrs.push((
            String::from_utf8_lossy(a.key.as_ref()).into_owned(),
            value.into_owned(),
        ));
    }
    Ok(node)
}

/// Parses a whole document into its root element.
pub(crate) fn parse_xml(src: &[u8]) -> Result<XmlNode, XmiError> {
    let text = std::str::from_utf8(src).map_err(|e| XmiError::XmlSyntax {
        line: line_of(src, e.valid_up_to()),
        message: "input is not valid UTF-8".into(),
    })?;
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);
    let mut stack: Vec<XmlNode> = Vec::new();
    let mut root: Option<XmlNode> = None;
    let syntax = |pos: u64, message: String| XmiError::XmlSyntax {
        line: line_of(src, pos as usize),
        message,
    };
    loop {
        let pos = reader.buffer_position();
        let ev = reader
            .read_event()
            .map_err(|e| syntax(reader.error_position(), e.to_string()))?;
        match ev {
            Event::Start(e) => stack.push(element(src, &e, pos as usize)?),
            Event::Empty(e) => {
                let node = element(src, &e, pos as usize)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None if root.is_none() => root = Some(node),
                    None => return Err(syntax(pos, "more than one root element".into())),
                }
            }
            Event::End(_) => {
                let node = stack.pop().ok_or_else(|| syntax(pos, "unexpected end tag".into()))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None if root.is_none() => root = Some(node),
                    None => return Err(syntax(pos, "more than one root element".into())),
                }
            }
            Event::Text(t) => {
                let s = t.unescape().map_err(|e| syntax(pos, e.to_string()))?;
                match stack.last_mut() {
                    Some(top) => top.text.push_str(&s),
                    None => return Err(syntax(pos, "text outside the root element".into())),
                }
            }
            Event::CData(t) => {
                if let Some(top) = stack.last_mut() {
                    top.text.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if let Some(open) = stack.last() {
        return Err(syntax(src.len() as u64, format!("unclosed element <{}>", open.name)));
    }
    root.ok_or_else(|| syntax(0, "no root element".into()))
}

/// Where each state lives: owning machine id and path inside that machine.
struct StateIndex {
    machine: HashMap<String, String>,
    path: HashMap<String, Vec<String>>,
    /// Pseudostates of kind `initial`.
    pseudo: HashMap<String, ()>,
}

fn local_name(name: &str) -> &str {
    name.rsplit_once(':').map_or(name, |(_, n)| n)
}

fn is_stereotype(n: &XmlNode, name: &str) -> bool {
    n.name.starts_with("QuantUM:") && local_name(&n.name) == name
}

/// Parses an XMI 2.1 document carrying QuantUM stereotype applications.
pub fn parse_xmi(src: &[u8]) -> Result<RawModel, XmiError> {
    let root = parse_xml(src)?;
    let version = root.attr("xmi:version").unwrap_or("");
    if version != XMI_VERSION {
        return Err(XmiError::UnsupportedXmiVersion(version.to_string()));
    }
    let mut all = Vec::new();
    root.walk(&mut all);
    let applied = all.iter().any(|n| {
        n.name == "profileApplication"
            && n.children_named("appliedProfile").any(|p| {
                p.attr("href")
                    .or(p.attr("name"))
                    .is_some_and(|h| h.contains("QuantUM"))
            })
    });
    if !applied {
        return Err(XmiError::MissingProfileApplication);
    }
    let model = all
        .iter()
        .find(|n| n.name == "uml:Model")
        .copied()
        .unwrap_or(&root);

    // Operation ids → (owner class, operation name).
    let mut ops: HashMap<&str, OpRef> = HashMap::new();
    let classes: Vec<&XmlNode> = all
        .iter()
        .filter(|n| n.name == "packagedElement" && n.xmi_type() == Some("uml:Class"))
        .copied()
        .collect();
    for c in &classes {
        let cname = c.attr("name").unwrap_or("");
        for o in c.children_named("ownedOperation") {
            if let (Some(id), Some(name)) = (o.id(), o.attr("name")) {
                ops.insert(
                    id,
                    OpRef {
                        component: Some(cname.to_string()),
                        name: name.to_string(),
                    },
                );
            }
        }
    }
    let stereo = |name: &str| -> Vec<&XmlNode> {
        all.iter().filter(|n| is_stereotype(n, name)).copied().collect()
    };
    let by_base = |name: &str, key: &str| -> HashMap<String, &XmlNode> {
        stereo(name)
            .into_iter()
            .filter_map(|n| n.attr(key).map(|b| (b.to_string(), n)))
            .collect()
    };
    let comp_apps = by_base("QUMComponent", "base_Class");
    let mut transition_apps: HashMap<String, (TransitionKind, &XmlNode)> = HashMap::new();
    for kind in TransitionKind::ALL {
        if let Some(st) = kind.stereotype() {
            for (base, n) in by_base(st, "base_Transition") {
                transition_apps.insert(base, (kind, n));
            }
        }
    }
    let mut config_apps: HashMap<String, Vec<(String, ConfigOperator)>> = HashMap::new();
    for n in stereo("QUMStateConfiguration") {
        let (Some(base), Some(name)) = (n.attr("base_State"), n.attr("name")) else {
            return Err(XmiError::Payload("QUMStateConfiguration needs base_State and name".into()));
        };
        let op_text = n.attr("operator").unwrap_or("OR");
        let op = ConfigOperator::parse(op_text)
            .ok_or_else(|| XmiError::Payload(format!("unknown configuration operator '{op_text}'")))?;
        config_apps.entry(base.to_string()).or_default().push((name.to_string(), op));
    }
    let bounded = by_base("QUMBoundedAttribute", "base_Property");

    let ctx = Ctx {
        ops: &ops,
        transition_apps: &transition_apps,
        config_apps: &config_apps,
    };
    let mut out = RawModel {
        name: model.attr("name").unwrap_or("").to_string(),
        components: Vec::new(),
    };
    for c in classes {
        let Some(app) = c.id().and_then(|id| comp_apps.get(id)) else { continue };
        out.components.push(ctx.component(c, app, &bounded)?);
    }
    Ok(out)
}

struct Ctx<'a> {
    ops: &'a HashMap<&'a str, OpRef>,
    transition_apps: &'a HashMap<String, (TransitionKind, &'a XmlNode)>,
    config_apps: &'a HashMap<String, Vec<(String, ConfigOperator)>>,
}

fn number(n: &XmlNode, key: &str) -> Result<Option<f64>, XmiError> {
    n.attr(key)
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| XmiError::Payload(format!("'{v}' is not a number ({key})")))
        })
        .transpose()
}

fn integer(n: &XmlNode, key: &str) -> Result<Option<i64>, XmiError> {
    n.attr(key)
        .map(|v| {
            v.trim()
                .parse::<i64>()
                .map_err(|_| XmiError::Payload(format!("'{v}' is not an integer ({key})")))
        })
        .transpose()
}

fn body_text(n: &XmlNode) -> String {
    let mut s = n.attr("body").unwrap_or("").to_string();
    for b in n.children_named("body") {
        if !s.is_empty() {
            s.push(';');
        }
        s.push_str(&b.text);
    }
    s
}

impl Ctx<'_> {
    fn component(
        &self,
        class: &XmlNode,
        app: &XmlNode,
        bounded: &HashMap<String, &XmlNode>,
    ) -> Result<RawComponent, XmiError> {
        let mut c = RawComponent {
            name: class.attr("name").unwrap_or("").to_string(),
            ..RawComponent::default()
        };
        for r in app.children_named("rates") {
            let name = r.attr("name").unwrap_or("").to_string();
            let rate = number(r, "rate")?
                .ok_or_else(|| XmiError::Payload(format!("rate entry '{name}' has no rate")))?;
            c.rates.push(RateEntry { name, rate });
        }
        for a in class.children_named("ownedAttribute") {
            let Some(b) = a.id().and_then(|id| bounded.get(id)) else { continue };
            let lo = integer(b, "lower")?.unwrap_or(0);
            let hi = integer(b, "upper")?.unwrap_or(lo);
            let init = match a.children_named("defaultValue").next() {
                Some(d) => integer(d, "value")?.unwrap_or(lo),
                None => lo,
            };
            c.attributes.push(RawAttribute {
                name: a.attr("name").unwrap_or("").to_string(),
                lo,
                hi,
                init,
            });
        }
        c.operations = class
            .children_named("ownedOperation")
            .filter_map(|o| o.attr("name").map(str::to_string))
            .collect();

        let machines: HashMap<&str, &XmlNode> = class
            .children_named("ownedBehavior")
            .filter(|b| b.xmi_type() == Some("uml:StateMachine"))
            .filter_map(|b| b.id().map(|id| (id, b)))
            .collect();
        // Index states of all machines of this class: repair transitions
        // point across machines.
        let mut index = StateIndex {
            machine: HashMap::new(),
            path: HashMap::new(),
            pseudo: HashMap::new(),
        };
        for (id, m) in &machines {
            index.machine.insert(id.to_string(), id.to_string());
            index.path.insert(id.to_string(), Vec::new());
            for r in m.children_named("region") {
                index_region(r, id, &[], &mut index);
            }
        }
        let machine = |id: &str| -> Result<RawMachine, XmiError> {
            let m = machines
                .get(id)
                .ok_or_else(|| XmiError::Payload(format!("unknown state machine '{id}'")))?;
            self.machine(m, &index)
        };
        if let Some(id) = app.attr("normalBehavior") {
            c.normal = Some(machine(id)?);
        }
        for id in app.attr("failurePatterns").unwrap_or("").split_whitespace() {
            c.failures.push(machine(id)?);
        }
        Ok(c)
    }

    fn machine(&self, m: &XmlNode, index: &StateIndex) -> Result<RawMachine, XmiError> {
        let mut out = RawMachine {
            name: m.attr("name").unwrap_or("").to_string(),
            ..RawMachine::default()
        };
        let mut transitions = Vec::new();
        for r in m.children_named("region") {
            out.states.extend(self.region(r, index, &mut transitions)?);
        }
        for t in transitions {
            if let Some(t) = self.transition(t, index)? {
                out.transitions.push(t);
            }
        }
        Ok(out)
    }

    fn region<'n>(
        &self,
        r: &'n XmlNode,
        index: &StateIndex,
        transitions: &mut Vec<&'n XmlNode>,
    ) -> Result<Vec<RawState>, XmiError> {
        let initial_targets: Vec<&str> = r
            .children_named("transition")
            .filter(|t| t.attr("source").is_some_and(|s| index.pseudo.contains_key(s)))
            .filter_map(|t| t.attr("target"))
            .collect();
        let mut states = Vec::new();
        for v in r.children_named("subvertex") {
            if v.xmi_type() != Some("uml:State") && v.xmi_type() != Some("uml:FinalState") {
                continue;
            }
            let id = v.id().unwrap_or("");
            let mut s = RawState {
                name: v.attr("name").unwrap_or("").to_string(),
                initial: initial_targets.contains(&id),
                ..RawState::default()
            };
            for e in v.children_named("entry") {
                if let Some(op) = e.attr("operation") {
                    s.entry_ops.push(self.op(op)?);
                }
            }
            if let Some(tags) = self.config_apps.get(id) {
                s.config_tags = tags.clone();
            }
            for sub in v.children_named("region") {
                s.children.extend(self.region(sub, index, transitions)?);
            }
            states.push(s);
        }
        transitions.extend(
            r.children_named("transition")
                .filter(|t| !t.attr("source").is_some_and(|s| index.pseudo.contains_key(s))),
        );
        Ok(states)
    }

    fn op(&self, id: &str) -> Result<OpRef, XmiError> {
        self.ops
            .get(id)
            .cloned()
            .ok_or_else(|| XmiError::Payload(format!("unknown operation '{id}'")))
    }

    fn transition(&self, t: &XmlNode, index: &StateIndex) -> Result<Option<RawTransition>, XmiError> {
        let endpoint = |key: &str| -> Result<Vec<String>, XmiError> {
            match t.attr(key) {
                None => Ok(Vec::new()),
                Some(id) => index
                    .path
                    .get(id)
                    .cloned()
                    .ok_or_else(|| XmiError::Payload(format!("transition {key} '{id}' is not a state"))),
            }
        };
        let mut raw = RawTransition {
            source: endpoint("source")?,
            target: endpoint("target")?,
            label: t.attr("name").map(str::to_string),
            ..RawTransition::default()
        };
        if let Some(trigger) = t.children_named("trigger").next() {
            if let Some(op) = trigger.attr("operation") {
                raw.kind = TransitionKind::OperationTrigger;
                raw.operation = Some(self.op(op)?);
            }
        }
        for e in t.children_named("effect") {
            match e.xmi_type() {
                Some("uml:CallOperationAction") => {
                    let op = e.attr("operation").unwrap_or("");
                    raw.kind = TransitionKind::OperationCall;
                    raw.operation = Some(self.op(op)?);
                }
                Some("uml:OpaqueBehavior") => raw.updates.extend(
                    body_text(e)
                        .split([';', '\n'])
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string),
                ),
                _ => {}
            }
        }
        if let Some(g) = t.children_named("guard").next() {
            let spec = g.children_named("specification").next().unwrap_or(g);
            let text = body_text(spec);
            if !text.trim().is_empty() {
                raw.guard = Some(text.trim().to_string());
            }
        }
        if let Some((kind, app)) = t.id().and_then(|id| self.transition_apps.get(id)) {
            // A stochastic stereotype on a call transition only contributes
            // the call's rate.
            if raw.kind != TransitionKind::OperationCall || *kind != TransitionKind::Stochastic {
                raw.kind = *kind;
            }
            raw.rate = number(app, "rate")?;
            raw.rate_name = app.attr("name").map(str::to_string);
        }
        if raw.kind.is_failure_entry() {
            // The source refers to the normal machine as a whole; a target
            // naming the failure machine itself means its initial state.
            raw.source.clear();
        }
        Ok(Some(raw))
    }
}

fn index_region(r: &XmlNode, machine: &str, prefix: &[String], index: &mut StateIndex) {
    for v in r.children_named("subvertex") {
        let Some(id) = v.id() else { continue };
        match v.xmi_type() {
            Some("uml:Pseudostate") if v.attr("kind").unwrap_or("initial") == "initial" => {
                index.pseudo.insert(id.to_string(), ());
            }
            Some("uml:State") | Some("uml:FinalState") => {
                let mut path = prefix.to_vec();
                path.push(v.attr("name").unwrap_or("").to_string());
                index.machine.insert(id.to_string(), machine.to_string());
                index.path.insert(id.to_string(), path.clone());
                for sub in v.children_named("region") {
                    index_region(sub, machine, &path, index);
                }
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<xmi:XMI xmi:version="2.1" xmlns:xmi="http://schema.omg.org/spec/XMI/2.1" xmlns:uml="http://schema.omg.org/spec/UML/2.1" xmlns:QuantUM="http://quantum/profile">
  <uml:Model xmi:id="m" name="Minimal">
    <profileApplication xmi:id="pa"><appliedProfile href="QuantUM.profile.uml#_0"/></profileApplication>
    <packagedElement xmi:type="uml:Class" xmi:id="c" name="Pump">
      <ownedBehavior xmi:type="uml:StateMachine" xmi:id="f" name="Broken">
        <region xmi:id="r">
          <subvertex xmi:type="uml:Pseudostate" xmi:id="i" kind="initial"/>
          <subvertex xmi:type="uml:State" xmi:id="s0" name="Leaking"/>
          <subvertex xmi:type="uml:State" xmi:id="s1" name="Dry"/>
          <transition xmi:id="ti" source="i" target="s0"/>
          <transition xmi:id="t0" target="s0"/>
        </region>
      </ownedBehavior>
    </packagedElement>
  </uml:Model>
  <QuantUM:QUMComponent xmi:id="a" base_Class="c" failurePatterns="f"/>
  <QuantUM:QUMFailureTransition xmi:id="b" base_Transition="t0" rate="0.001"/>
</xmi:XMI>
"#;

    #[test]
    fn minimal_document() {
        let m = parse_xmi(MINIMAL.as_bytes()).unwrap();
        assert_eq!(m.components.len(), 1);
        let c = &m.components[0];
        assert_eq!(c.failures.len(), 1);
        let f = &c.failures[0];
        assert_eq!(f.states.len(), 2);
        assert!(f.states[0].initial && !f.states[1].initial);
        assert_eq!(f.transitions.len(), 1);
        assert_eq!(f.transitions[0].kind, TransitionKind::Failure);
        assert_eq!(f.transitions[0].rate, Some(0.001));
        assert_eq!(f.transitions[0].target, vec!["Leaking"]);
    }

    #[test]
    fn missing_profile() {
        let src = MINIMAL.replace("QuantUM.profile.uml", "Other.profile.uml");
        assert_eq!(parse_xmi(src.as_bytes()), Err(XmiError::MissingProfileApplication));
    }

    #[test]
    fn version_is_pinned() {
        let src = MINIMAL.replace("xmi:version=\"2.1\"", "xmi:version=\"2.5\"");
        assert_eq!(
            parse_xmi(src.as_bytes()),
            Err(XmiError::UnsupportedXmiVersion("2.5".into()))
        );
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let src = MINIMAL.replace("</region>", "</regio>");
        match parse_xmi(src.as_bytes()) {
            Err(XmiError::XmlSyntax { line, .. }) => assert!(line > 5, "line {line}"),
            other => panic!("{other:?}"),
        }
        let cut = &MINIMAL.as_bytes()[..MINIMAL.len() / 2];
        assert!(matches!(parse_xmi(cut), Err(XmiError::XmlSyntax { .. })));
        assert!(matches!(parse_xmi(b""), Err(XmiError::XmlSyntax { .. })));
    }
}
