//! Sequence diagrams for causal classes.
//!
//! One lifeline per component and one `alt` operand per class, named with
//! the class probability. Local transitions appear as `transition("src",
//! "dst")` self-calls, operation calls as caller-to-callee messages. Runs of
//! mutually order-free events become `par` fragments with one compartment
//! per event. Messages are numbered from 1 within each operand.

use std::fmt::Write as _;

use quick_xml::escape::escape;
use thiserror::Error;

use crate::composer::{GlobalModel, GlobalState, ReplayStep};
use crate::faulttree::{format_probability, CausalClass};
use crate::ingest::xmi::{parse_xml, XmiError};

#[derive(Debug, Clone, PartialEq)]
pub enum MessageKind {
    /// `transition("source", "target")` on one lifeline.
    SelfCall { source: String, target: String },
    /// Operation call from one lifeline to another.
    Call { operation: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub number: u32,
    pub from: usize,
    pub to: usize,
    /// The event label the message stands for.
    pub event: String,
    pub kind: MessageKind,
}

impl Message {
    pub fn text(&self) -> String {
        match &self.kind {
            MessageKind::SelfCall { source, target } => {
                format!("{}: transition(\"{source}\",\"{target}\")", self.number)
            }
            MessageKind::Call { operation } => format!("{}: {operation}()", self.number),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Message(Message),
    /// One compartment per event.
    Par(Vec<Message>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Operand {
    pub name: String,
    pub probability: f64,
    pub items: Vec<Item>,
}

impl Operand {
    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.items.iter().flat_map(|i| match i {
            Item::Message(m) => std::slice::from_ref(m).iter(),
            Item::Par(ms) => ms.iter(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDiagram {
    pub name: String,
    /// Component names.
    pub lifelines: Vec<String>,
    /// Lifeline aliases (module ids).
    pub aliases: Vec<String>,
    /// Fragments of the top-level `alt`.
    pub operands: Vec<Operand>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeqDiagError {
    #[error("class representative is not replayable at step {0}")]
    NotReplayable(usize),
    #[error(transparent)]
    Xmi(#[from] XmiError),
}

fn state_name(global: &GlobalModel, machine: usize, s: &GlobalState) -> String {
    let m = &global.machines[machine];
    m.encoding
        .by_id(s.locs[machine])
        .map_or_else(|| s.locs[machine].to_string(), |e| e.name().to_string())
}

/// Replays the class representative and turns each kept event into a message.
fn class_messages(global: &GlobalModel, class: &CausalClass) -> Result<Vec<Message>, SeqDiagError> {
    let mut s = global.initial_state();
    let mut out = Vec::new();
    for (k, step) in class.representative.iter().enumerate() {
        match step {
            ReplayStep::Mute(_) => {
                if let Some(next) = global.step(&s, step) {
                    s = next;
                }
            }
            ReplayStep::Take(label) => {
                let moves = global.moves(&s).map_err(|_| SeqDiagError::NotReplayable(k))?;
                let mv = moves
                    .iter()
                    .find(|m| &m.label == label)
                    .ok_or(SeqDiagError::NotReplayable(k))?;
                let next = global
                    .apply(&s, &mv.parts)
                    .map_err(|_| SeqDiagError::NotReplayable(k))?;
                let message = match mv.sync {
                    Some(a) => {
                        let action = &global.sync_actions[a];
                        Message {
                            number: 0,
                            from: action.caller,
                            to: action.callee,
                            event: label.clone(),
                            kind: MessageKind::Call {
                                operation: action.operation.name.clone(),
                            },
                        }
                    }
                    None => {
                        let i = mv.parts[0].0;
                        Message {
                            number: 0,
                            from: i,
                            to: i,
                            event: label.clone(),
                            kind: MessageKind::SelfCall {
                                source: state_name(global, i, &s),
                                target: state_name(global, i, &next),
                            },
                        }
                    }
                };
                out.push(message);
                s = next;
            }
        }
    }
    Ok(out)
}

/// Groups maximal runs of pairwise order-free events into `par` fragments.
fn group(class: &CausalClass, messages: Vec<Message>) -> Vec<Item> {
    let ordered = |i: usize, j: usize| class.order.contains(&(i.min(j), i.max(j)));
    let mut items = Vec::new();
    let mut run: Vec<(usize, Message)> = Vec::new();
    let flush = |run: &mut Vec<(usize, Message)>, items: &mut Vec<Item>| match run.len() {
        0 => {}
        1 => items.push(Item::Message(run.pop().unwrap().1)),
        _ => items.push(Item::Par(run.drain(..).map(|(_, m)| m).collect())),
    };
    for (i, m) in messages.into_iter().enumerate() {
        if run.iter().any(|&(j, _)| ordered(i, j)) {
            flush(&mut run, &mut items);
        }
        run.push((i, m));
    }
    flush(&mut run, &mut items);
    items
}

pub fn build_diagram(
    name: &str,
    classes: &[CausalClass],
    global: &GlobalModel,
) -> Result<SequenceDiagram, SeqDiagError> {
    let mut sorted: Vec<&CausalClass> = classes.iter().collect();
    sorted.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.key().cmp(&b.key()))
    });
    let mut operands = Vec::new();
    for class in sorted {
        let mut items = group(class, class_messages(global, class)?);
        let mut n = 0;
        for item in &mut items {
            let ms = match item {
                Item::Message(m) => std::slice::from_mut(m),
                Item::Par(ms) => ms.as_mut_slice(),
            };
            for m in ms {
                n += 1;
                m.number = n;
            }
        }
        operands.push(Operand {
            name: format!("p = {}", format_probability(class.probability)),
            probability: class.probability,
            items,
        });
    }
    Ok(SequenceDiagram {
        name: name.to_string(),
        lifelines: global.machines.iter().map(|m| m.component.clone()).collect(),
        aliases: global.machines.iter().map(|m| m.module_id.clone()).collect(),
        operands,
    })
}

fn puml_message(d: &SequenceDiagram, m: &Message, indent: &str, out: &mut String) {
    let _ = writeln!(
        out,
        "{indent}{} -> {} : {}",
        d.aliases[m.from],
        d.aliases[m.to],
        m.text()
    );
}

pub fn emit_plantuml(d: &SequenceDiagram) -> String {
    let mut s = String::from("@startuml\n");
    if d.operands.is_empty() {
        s.push_str("@enduml\n");
        return s;
    }
    let _ = writeln!(s, "title {}", d.name);
    for (name, alias) in d.lifelines.iter().zip(&d.aliases) {
        let _ = writeln!(s, "participant \"{name}\" as {alias}");
    }
    for (k, op) in d.operands.iter().enumerate() {
        let _ = writeln!(s, "{} {}", if k == 0 { "alt" } else { "else" }, op.name);
        for item in &op.items {
            match item {
                Item::Message(m) => puml_message(d, m, "  ", &mut s),
                Item::Par(ms) => {
                    for (c, m) in ms.iter().enumerate() {
                        s.push_str(if c == 0 { "  par\n" } else { "  else\n" });
                        puml_message(d, m, "    ", &mut s);
                    }
                    s.push_str("  end\n");
                }
            }
        }
    }
    s.push_str("end\n@enduml\n");
    s
}

/// Identifier prefix for the `n`-th appended diagram.
fn id_prefix(n: usize) -> String {
    format!("qum_sd{n}")
}

const MODEL_CLOSE: &str = "</uml:Model>";

/// Inserts the diagram as a new package holding one `uml:Interaction`
/// directly before the closing `</uml:Model>` tag. Everything else in the
/// original document is left byte for byte.
pub fn append_xmi(d: &SequenceDiagram, original: &[u8]) -> Result<Vec<u8>, SeqDiagError> {
    let root = parse_xml(original)?;
    let mut all = Vec::new();
    root.walk(&mut all);
    let existing = all
        .iter()
        .filter(|n| {
            n.xmi_type() == Some("uml:Package") && n.id().is_some_and(|i| i.starts_with("qum_sd"))
        })
        .count();
    let text = std::str::from_utf8(original)
        .map_err(|e| XmiError::Payload(format!("document is not UTF-8: {e}")))?;
    let at = text
        .rfind(MODEL_CLOSE)
        .ok_or_else(|| XmiError::Payload("no uml:Model element".into()))?;
    // Keep the indentation of the closing tag for the inserted block.
    let line_start = text[..at].rfind('\n').map_or(0, |i| i + 1);
    let indent = &text[line_start..at];
    let base = if indent.trim().is_empty() { indent } else { "" };
    let block = xmi_package(d, &id_prefix(existing + 1), &format!("{base}  "));
    let mut out = Vec::with_capacity(original.len() + block.len());
    out.extend_from_slice(&original[..at]);
    if !base.is_empty() {
        // The first line follows the closing tag's own indentation.
        out.extend_from_slice(b"  ");
    }
    out.extend_from_slice(block.as_bytes());
    out.extend_from_slice(base.as_bytes());
    out.extend_from_slice(&original[at..]);
    parse_xml(&out)?;
    Ok(out)
}

struct XmiWriter<'a> {
    d: &'a SequenceDiagram,
    prefix: &'a str,
    out: String,
    messages: Vec<String>,
}

impl XmiWriter<'_> {
    fn line(&mut self, depth: usize, text: &str) {
        for _ in 0..depth {
            self.out.push_str("  ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn message(&mut self, depth: usize, op: usize, m: &Message) {
        let p = self.prefix;
        let id = format!("{p}_o{op}_m{}", m.number);
        let send = format!("{id}_send");
        let recv = format!("{id}_recv");
        self.line(
            depth,
            &format!(
                "<fragment xmi:type=\"uml:MessageOccurrenceSpecification\" xmi:id=\"{send}\" covered=\"{p}_l{}\" message=\"{id}\"/>",
                m.from
            ),
        );
        self.line(
            depth,
            &format!(
                "<fragment xmi:type=\"uml:MessageOccurrenceSpecification\" xmi:id=\"{recv}\" covered=\"{p}_l{}\" message=\"{id}\"/>",
                m.to
            ),
        );
        self.messages.push(format!(
            "<message xmi:id=\"{id}\" name=\"{}\" messageSort=\"synchCall\" sendEvent=\"{send}\" receiveEvent=\"{recv}\"/>",
            escape(m.text().as_str())
        ));
    }
}

fn xmi_package(d: &SequenceDiagram, prefix: &str, indent: &str) -> String {
    let mut w = XmiWriter {
        d,
        prefix,
        out: String::new(),
        messages: Vec::new(),
    };
    let name = escape(d.name.as_str()).into_owned();
    let covered: Vec<String> = (0..d.lifelines.len()).map(|i| format!("{prefix}_l{i}")).collect();
    let covered = covered.join(" ");
    w.line(
        0,
        &format!("<packagedElement xmi:type=\"uml:Package\" xmi:id=\"{prefix}\" name=\"counterexample {name}\">"),
    );
    w.line(
        1,
        &format!("<packagedElement xmi:type=\"uml:Interaction\" xmi:id=\"{prefix}_i\" name=\"{name}\">"),
    );
    for (i, l) in d.lifelines.iter().enumerate() {
        w.line(
            2,
            &format!("<lifeline xmi:id=\"{prefix}_l{i}\" name=\"{}\" covered=\"\"/>", escape(l.as_str())),
        );
    }
    if !w.d.operands.is_empty() {
        w.line(
            2,
            &format!("<fragment xmi:type=\"uml:CombinedFragment\" xmi:id=\"{prefix}_alt\" interactionOperator=\"alt\" covered=\"{covered}\">"),
        );
        for (k, op) in d.operands.iter().enumerate() {
            w.line(
                3,
                &format!(
                    "<operand xmi:type=\"uml:InteractionOperand\" xmi:id=\"{prefix}_o{k}\" name=\"{}\">",
                    escape(op.name.as_str())
                ),
            );
            for (j, item) in op.items.iter().enumerate() {
                match item {
                    Item::Message(m) => w.message(4, k, m),
                    Item::Par(ms) => {
                        w.line(
                            4,
                            &format!("<fragment xmi:type=\"uml:CombinedFragment\" xmi:id=\"{prefix}_o{k}_par{j}\" interactionOperator=\"par\" covered=\"{covered}\">"),
                        );
                        for (c, m) in ms.iter().enumerate() {
                            w.line(
                                5,
                                &format!("<operand xmi:type=\"uml:InteractionOperand\" xmi:id=\"{prefix}_o{k}_par{j}_{c}\">"),
                            );
                            w.message(6, k, m);
                            w.line(5, "</operand>");
                        }
                        w.line(4, "</fragment>");
                    }
                }
            }
            w.line(3, "</operand>");
        }
        w.line(2, "</fragment>");
    }
    for m in std::mem::take(&mut w.messages) {
        w.line(2, &m);
    }
    w.line(1, "</packagedElement>");
    w.line(0, "</packagedElement>");
    let mut s = String::new();
    for (i, l) in w.out.lines().enumerate() {
        if i > 0 {
            s.push_str(indent);
        }
        s.push_str(l);
        s.push('\n');
    }
    s
}

/// Counts `uml:Interaction` elements and their top-level `alt` operands.
pub fn count_interactions(xmi: &[u8]) -> Result<Vec<usize>, XmiError> {
    let root = parse_xml(xmi)?;
    let mut all = Vec::new();
    root.walk(&mut all);
    Ok(all
        .iter()
        .filter(|n| n.xmi_type() == Some("uml:Interaction"))
        .map(|ia| {
            ia.children
                .iter()
                .filter(|f| f.attr("interactionOperator") == Some("alt"))
                .map(|f| f.children_named("operand").count())
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composer::{build_global, EventKind};
    use crate::faulttree::{BasicEvent, Gate};
    use crate::ingest::parse_native;
    use crate::model::validate;

    const SRC: &str = r#"
component Ctl { rates { f = 0.01 }
  normal N { state Idle initial }
  failure Broken { state Start initial state Done
    transition * -> Start abstract-failure f label CtlBroken
    transition Start -> Done call Out.arm }
}
component Out { rates { s = 0.001 } operations { arm }
  normal N { state Off initial state On
    transition Off -> On trigger arm }
  failure Short { state Shorted initial
    transition * -> Shorted abstract-failure s label OutShort }
}
"#;

    fn global() -> GlobalModel {
        build_global(&validate(&parse_native(SRC).unwrap()).unwrap()).unwrap()
    }

    fn class(labels: &[&str], gate: Gate, order: Vec<(usize, usize)>, p: f64) -> CausalClass {
        CausalClass {
            gate,
            events: labels
                .iter()
                .map(|l| BasicEvent {
                    label: l.to_string(),
                    kind: EventKind::Failure,
                    component: None,
                })
                .collect(),
            order,
            probability: p,
            members: 1,
            representative: labels.iter().map(|l| ReplayStep::Take(l.to_string())).collect(),
        }
    }

    #[test]
    fn singleton_and_ordered_classes() {
        let g = global();
        let classes = vec![
            class(&["OutShort"], Gate::And, vec![], 1e-4),
            class(&["CtlBroken", "arm"], Gate::Pand, vec![(0, 1)], 2e-4),
        ];
        let d = build_diagram("hazard", &classes, &g).unwrap();
        assert_eq!(d.lifelines, vec!["Ctl", "Out"]);
        assert_eq!(d.operands.len(), 2);
        assert_eq!(d.operands[0].name, "p = 2.00000e-4");
        let texts: Vec<String> = d.operands[0].messages().map(Message::text).collect();
        assert_eq!(texts, vec!["1: transition(\"Idle\",\"Start\")", "2: arm()"]);
        let m = d.operands[1].messages().next().unwrap();
        assert_eq!((m.from, m.to), (1, 1));
        assert_eq!(m.text(), "1: transition(\"Off\",\"Shorted\")");
        let puml = emit_plantuml(&d);
        assert_eq!(puml.matches("\nalt ").count(), 1);
        assert_eq!(puml.matches("\nelse ").count(), 1);
        assert!(puml.contains("ctl -> out : 2: arm()"), "{puml}");
    }

    #[test]
    fn order_free_pair_becomes_par() {
        let g = global();
        let c = class(&["CtlBroken", "OutShort"], Gate::And, vec![], 1e-3);
        let d = build_diagram("hazard", &[c], &g).unwrap();
        match &d.operands[0].items[..] {
            [Item::Par(ms)] => assert_eq!(ms.len(), 2),
            other => panic!("{other:?}"),
        }
        assert!(emit_plantuml(&d).contains("  par\n"));
    }

    #[test]
    fn empty_diagram() {
        let d = build_diagram("hazard", &[], &global()).unwrap();
        assert_eq!(emit_plantuml(&d), "@startuml\n@enduml\n");
    }

    #[test]
    fn xmi_append_is_additive() {
        let g = global();
        let d = build_diagram("hazard", &[class(&["OutShort"], Gate::And, vec![], 0.5)], &g).unwrap();
        let original = b"<?xml version=\"1.0\"?>\n<xmi:XMI xmi:version=\"2.1\" xmlns:xmi=\"x\" xmlns:uml=\"u\">\n  <uml:Model xmi:id=\"m\">\n  </uml:Model>\n</xmi:XMI>\n";
        let once = append_xmi(&d, original).unwrap();
        let twice = append_xmi(&d, &once).unwrap();
        assert_eq!(count_interactions(&once).unwrap(), vec![1]);
        assert_eq!(count_interactions(&twice).unwrap(), vec![1, 1]);
        let at = std::str::from_utf8(original).unwrap().rfind(MODEL_CLOSE).unwrap();
        assert!(once.starts_with(&original[..at]));
        assert!(once.ends_with(&original[at - 2..]));
        assert!(String::from_utf8(twice).unwrap().contains("qum_sd2_i"));
        assert!(matches!(
            append_xmi(&d, b"<a><b></a>"),
            Err(SeqDiagError::Xmi(XmiError::XmlSyntax { .. }))
        ));
    }
}
