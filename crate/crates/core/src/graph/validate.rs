use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{is_valid_name, reachable_from, EdgeKind, ModelBackend, ToolHandler, WorkflowGraph};
use crate::policy::Capability;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub subject: String,
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.code, self.path, self.message)
    }
}

struct Collector(Vec<Diagnostic>);

impl Collector {
    fn error(&mut self, code: &str, subject: &str, path: String, message: String) {
        self.0.push(Diagnostic {
            severity: Severity::Error,
            code: code.to_string(),
            subject: subject.to_string(),
            path,
            message,
        });
    }
}

/// Check every structural invariant of the graph. An empty result means the
/// graph is accepted by all later passes.
pub fn validate(g: &WorkflowGraph) -> Vec<Diagnostic> {
    let mut out = Collector(Vec::new());

    let mut names = BTreeSet::new();
    for m in &g.models {
        let path = format!("workflow.models.{}", m.name);
        if !is_valid_name(&m.name) {
            out.error("BAD_NAME", &m.name, path.clone(), format!("invalid model name {:?}", m.name));
        }
        if !names.insert(&m.name) {
            out.error("DUPLICATE_NAME", &m.name, path.clone(), "model declared twice".into());
        }
        if m.backend == ModelBackend::Scripted && m.responses.values().all(Vec::is_empty) {
            out.error("EMPTY_SCRIPT", &m.name, path.clone(), "scripted model has no responses".into());
        }
        for agent in m.responses.keys() {
            if g.agent(agent).is_none() {
                out.error("UNRESOLVED_REF", &m.name, format!("{path}.responses"), format!("unknown agent {agent}"));
            }
        }
    }

    let mut names = BTreeSet::new();
    for t in &g.tools {
        let path = format!("workflow.tools.{}", t.name);
        if !is_valid_name(&t.name) {
            out.error("BAD_NAME", &t.name, path.clone(), format!("invalid tool name {:?}", t.name));
        }
        if !names.insert(&t.name) {
            out.error("DUPLICATE_NAME", &t.name, path.clone(), "tool declared twice".into());
        }
        for cap in &t.capabilities {
            if let Err(e) = Capability::parse(cap) {
                out.error("BAD_CAPABILITY", &t.name, format!("{path}.capabilities"), e.to_string());
            }
        }
        if let Err(e) = crate::protocol::schema::check_schema(&t.input_schema) {
            out.error("BAD_SCHEMA", &t.name, format!("{path}.input_schema"), e);
        }
        if t.handler == ToolHandler::Scripted && t.script.is_none() {
            out.error("MISSING_SCRIPT", &t.name, path.clone(), "scripted tool needs a script".into());
        }
    }

    let mut names = BTreeSet::new();
    for a in &g.agents {
        let path = format!("workflow.agents.{}", a.name);
        if !is_valid_name(&a.name) {
            out.error("BAD_NAME", &a.name, path.clone(), format!("invalid agent name {:?}", a.name));
        }
        if !names.insert(&a.name) {
            out.error("DUPLICATE_NAME", &a.name, path.clone(), "agent declared twice".into());
        }
        if g.model(&a.model).is_none() {
            out.error("UNRESOLVED_REF", &a.name, format!("{path}.model"), format!("unknown model {}", a.model));
        }
        let mut seen = BTreeSet::new();
        for tool in &a.tools {
            if g.tool(tool).is_none() {
                out.error("UNRESOLVED_REF", &a.name, format!("{path}.tools"), format!("unknown tool {tool}"));
            }
            if !seen.insert(tool) {
                out.error("DUPLICATE_TOOL", &a.name, format!("{path}.tools"), format!("tool {tool} listed twice"));
            }
        }
    }

    let mut fanout: BTreeMap<&str, EdgeKind> = BTreeMap::new();
    let mut pairs = BTreeSet::new();
    let mut routes: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut sequential_out: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, e) in g.edges.iter().enumerate() {
        let path = format!("workflow.edges[{i}]");
        for end in [&e.from, &e.to] {
            if g.agent(end).is_none() {
                out.error("UNRESOLVED_REF", end, path.clone(), format!("unknown agent {end}"));
            }
        }
        if e.from == e.to {
            out.error("SELF_LOOP", &e.from, path.clone(), format!("{} -> {}", e.from, e.to));
        }
        match (e.kind, &e.label) {
            (EdgeKind::Conditional, None) => {
                out.error("MISSING_LABEL", &e.from, path.clone(), "conditional edge without label".into())
            }
            (EdgeKind::Sequential | EdgeKind::Parallel, Some(_)) => {
                out.error("UNEXPECTED_LABEL", &e.from, path.clone(), "label on non-conditional edge".into())
            }
            (EdgeKind::Conditional, Some(label)) => {
                *routes.entry((e.from.as_str(), label.as_str())).or_default() += 1;
            }
            _ => {}
        }
        if !pairs.insert((&e.from, &e.to)) {
            out.error("DUPLICATE_EDGE", &e.from, path.clone(), format!("{} -> {} declared twice", e.from, e.to));
        }
        match fanout.get(e.from.as_str()) {
            Some(kind) if *kind != e.kind => {
                out.error("MIXED_FANOUT", &e.from, path.clone(), "out-edges of one node must share a kind".into())
            }
            Some(_) => {}
            None => {
                fanout.insert(&e.from, e.kind);
            }
        }
        if e.kind == EdgeKind::Sequential {
            *sequential_out.entry(&e.from).or_default() += 1;
        }
    }
    for ((node, label), count) in routes {
        if count > 1 {
            out.error(
                "DUP_ROUTE",
                node,
                format!("workflow.agents.{node}"),
                format!("route {label:?} used by {count} out-edges"),
            );
        }
    }
    for (node, count) in sequential_out {
        if count > 1 {
            out.error(
                "SEQUENTIAL_FANOUT",
                node,
                format!("workflow.agents.{node}"),
                format!("sequential node has {count} successors"),
            );
        }
    }

    if !g.agents.is_empty() {
        match &g.entry {
            None => out.error("NO_ENTRY", "", "workflow.entry".into(), "no entry agent".into()),
            Some(entry) if g.agent(entry).is_none() => {
                out.error("UNRESOLVED_REF", entry, "workflow.entry".into(), format!("unknown agent {entry}"))
            }
            Some(entry) => {
                let reached = reachable_from(g, entry);
                for a in &g.agents {
                    if !reached.contains(&a.name) {
                        out.error(
                            "UNREACHABLE",
                            &a.name,
                            format!("workflow.agents.{}", a.name),
                            format!("not reachable from entry {entry}"),
                        );
                    }
                }
            }
        }
    }

    out.0
}
