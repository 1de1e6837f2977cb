//! The structural workflow: models, tools, agents and the typed edges between
//! agents. Builder operations check their own preconditions and leave the
//! graph untouched when they fail.

mod analysis;
mod dot;
mod validate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::protocol::{Message, Part, Role};

pub use analysis::{join_nodes, reachable_from};
pub use dot::export_dot;
pub use validate::{validate, Diagnostic, Severity};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate name: {0}")]
    DuplicateName(String),
    #[error("unresolved reference: {0}")]
    UnresolvedReference(String),
    #[error("node {0} already fans out with a different edge kind")]
    MixedFanoutKind(String),
    #[error("conditional edge {from} -> {to} needs a route label")]
    MissingLabel { from: String, to: String },
    #[error("only conditional edges carry a label ({from} -> {to})")]
    UnexpectedLabel { from: String, to: String },
    #[error("self loop on {0}")]
    SelfLoop(String),
    #[error("edge {from} -> {to} already exists")]
    DuplicateEdge { from: String, to: String },
    #[error("route {label} already used by an out-edge of {node}")]
    DuplicateRoute { node: String, label: String },
    #[error("sequential node {0} already has a successor")]
    SequentialFanout(String),
    #[error("invalid name {0:?}")]
    BadName(String),
    #[error("graph is invalid: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidGraph(Vec<Diagnostic>),
}

/// Identifier grammar shared by models, tools, agents and units.
pub fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelBackend {
    Mock,
    Scripted,
}

/// A scripted reply: either plain text or an explicit list of parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Parts(Vec<Part>),
}

impl ScriptedReply {
    pub fn to_message(&self, role: Role) -> Message {
        match self {
            ScriptedReply::Text(t) => Message::new(role, vec![Part::text(t.clone())]),
            ScriptedReply::Parts(parts) => Message::new(role, parts.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDecl {
    pub name: String,
    pub backend: ModelBackend,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
    /// Scripted backend only: ordered replies per agent, indexed by the
    /// agent's model-invocation counter.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub responses: BTreeMap<String, Vec<ScriptedReply>>,
}

impl ModelDecl {
    pub fn mock(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            backend: ModelBackend::Mock,
            params: BTreeMap::new(),
            responses: BTreeMap::new(),
        }
    }

    pub fn scripted(name: impl Into<String>) -> Self {
        Self {
            backend: ModelBackend::Scripted,
            ..Self::mock(name)
        }
    }

    pub fn with_responses(mut self, agent: &str, replies: Vec<ScriptedReply>) -> Self {
        self.responses.insert(agent.to_string(), replies);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolHandler {
    BuiltinEcho,
    BuiltinUpper,
    Scripted,
}

/// Fixed result returned by a scripted tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolScript {
    pub content: ScriptedReply,
    #[serde(default)]
    pub is_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolDecl {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_schema")]
    pub input_schema: Value,
    #[serde(default)]
    pub capabilities: BTreeSet<String>,
    pub handler: ToolHandler,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<ToolScript>,
}

fn default_schema() -> Value {
    serde_json::json!({"type": "object"})
}

impl ToolDecl {
    pub fn new(name: impl Into<String>, handler: ToolHandler) -> Self {
        Self {
            name: name.into(),
            description: String::new(),
            input_schema: default_schema(),
            capabilities: BTreeSet::new(),
            handler,
            script: None,
        }
    }

    pub fn with_capability(mut self, cap: &str) -> Self {
        self.capabilities.insert(cap.to_string());
        self
    }

    pub fn with_schema(mut self, schema: Value) -> Self {
        self.input_schema = schema;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDecl {
    pub name: String,
    pub model: String,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub tools: Vec<String>,
}

impl AgentDecl {
    pub fn new(name: impl Into<String>, model: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            model: model.into(),
            prompt: prompt.into(),
            tools: Vec::new(),
        }
    }

    pub fn with_tool(mut self, tool: &str) -> Self {
        self.tools.push(tool.to_string());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Sequential,
    Parallel,
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowGraph {
    #[serde(default)]
    pub models: Vec<ModelDecl>,
    #[serde(default)]
    pub tools: Vec<ToolDecl>,
    #[serde(default)]
    pub agents: Vec<AgentDecl>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<String>,
}

impl WorkflowGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn model(&self, name: &str) -> Option<&ModelDecl> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn tool(&self, name: &str) -> Option<&ToolDecl> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn agent(&self, name: &str) -> Option<&AgentDecl> {
        self.agents.iter().find(|a| a.name == name)
    }

    pub fn agent_names(&self) -> BTreeSet<String> {
        self.agents.iter().map(|a| a.name.clone()).collect()
    }

    pub fn out_edges<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.from == node)
    }

    pub fn in_edges<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.to == node)
    }

    /// Fanout kind of a node, if it has any out-edge.
    pub fn fanout(&self, node: &str) -> Option<EdgeKind> {
        self.out_edges(node).next().map(|e| e.kind)
    }

    pub fn add_model(&mut self, model: ModelDecl) -> Result<&mut Self, GraphError> {
        if !is_valid_name(&model.name) {
            return Err(GraphError::BadName(model.name));
        }
        if self.model(&model.name).is_some() {
            return Err(GraphError::DuplicateName(model.name));
        }
        self.models.push(model);
        Ok(self)
    }

    pub fn add_tool(&mut self, tool: ToolDecl) -> Result<&mut Self, GraphError> {
        if !is_valid_name(&tool.name) {
            return Err(GraphError::BadName(tool.name));
        }
        if self.tool(&tool.name).is_some() {
            return Err(GraphError::DuplicateName(tool.name));
        }
        self.tools.push(tool);
        Ok(self)
    }

    /// The first agent added becomes the entry unless one is already set.
    pub fn add_agent(&mut self, agent: AgentDecl) -> Result<&mut Self, GraphError> {
        if !is_valid_name(&agent.name) {
            return Err(GraphError::BadName(agent.name));
        }
        if self.agent(&agent.name).is_some() {
            return Err(GraphError::DuplicateName(agent.name));
        }
        if self.model(&agent.model).is_none() {
            return Err(GraphError::UnresolvedReference(agent.model));
        }
        let mut seen = BTreeSet::new();
        for tool in &agent.tools {
            if self.tool(tool).is_none() {
                return Err(GraphError::UnresolvedReference(tool.clone()));
            }
            if !seen.insert(tool) {
                return Err(GraphError::DuplicateName(tool.clone()));
            }
        }
        if self.entry.is_none() {
            self.entry = Some(agent.name.clone());
        }
        self.agents.push(agent);
        Ok(self)
    }

    /// Attach an already declared tool to an agent.
    pub fn add_tool_to(&mut self, agent: &str, tool: &str) -> Result<&mut Self, GraphError> {
        if self.tool(tool).is_none() {
            return Err(GraphError::UnresolvedReference(tool.to_string()));
        }
        let decl = self
            .agents
            .iter_mut()
            .find(|a| a.name == agent)
            .ok_or_else(|| GraphError::UnresolvedReference(agent.to_string()))?;
        if decl.tools.iter().any(|t| t == tool) {
            return Err(GraphError::DuplicateName(tool.to_string()));
        }
        decl.tools.push(tool.to_string());
        Ok(self)
    }

    pub fn set_entry(&mut self, agent: &str) -> Result<&mut Self, GraphError> {
        if self.agent(agent).is_none() {
            return Err(GraphError::UnresolvedReference(agent.to_string()));
        }
        self.entry = Some(agent.to_string());
        Ok(self)
    }

    pub fn connect(
        &mut self,
        from: &str,
        to: &str,
        kind: EdgeKind,
        label: Option<&str>,
    ) -> Result<&mut Self, GraphError> {
        for end in [from, to] {
            if self.agent(end).is_none() {
                return Err(GraphError::UnresolvedReference(end.to_string()));
            }
        }
        if from == to {
            return Err(GraphError::SelfLoop(from.to_string()));
        }
        match (kind, label) {
            (EdgeKind::Conditional, None) => {
                return Err(GraphError::MissingLabel { from: from.into(), to: to.into() })
            }
            (EdgeKind::Sequential | EdgeKind::Parallel, Some(_)) => {
                return Err(GraphError::UnexpectedLabel { from: from.into(), to: to.into() })
            }
            _ => {}
        }
        if let Some(existing) = self.fanout(from) {
            if existing != kind {
                return Err(GraphError::MixedFanoutKind(from.to_string()));
            }
            if kind == EdgeKind::Sequential {
                return Err(GraphError::SequentialFanout(from.to_string()));
            }
        }
        if self.out_edges(from).any(|e| e.to == to) {
            return Err(GraphError::DuplicateEdge { from: from.into(), to: to.into() });
        }
        if let Some(label) = label {
            if self.out_edges(from).any(|e| e.label.as_deref() == Some(label)) {
                return Err(GraphError::DuplicateRoute { node: from.into(), label: label.into() });
            }
        }
        self.edges.push(Edge {
            from: from.to_string(),
            to: to.to_string(),
            kind,
            label: label.map(str::to_string),
        });
        Ok(self)
    }
}

/// The two-agent weather → news application used throughout the tests and docs.
pub fn weather_news() -> WorkflowGraph {
    let mut g = WorkflowGraph::new();
    g.add_model(ModelDecl::mock("gpt-4o")).expect("fresh graph");
    g.add_agent(AgentDecl::new("weather", "gpt-4o", "Report the weather.")).expect("fresh graph");
    g.add_agent(AgentDecl::new("news", "gpt-4o", "Write a news brief.")).expect("fresh graph");
    g.connect("weather", "news", EdgeKind::Sequential, None).expect("fresh graph");
    g
}
