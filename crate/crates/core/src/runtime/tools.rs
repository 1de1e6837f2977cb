use std::collections::BTreeMap;

use serde_json::Value;

use crate::graph::{AgentDecl, ToolDecl};
use crate::protocol::{call_tool, execute_tool, schema, ProtocolError, ToolCall, ToolResult};

/// Where tool calls go: straight to the handler, or to an `mcp_lite` server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolRoute {
    Inproc,
    Mcp(String),
}

pub struct ToolRunner {
    tools: BTreeMap<String, ToolDecl>,
    route: ToolRoute,
}

pub(crate) fn schema_violation(message: &str) -> String {
    format!("schema violation: {message}")
}

impl ToolRunner {
    pub fn new(tools: impl IntoIterator<Item = ToolDecl>, route: ToolRoute) -> Self {
        Self { tools: tools.into_iter().map(|t| (t.name.clone(), t)).collect(), route }
    }

    /// Runs one call for `agent`. Every failure, including a tool the agent
    /// may not use and arguments the schema rejects, becomes an error
    /// result with the same text whichever route is used.
    pub fn invoke(&self, agent: &AgentDecl, tool: &str, arguments: &Value, call_id: &str) -> (ToolCall, ToolResult) {
        let args = arguments.as_object().cloned().unwrap_or_default();
        let call = ToolCall { tool: tool.to_string(), arguments: args, call_id: call_id.to_string() };
        if !agent.tools.iter().any(|t| t == tool) {
            let msg = format!("tool {tool} is not available to agent {}", agent.name);
            return (call, ToolResult::error(call_id, msg));
        }
        if !arguments.is_object() {
            return (call.clone(), ToolResult::error(call_id, schema_violation("$: expected object")));
        }
        let Some(decl) = self.tools.get(tool) else {
            return (call, ToolResult::error(call_id, format!("unknown tool {tool}")));
        };
        let result = match &self.route {
            ToolRoute::Inproc => match schema::validate(&decl.input_schema, arguments) {
                Ok(()) => execute_tool(decl, &call),
                Err(e) => ToolResult::error(call_id, schema_violation(&e)),
            },
            ToolRoute::Mcp(endpoint) => match call_tool(endpoint, &call) {
                Ok(r) => r,
                Err(ProtocolError::Status { status: 422, body }) => ToolResult::error(call_id, schema_violation(&body)),
                Err(ProtocolError::Status { status: 404, .. }) => ToolResult::error(call_id, format!("unknown tool {tool}")),
                Err(e) => ToolResult::error(call_id, format!("tool transport failed: {e}")),
            },
        };
        (call, result)
    }

    pub fn tools(&self) -> impl Iterator<Item = &ToolDecl> {
        self.tools.values()
    }
}
