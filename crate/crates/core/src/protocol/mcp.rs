//! `mcp_lite`: tool listing and invocation.
//!
//! `GET /mcp/tools` → `{"tools":[{name,description,input_schema}]}`;
//! `POST /mcp/call` with a [`ToolCall`] → [`ToolResult`]. Unknown tools are
//! 404, arguments rejected by the input schema are 422.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::a2a::base_url;
use super::{get, post_json, schema, HttpRequest, HttpResponse, Part, ProtocolError};
use crate::graph::{ToolDecl, ToolHandler};

pub const TOOLS_PATH: &str = "/mcp/tools";
pub const CALL_PATH: &str = "/mcp/call";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolCall {
    pub tool: String,
    pub arguments: Map<String, Value>,
    pub call_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolResult {
    pub call_id: String,
    pub content: Vec<Part>,
    pub is_error: bool,
}

impl ToolResult {
    pub fn error(call_id: &str, message: impl Into<String>) -> Self {
        Self { call_id: call_id.to_string(), content: vec![Part::text(message)], is_error: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub input_schema: Value,
}

impl From<&ToolDecl> for ToolDescriptor {
    fn from(t: &ToolDecl) -> Self {
        Self { name: t.name.clone(), description: t.description.clone(), input_schema: t.input_schema.clone() }
    }
}

/// Runs a tool's handler. Schema checking is the caller's job.
pub fn execute_tool(decl: &ToolDecl, call: &ToolCall) -> ToolResult {
    let ok = |content| ToolResult { call_id: call.call_id.clone(), content, is_error: false };
    match decl.handler {
        ToolHandler::BuiltinEcho => ok(vec![Part::Data { json: call.arguments.clone() }]),
        ToolHandler::BuiltinUpper => match call.arguments.get("text").and_then(Value::as_str) {
            Some(text) => ok(vec![Part::text(text.to_uppercase())]),
            None => ToolResult::error(&call.call_id, "builtin_upper needs a string argument \"text\""),
        },
        ToolHandler::Scripted => match &decl.script {
            Some(script) => ToolResult {
                call_id: call.call_id.clone(),
                content: script.content.to_message(super::Role::Tool).parts,
                is_error: script.is_error,
            },
            None => ToolResult::error(&call.call_id, format!("tool {} has no script", decl.name)),
        },
    }
}

/// Server side of `mcp_lite` for a fixed tool set.
pub struct McpService {
    tools: BTreeMap<String, ToolDecl>,
    calls: AtomicU64,
}

impl McpService {
    pub fn new(tools: impl IntoIterator<Item = ToolDecl>) -> Self {
        Self { tools: tools.into_iter().map(|t| (t.name.clone(), t)).collect(), calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn handle(&self, rq: &HttpRequest) -> HttpResponse {
        match (rq.method.as_str(), rq.path.as_str()) {
            ("GET", TOOLS_PATH) => {
                let tools: Vec<ToolDescriptor> = self.tools.values().map(ToolDescriptor::from).collect();
                HttpResponse::json(200, &serde_json::json!({ "tools": tools }))
            }
            ("POST", CALL_PATH) => {
                let call: ToolCall = match serde_json::from_slice(&rq.body) {
                    Ok(c) => c,
                    Err(e) => return HttpResponse::error(422, "malformed", e.to_string()),
                };
                let Some(decl) = self.tools.get(&call.tool) else {
                    return HttpResponse::error(404, "unknown_tool", format!("no tool {}", call.tool));
                };
                if let Err(e) = schema::validate(&decl.input_schema, &Value::Object(call.arguments.clone())) {
                    return HttpResponse::error(422, "schema_violation", e);
                }
                self.calls.fetch_add(1, Ordering::SeqCst);
                HttpResponse::json(200, &execute_tool(decl, &call))
            }
            _ => HttpResponse::not_found(),
        }
    }
}

#[derive(Deserialize)]
struct ToolList {
    tools: Vec<ToolDescriptor>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: super::TaskError,
}

pub fn list_tools(endpoint: &str) -> Result<Vec<ToolDescriptor>, ProtocolError> {
    let (status, body) = get(&format!("{}{TOOLS_PATH}", base_url(endpoint)))?;
    if status != 200 {
        return Err(ProtocolError::Status { status, body: String::from_utf8_lossy(&body).into_owned() });
    }
    let list: ToolList =
        serde_json::from_slice(&body).map_err(|e| ProtocolError::Transport(format!("bad tool list: {e}")))?;
    Ok(list.tools)
}

/// Non-200 answers come back as `Status` errors; for 404 and 422 the body's
/// error message is the `body` field.
pub fn call_tool(endpoint: &str, call: &ToolCall) -> Result<ToolResult, ProtocolError> {
    let payload = crate::canonical::to_compact(call);
    let (status, body) = post_json(&format!("{}{CALL_PATH}", base_url(endpoint)), payload.as_bytes())?;
    if status != 200 {
        let message = serde_json::from_slice::<ErrorBody>(&body)
            .map(|b| b.error.message)
            .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
        return Err(ProtocolError::Status { status, body: message });
    }
    serde_json::from_slice(&body).map_err(|e| ProtocolError::Transport(format!("bad tool result: {e}")))
}
