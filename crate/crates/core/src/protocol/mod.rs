//! Wire formats and transports between deployment units.
//!
//! [`Envelope`] is the transport-neutral unit of agent-to-agent traffic. The
//! three channel kinds (in-memory, `http_rpc`, `a2a_lite`) all carry it
//! without loss; `mcp_lite` carries tool calls. Every HTTP body is canonical
//! JSON.

mod a2a;
mod channel;
mod envelope;
mod http;
mod idempotency;
mod mcp;
mod message;
mod rpc;
pub mod schema;

use thiserror::Error;

pub use a2a::{
    completed_response, envelope_from_request, request_from_envelope, submit_task, submit_task_with, A2aMetadata, A2aRequest, A2aService,
    AgentHandler, TaskError, TASKS_PATH,
};
pub use channel::{channel_connect, channel_open, Channel, ChannelKind, Endpoint};
pub use envelope::{decode_envelope, encode_envelope, is_trace_id, CodecError, Envelope, EnvelopeKind, ENVELOPE_VERSION};
pub use http::{
    get, get_with, post_json, post_json_with, with_retry, HttpHandler, HttpRequest, HttpResponse, HttpServer, RetryPolicy, MAX_BODY_BYTES,
};
pub use idempotency::IdempotencyCache;
pub use mcp::{
    call_tool, execute_tool, list_tools, McpService, ToolCall, ToolDescriptor, ToolResult, CALL_PATH, TOOLS_PATH,
};
pub use message::{Message, Part, Role};
pub use rpc::{deliver_rpc, deliver_rpc_with, RPC_PATH};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("codec error: {0}")]
    Codec(#[from] CodecError),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
    #[error("cannot reach {endpoint} after {attempts} attempts: {message}")]
    Connect { endpoint: String, attempts: u32, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("task failed ({code}): {message}")]
    TaskFailed { code: String, message: String },
    #[error("timed out waiting for a message")]
    Timeout,
    #[error("channel closed")]
    Closed,
}
