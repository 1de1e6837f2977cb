use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::Message;
use crate::graph::is_valid_name;

pub const ENVELOPE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct CodecError {
    pub path: String,
    pub message: String,
}

impl CodecError {
    pub(crate) fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    AgentMsg,
    TaskResult,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub v: u32,
    pub kind: EnvelopeKind,
    pub trace_id: String,
    pub seq: u64,
    pub src: String,
    pub dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<String>,
    /// Remaining forwards before the run is aborted.
    pub hops: u32,
    pub payload: Message,
}

impl Envelope {
    pub fn agent_msg(trace_id: &str, seq: u64, src: &str, dst: &str, payload: Message) -> Self {
        Self {
            v: ENVELOPE_VERSION,
            kind: EnvelopeKind::AgentMsg,
            trace_id: trace_id.to_string(),
            seq,
            src: src.to_string(),
            dst: dst.to_string(),
            route: None,
            hops: 0,
            payload,
        }
    }

    pub fn with_route(mut self, route: Option<&str>) -> Self {
        self.route = route.map(str::to_string);
        self
    }

    pub fn with_hops(mut self, hops: u32) -> Self {
        self.hops = hops;
        self
    }

    /// Idempotency key used by every transport: `<trace_id>:<seq>`.
    pub fn task_id(&self) -> String {
        format!("{}:{}", self.trace_id, self.seq)
    }

    pub(crate) fn check(&self) -> Result<(), CodecError> {
        if self.v != ENVELOPE_VERSION {
            return Err(CodecError::new("v", "unsupported"));
        }
        if !is_trace_id(&self.trace_id) {
            return Err(CodecError::new("trace_id", "expected 32 lowercase hex characters"));
        }
        for (path, name) in [("src", &self.src), ("dst", &self.dst)] {
            if !is_valid_name(name) {
                return Err(CodecError::new(path, format!("invalid agent name {name:?}")));
            }
        }
        if let Some(route) = &self.route {
            if !is_valid_name(route) {
                return Err(CodecError::new("route", format!("invalid route label {route:?}")));
            }
        }
        self.payload.check().map_err(|m| {
            let (field, msg) = m.split_once(": ").unwrap_or(("", m));
            CodecError::new(format!("payload.{field}"), msg)
        })
    }
}

pub fn is_trace_id(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

pub fn encode_envelope(e: &Envelope) -> Vec<u8> {
    crate::canonical::to_compact(e).into_bytes()
}

pub fn decode_envelope(bytes: &[u8]) -> Result<Envelope, CodecError> {
    let value: Value = serde_json::from_slice(bytes)
        .map_err(|e| CodecError::new("$", format!("line {} column {}: {e}", e.line(), e.column())))?;
    let Value::Object(map) = &value else {
        return Err(CodecError::new("$", "envelope must be a JSON object"));
    };
    match map.get("v") {
        None => return Err(CodecError::new("v", "missing")),
        Some(v) if v.as_u64() != Some(ENVELOPE_VERSION as u64) => return Err(CodecError::new("v", "unsupported")),
        Some(_) => {}
    }
    let envelope: Envelope = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CodecError::new(if path == "." { "$".to_string() } else { path }, e.into_inner().to_string())
    })?;
    envelope.check()?;
    Ok(envelope)
}
