use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::profile::{NodeStats, Profile};
use crate::protocol::{encode_envelope, Envelope, Message, ToolCall, ToolResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolExchange {
    pub call: ToolCall,
    pub result: ToolResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Activation {
    pub node: String,
    /// Superstep (wavefront) in which the activation ran.
    pub step: u64,
    pub input: Message,
    pub output: Message,
    #[serde(default)]
    pub tool_calls: Vec<ToolExchange>,
    /// Wall-clock milliseconds since the Unix epoch.
    pub started_ms: f64,
    pub finished_ms: f64,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceEvent {
    EdgeMsg { step: u64, envelope: Envelope },
    Activation(Activation),
    Retry { node: String, attempt: u32 },
    UnitCrash { unit: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalMessage {
    pub node: String,
    pub step: u64,
    pub message: Message,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trace {
    pub trace_id: String,
    pub events: Vec<TraceEvent>,
    /// Outputs of terminal nodes, ordered by node name then step.
    #[serde(rename = "final")]
    pub final_messages: Vec<FinalMessage>,
}

impl Trace {
    pub fn new(trace_id: &str) -> Self {
        Self { trace_id: trace_id.to_string(), events: Vec::new(), final_messages: Vec::new() }
    }

    pub fn activations(&self) -> impl Iterator<Item = &Activation> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Activation(a) => Some(a),
            _ => None,
        })
    }

    pub fn edge_msgs(&self) -> impl Iterator<Item = &Envelope> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::EdgeMsg { envelope, .. } => Some(envelope),
            _ => None,
        })
    }

    pub fn activation_count(&self, node: &str) -> usize {
        self.activations().filter(|a| a.node == node).count()
    }

    pub fn final_outputs(&self) -> Vec<&Message> {
        self.final_messages.iter().map(|f| &f.message).collect()
    }

    /// Final messages rendered one per line, as the CLI prints them.
    pub fn render_final(&self) -> String {
        self.final_messages.iter().map(|f| format!("{}: {}\n", f.node, f.message.render())).collect()
    }
}

/// (step, kind, node, seq, position in the raw trace)
type SortKey = (u64, u8, String, u64, usize);

/// Transport-independent normal form. Activations and edge messages are
/// sorted by (wavefront, activations first, node or `src->dst`, seq);
/// timestamps, attempts, retries and crashes are dropped.
pub fn canonical_trace(t: &Trace) -> String {
    let mut keyed: Vec<(SortKey, Value)> = Vec::new();
    for (i, e) in t.events.iter().enumerate() {
        match e {
            TraceEvent::Activation(a) => keyed.push((
                (a.step, 0, a.node.clone(), 0, i),
                json!({"activation": {
                    "node": a.node,
                    "step": a.step,
                    "input": a.input,
                    "output": a.output,
                    "tool_calls": a.tool_calls,
                }}),
            )),
            TraceEvent::EdgeMsg { step, envelope } => keyed.push((
                (*step, 1, format!("{}->{}", envelope.src, envelope.dst), envelope.seq, i),
                json!({"edge_msg": {"step": step, "envelope": envelope}}),
            )),
            TraceEvent::Retry { .. } | TraceEvent::UnitCrash { .. } => {}
        }
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    let events: Vec<Value> = keyed.into_iter().map(|(_, v)| v).collect();
    crate::canonical::to_pretty(&json!({
        "trace_id": t.trace_id,
        "events": events,
        "final": t.final_messages,
    }))
}

/// Logical traffic of a trace: one count per edge message (retransmissions
/// never appear as events), bytes as encoded envelope sizes.
pub fn profile_of(t: &Trace) -> Profile {
    let mut p = Profile::default();
    for e in &t.events {
        match e {
            TraceEvent::EdgeMsg { envelope, .. } => {
                let entry = p.edges.entry(super::EdgeKey::new(&envelope.src, &envelope.dst)).or_default();
                entry.count += 1;
                entry.bytes += encode_envelope(envelope).len() as u64;
            }
            TraceEvent::Activation(a) => {
                let entry: &mut NodeStats = p.nodes.entry(a.node.clone()).or_default();
                entry.invocations += 1;
                entry.total_ms += (a.finished_ms - a.started_ms).max(0.0);
            }
            _ => {}
        }
    }
    p
}
