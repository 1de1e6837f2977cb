//! Execution of a compiled application, in one process or as one OS process
//! per deployment unit.
//!
//! Both modes drive the same [`UnitEngine`](engine::UnitEngine) through a
//! bulk-synchronous master loop, so a trace depends on the workflow and the
//! input only. The processes mode adds crash detection, restart from the
//! last step checkpoint and re-delivery of the crashed unit's inputs.

pub mod engine;
mod local;
mod master;
mod model;
mod profile;
mod supervisor;
mod tools;
mod trace;
pub mod unit_server;

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::to_compact;
use crate::protocol::Message;
use crate::spec::SpecDocument;

pub use engine::{BeginRequest, Checkpoint, StepReport, UnitEngine, INPUT_SRC};
pub use model::{invoke_model, mock_model};
pub use profile::{EdgeKey, EdgeStats, NodeStats, Profile};
pub use tools::{ToolRoute, ToolRunner};
pub use trace::{canonical_trace, profile_of, Activation, FinalMessage, ToolExchange, Trace, TraceEvent};

pub const DEFAULT_HOP_BUDGET: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Monolith,
    Processes,
}

impl FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "monolith" => Ok(RunMode::Monolith),
            "processes" => Ok(RunMode::Processes),
            _ => Err(format!("unknown mode {s:?} (expected monolith or processes)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub unit: String,
    pub kill_after_activations: u64,
    pub restarts: u32,
}

impl FromStr for Fault {
    type Err = String;

    /// `unit:N[:restarts]`, restarts defaulting to 1.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || format!("bad fault {s:?} (expected unit:N[:restarts])");
        if !(2..=3).contains(&parts.len()) || parts[0].is_empty() {
            return Err(bad());
        }
        let kill_after_activations = parts[1].parse::<u64>().map_err(|_| bad())?;
        if kill_after_activations == 0 {
            return Err(format!("bad fault {s:?}: N must be at least 1"));
        }
        let restarts = match parts.get(2) {
            Some(r) => r.parse().map_err(|_| bad())?,
            None => 1,
        };
        Ok(Fault { unit: parts[0].to_string(), kill_after_activations, restarts })
    }
}

pub type FaultPlan = Vec<Fault>;

/// How processes-mode units get their listen ports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PortStrategy {
    /// `ports.base + unit index`, failing with `Bind` when one is taken.
    Plan,
    /// Free ports picked by the OS.
    #[default]
    Ephemeral,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub hop_budget: u32,
    pub fault_plan: FaultPlan,
    /// Binary started with the `unit` subcommand. Defaults to
    /// `$DMASF_UNIT_BIN`, then the current executable.
    pub unit_binary: Option<PathBuf>,
    pub ports: PortStrategy,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { hop_budget: DEFAULT_HOP_BUDGET, fault_plan: Vec::new(), unit_binary: None, ports: PortStrategy::default() }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunError {
    #[error("hop budget {budget} exhausted at {node}")]
    BudgetExhausted { node: String, budget: u32 },
    #[error("no route from {node} for label {label:?}")]
    RouteMissing { node: String, label: Option<String> },
    #[error("scripted responses for {agent} exhausted at invocation {index}")]
    ScriptExhausted { agent: String, index: u64 },
    #[error("cannot start unit {unit}: {message}")]
    UnitSpawnError { unit: String, message: String },
    #[error("deadlock: barrier(s) {} never received all inputs", .nodes.join(", "))]
    Deadlock { nodes: Vec<String> },
    #[error("unit {unit} crashed with no restarts left")]
    UnitLost { unit: String },
    #[error("cannot bind {addr}: {message}")]
    BindError { addr: String, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("cannot plan deployment: {0}")]
    Plan(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// A failed run together with everything recorded up to the failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: RunError,
    pub trace: Trace,
}

impl From<RunError> for RunFailure {
    fn from(error: RunError) -> Self {
        RunFailure { error, trace: Trace::new("") }
    }
}

/// 32 hex chars derived from the workflow and the input, so the same run
/// gets the same id under every deployment.
pub fn trace_id_for(spec: &SpecDocument, input: &Message) -> String {
    let mut h = Sha256::new();
    h.update(to_compact(&spec.workflow).as_bytes());
    h.update([0u8]);
    h.update(to_compact(input).as_bytes());
    hex::encode(&h.finalize()[..16])
}

pub fn run(spec: &SpecDocument, input: &Message, mode: RunMode, opts: &RunOptions) -> Result<(Trace, Profile), RunFailure> {
    if input.parts.is_empty() {
        return Err(RunError::Plan("input message has no parts".into()).into());
    }
    let trace = match mode {
        RunMode::Monolith => local::run_monolith(spec, input, opts)?,
        RunMode::Processes => supervisor::run_processes(spec, input, opts)?,
    };
    let profile = profile_of(&trace);
    Ok((trace, profile))
}
