//! Compiler and local runtime for multi-agent workflows.
//!
//! A workflow graph (agents, tools, models, typed edges) plus a deployment
//! section is compiled into deployment units, inter-unit channels, container
//! scaffolding and least-privilege policies. The runtime executes the same
//! application either in one process or as one OS process per unit, records a
//! trace, and produces a communication profile that feeds the partition
//! optimizer.

#![allow(clippy::result_large_err)]

pub mod canonical;
pub mod cli;
pub mod graph;
pub mod partition;
pub mod policy;
pub mod protocol;
pub mod runtime;
pub mod scaffold;
pub mod spec;

pub use graph::{AgentDecl, Diagnostic, Edge, EdgeKind, ModelDecl, ToolDecl, WorkflowGraph};
pub use partition::{CostModel, Partition};
pub use protocol::{Envelope, Message, Part};
pub use runtime::{Profile, RunMode, RunOptions, Trace};
pub use scaffold::DeploymentPlan;
pub use spec::{DeploymentSpec, SpecDocument};
