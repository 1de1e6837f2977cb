//! On-disk formats: the `*.dmas.json` spec document (workflow + deployment)
//! and the `*.profile.json` communication profile.
//!
//! Loading is strict. Unknown keys are rejected, every error names the JSON
//! path it refers to, and the returned document has all defaults filled in.
//! Saving is canonical: sorted keys, two-space indent, trailing newline.

mod deployment;
mod load;
mod profile_io;

use serde::{Deserialize, Serialize};

use crate::graph::WorkflowGraph;

pub use deployment::{
    AgentProtocol, Constraints, DeploymentSpec, Ports, Protocols, Resources, Target, ToolProtocol,
    UnitDecl, DEFAULT_BASE_IMAGE, DEFAULT_MEM_MB, DEFAULT_PORT_BASE,
};
pub use load::{load_deployment, load_spec, load_spec_with_deployment, typed_json, SpecError};
pub use profile_io::{load_profile, save_profile};

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDocument {
    pub version: u32,
    pub workflow: WorkflowGraph,
    #[serde(default)]
    pub deployment: DeploymentSpec,
}

impl SpecDocument {
    pub fn new(workflow: WorkflowGraph, deployment: DeploymentSpec) -> Self {
        Self { version: SPEC_VERSION, workflow, deployment }
    }

    /// Model an agent actually runs with, after deployment bindings.
    pub fn model_of(&self, agent: &str) -> Option<&str> {
        if let Some(bound) = self.deployment.model_bindings.get(agent) {
            return Some(bound);
        }
        self.workflow.agent(agent).map(|a| a.model.as_str())
    }

    pub fn mem_mb(&self, agent: &str) -> u64 {
        self.deployment.resources.get(agent).map_or(DEFAULT_MEM_MB, |r| r.mem_mb)
    }
}

pub fn save_spec(doc: &SpecDocument) -> String {
    crate::canonical::to_pretty(doc)
}

/// The weather → news application as a complete document.
pub fn weather_news_spec() -> SpecDocument {
    SpecDocument::new(crate::graph::weather_news(), DeploymentSpec::default())
}

#[cfg(test)]
mod tests;
