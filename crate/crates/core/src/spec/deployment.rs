use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const DEFAULT_MEM_MB: u64 = 256;
pub const DEFAULT_PORT_BASE: u16 = 9000;
pub const DEFAULT_BASE_IMAGE: &str = "debian:bookworm-slim";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Process,
    #[default]
    Container,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitDecl {
    pub name: String,
    pub members: Vec<String>,
    #[serde(default)]
    pub target: Target,
    #[serde(default = "one")]
    pub replicas: u32,
}

impl UnitDecl {
    pub fn new(name: &str, members: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            members: members.iter().map(|m| m.to_string()).collect(),
            target: Target::Container,
            replicas: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentProtocol {
    #[default]
    Inmem,
    HttpRpc,
    A2aLite,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolProtocol {
    #[default]
    Inproc,
    McpLite,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocols {
    #[serde(default)]
    pub agent_protocol: AgentProtocol,
    #[serde(default)]
    pub tool_protocol: ToolProtocol,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_units: Option<u32>,
    #[serde(default)]
    pub colocate: Vec<[String; 2]>,
    #[serde(default)]
    pub separate: Vec<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_mem_cap_mb: Option<u64>,
}

fn default_mem() -> u64 {
    DEFAULT_MEM_MB
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resources {
    #[serde(default = "default_mem")]
    pub mem_mb: u64,
}

fn default_base() -> u16 {
    DEFAULT_PORT_BASE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ports {
    #[serde(default = "default_base")]
    pub base: u16,
}

impl Default for Ports {
    fn default() -> Self {
        Self { base: DEFAULT_PORT_BASE }
    }
}

fn default_image() -> String {
    DEFAULT_BASE_IMAGE.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<UnitDecl>>,
    #[serde(default)]
    pub protocols: Protocols,
    #[serde(default)]
    pub constraints: Constraints,
    /// Sparse: agents without an entry get the default memory size.
    #[serde(default)]
    pub resources: BTreeMap<String, Resources>,
    #[serde(default)]
    pub ports: Ports,
    #[serde(default)]
    pub model_bindings: BTreeMap<String, String>,
    #[serde(default = "default_image")]
    pub base_image: String,
}

impl Default for DeploymentSpec {
    fn default() -> Self {
        Self {
            units: None,
            protocols: Protocols::default(),
            constraints: Constraints::default(),
            resources: BTreeMap::new(),
            ports: Ports::default(),
            model_bindings: BTreeMap::new(),
            base_image: default_image(),
        }
    }
}
