//! Per-unit privilege manifests.
//!
//! A unit's capabilities are exactly the union of the capabilities declared
//! on its members' tools, and a unit may talk only to units it shares a
//! workflow edge with. Co-locating agents with different privileges is
//! allowed but reported.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::WorkflowGraph;
use crate::partition::Partition;
use crate::spec::SpecDocument;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("bad capability {capability:?} on tool {tool}: {reason}")]
    BadCapability { tool: String, capability: String, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct CapabilityParseError(String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Domain {
    Net,
    Fs,
    Secret,
}

/// `net:<action>[:<resource>]`, `fs:<read|write>:<absolute path>` or
/// `secret:<ENV_NAME>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Capability {
    pub domain: Domain,
    pub action: Option<String>,
    pub resource: Option<String>,
}

fn is_word(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
}

fn is_env_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Capability {
    pub fn parse(text: &str) -> Result<Self, CapabilityParseError> {
        let err = |m: &str| CapabilityParseError(format!("{text:?}: {m}"));
        let (domain, rest) = text.split_once(':').ok_or_else(|| err("expected <domain>:<action>"))?;
        match domain {
            "net" => {
                let (action, resource) = match rest.split_once(':') {
                    Some((a, r)) => (a, Some(r)),
                    None => (rest, None),
                };
                if !is_word(action) {
                    return Err(err("net action must be a lowercase word"));
                }
                if let Some(r) = resource {
                    if r.is_empty() || r.chars().any(char::is_whitespace) {
                        return Err(err("net resource must be non-empty without whitespace"));
                    }
                }
                Ok(Self { domain: Domain::Net, action: Some(action.into()), resource: resource.map(Into::into) })
            }
            "fs" => {
                let (action, resource) = rest.split_once(':').ok_or_else(|| err("fs capability needs a path"))?;
                if action != "read" && action != "write" {
                    return Err(err("fs action must be read or write"));
                }
                if !resource.starts_with('/') || resource.chars().any(char::is_whitespace) {
                    return Err(err("fs resource must be an absolute path"));
                }
                Ok(Self { domain: Domain::Fs, action: Some(action.into()), resource: Some(resource.into()) })
            }
            "secret" => {
                if !is_env_name(rest) {
                    return Err(err("secret needs an environment variable name"));
                }
                Ok(Self { domain: Domain::Secret, action: None, resource: Some(rest.into()) })
            }
            _ => Err(err("domain must be net, fs or secret")),
        }
    }

    /// Env var name for `secret:` capabilities.
    pub fn secret_name(&self) -> Option<&str> {
        match self.domain {
            Domain::Secret => self.resource.as_deref(),
            _ => None,
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let domain = match self.domain {
            Domain::Net => "net",
            Domain::Fs => "fs",
            Domain::Secret => "secret",
        };
        write!(f, "{domain}")?;
        if let Some(a) = &self.action {
            write!(f, ":{a}")?;
        }
        if let Some(r) = &self.resource {
            write!(f, ":{r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyManifest {
    pub unit: String,
    pub capabilities: BTreeSet<String>,
    pub allowed_peers: BTreeSet<String>,
    pub exposed_port: u16,
}

/// Capabilities an agent needs: the union over its tools.
pub fn agent_capabilities(g: &WorkflowGraph, agent: &str) -> Result<BTreeSet<String>, PolicyError> {
    let mut caps = BTreeSet::new();
    let Some(decl) = g.agent(agent) else { return Ok(caps) };
    for tool_name in &decl.tools {
        let Some(tool) = g.tool(tool_name) else { continue };
        for cap in &tool.capabilities {
            let parsed = Capability::parse(cap).map_err(|e| PolicyError::BadCapability {
                tool: tool.name.clone(),
                capability: cap.clone(),
                reason: e.to_string(),
            })?;
            caps.insert(parsed.to_string());
        }
    }
    Ok(caps)
}

/// Units that share at least one workflow edge (either direction) with each unit.
pub fn unit_peers(g: &WorkflowGraph, partition: &Partition) -> BTreeMap<String, BTreeSet<String>> {
    let mut peers: BTreeMap<String, BTreeSet<String>> =
        partition.units.iter().map(|u| (u.name.clone(), BTreeSet::new())).collect();
    for e in &g.edges {
        let (Some(a), Some(b)) = (partition.unit_of(&e.from), partition.unit_of(&e.to)) else { continue };
        if a != b {
            peers.entry(a.to_string()).or_default().insert(b.to_string());
            peers.entry(b.to_string()).or_default().insert(a.to_string());
        }
    }
    peers
}

pub fn derive_policy(
    spec: &SpecDocument,
    partition: &Partition,
) -> Result<BTreeMap<String, PolicyManifest>, PolicyError> {
    let g = &spec.workflow;
    let mut peers = unit_peers(g, partition);
    let mut out = BTreeMap::new();
    for (index, unit) in partition.units.iter().enumerate() {
        let mut capabilities = BTreeSet::new();
        for member in &unit.members {
            capabilities.extend(agent_capabilities(g, member)?);
        }
        out.insert(
            unit.name.clone(),
            PolicyManifest {
                unit: unit.name.clone(),
                capabilities,
                allowed_peers: peers.remove(&unit.name).unwrap_or_default(),
                exposed_port: spec.deployment.ports.base + index as u16,
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColocationWarning {
    pub unit: String,
    pub members: BTreeSet<String>,
    pub capabilities: BTreeSet<String>,
}

impl fmt::Display for ColocationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unit {} grants {{{}}} to every member of {{{}}}, more than any single member needs",
            self.unit,
            self.capabilities.iter().cloned().collect::<Vec<_>>().join(", "),
            self.members.iter().cloned().collect::<Vec<_>>().join(", ")
        )
    }
}

/// Units whose combined capability set is strictly larger than the set of
/// every individual member.
pub fn check_colocation_risk(
    spec: &SpecDocument,
    partition: &Partition,
) -> Result<Vec<ColocationWarning>, PolicyError> {
    let g = &spec.workflow;
    let mut warnings = Vec::new();
    for unit in &partition.units {
        let per_member = unit
            .members
            .iter()
            .map(|m| agent_capabilities(g, m))
            .collect::<Result<Vec<_>, _>>()?;
        let union: BTreeSet<String> = per_member.iter().flatten().cloned().collect();
        if per_member.iter().all(|caps| caps.is_subset(&union) && caps.len() < union.len()) {
            warnings.push(ColocationWarning {
                unit: unit.name.clone(),
                members: unit.members.clone(),
                capabilities: union,
            });
        }
    }
    Ok(warnings)
}
