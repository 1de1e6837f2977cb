use std::collections::{BTreeMap, BTreeSet};

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

use super::{DeploymentSpec, SpecDocument, SPEC_VERSION};
use crate::graph::{self, Diagnostic};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error: {path}: {message}")]
    Schema { path: String, message: String },
    #[error("cross-reference error: {path}: {name}")]
    CrossRef { path: String, name: String },
    #[error("unsupported spec version {0}")]
    Version(String),
    #[error("invalid workflow: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidWorkflow(Vec<Diagnostic>),
}

impl SpecError {
    /// JSON-path style location of the problem, when there is one.
    pub fn locator(&self) -> Option<&str> {
        match self {
            SpecError::Schema { path, .. } | SpecError::CrossRef { path, .. } => Some(path),
            SpecError::Version(_) => Some("version"),
            SpecError::Parse { .. } | SpecError::InvalidWorkflow(_) => None,
        }
    }

    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        SpecError::Schema { path: path.into(), message: message.into() }
    }

    fn cross(path: impl Into<String>, name: impl Into<String>) -> Self {
        SpecError::CrossRef { path: path.into(), name: name.into() }
    }
}

pub(crate) fn parse_value(bytes: &[u8]) -> Result<Value, SpecError> {
    serde_json::from_slice(bytes).map_err(|e| SpecError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Typed deserialization that reports where in the document it failed.
pub(crate) fn typed<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T, SpecError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (true, ".") => "$".to_string(),
            (true, _) => inner,
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        SpecError::schema(path, e.into_inner().to_string())
    })
}

/// Strict typed decoding of any JSON document, with errors located under `prefix`.
pub fn typed_json<T: DeserializeOwned>(bytes: &[u8], prefix: &str) -> Result<T, SpecError> {
    typed(parse_value(bytes)?, prefix)
}

pub fn load_spec(bytes: &[u8]) -> Result<SpecDocument, SpecError> {
    load_spec_value(parse_value(bytes)?)
}

fn load_spec_value(value: Value) -> Result<SpecDocument, SpecError> {
    let Value::Object(map) = &value else {
        return Err(SpecError::schema("$", "document must be a JSON object"));
    };
    for key in map.keys() {
        if !matches!(key.as_str(), "version" | "workflow" | "deployment") {
            return Err(SpecError::schema(key.clone(), "unknown top-level key"));
        }
    }
    match map.get("version") {
        None => return Err(SpecError::schema("version", "missing")),
        Some(v) if v.as_u64() == Some(SPEC_VERSION as u64) => {}
        Some(v) if v.is_number() => return Err(SpecError::Version(v.to_string())),
        Some(_) => return Err(SpecError::schema("version", "must be an integer")),
    }
    let doc: SpecDocument = typed(value, "")?;
    check(doc)
}

/// Load a stand-alone deployment section (the `--deployment` override file).
pub fn load_deployment(bytes: &[u8]) -> Result<DeploymentSpec, SpecError> {
    typed(parse_value(bytes)?, "deployment")
}

/// `spec` with its deployment section replaced by `deployment` before any
/// validation, so a broken section in the original does not matter.
pub fn load_spec_with_deployment(spec: &[u8], deployment: &[u8]) -> Result<SpecDocument, SpecError> {
    let mut value = parse_value(spec)?;
    let dep = parse_value(deployment)?;
    let Value::Object(map) = &mut value else {
        return Err(SpecError::schema("$", "document must be a JSON object"));
    };
    map.insert("deployment".to_string(), dep);
    load_spec_value(value)
}

fn check(mut doc: SpecDocument) -> Result<SpecDocument, SpecError> {
    if doc.workflow.agents.is_empty() {
        return Err(SpecError::schema("workflow.agents", "empty"));
    }
    if doc.workflow.entry.is_none() {
        doc.workflow.entry = Some(doc.workflow.agents[0].name.clone());
    }
    let diagnostics = graph::validate(&doc.workflow);
    if !diagnostics.is_empty() {
        return Err(SpecError::InvalidWorkflow(diagnostics));
    }
    check_deployment(&doc)?;
    Ok(doc)
}

fn check_deployment(doc: &SpecDocument) -> Result<(), SpecError> {
    let agents = doc.workflow.agent_names();
    let d = &doc.deployment;
    let known = |path: &str, name: &str| {
        if agents.contains(name) {
            Ok(())
        } else {
            Err(SpecError::cross(path, name))
        }
    };

    if let Some(units) = &d.units {
        let mut unit_names = BTreeSet::new();
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, unit) in units.iter().enumerate() {
            let path = format!("deployment.units[{i}]");
            if !graph::is_valid_name(&unit.name) {
                return Err(SpecError::schema(format!("{path}.name"), format!("invalid unit name {:?}", unit.name)));
            }
            if !unit_names.insert(&unit.name) {
                return Err(SpecError::schema(format!("{path}.name"), format!("duplicate unit {}", unit.name)));
            }
            if unit.members.is_empty() {
                return Err(SpecError::schema(format!("{path}.members"), "empty"));
            }
            if unit.replicas == 0 {
                return Err(SpecError::schema(format!("{path}.replicas"), "must be positive"));
            }
            for member in &unit.members {
                known(&format!("{path}.members"), member)?;
                if let Some(prev) = owner.insert(member, &unit.name) {
                    return Err(SpecError::schema(
                        format!("{path}.members"),
                        format!("{member} already assigned to unit {prev}"),
                    ));
                }
            }
        }
    }

    let c = &d.constraints;
    if c.max_units == Some(0) {
        return Err(SpecError::schema("deployment.constraints.max_units", "must be positive"));
    }
    if c.unit_mem_cap_mb == Some(0) {
        return Err(SpecError::schema("deployment.constraints.unit_mem_cap_mb", "must be positive"));
    }
    let mut colocated = BTreeSet::new();
    for (i, [a, b]) in c.colocate.iter().enumerate() {
        let path = format!("deployment.constraints.colocate[{i}]");
        known(&path, a)?;
        known(&path, b)?;
        colocated.insert(sorted_pair(a, b));
    }
    for (i, [a, b]) in c.separate.iter().enumerate() {
        let path = format!("deployment.constraints.separate[{i}]");
        known(&path, a)?;
        known(&path, b)?;
        if a == b {
            return Err(SpecError::schema(path, format!("{a} cannot be separated from itself")));
        }
        if colocated.contains(&sorted_pair(a, b)) {
            return Err(SpecError::schema(path, format!("pair ({a}, {b}) is both colocated and separated")));
        }
    }

    for (agent, res) in &d.resources {
        known("deployment.resources", agent)?;
        if res.mem_mb == 0 {
            return Err(SpecError::schema(format!("deployment.resources.{agent}.mem_mb"), "must be positive"));
        }
    }
    for (agent, model) in &d.model_bindings {
        known("deployment.model_bindings", agent)?;
        if doc.workflow.model(model).is_none() {
            return Err(SpecError::cross(format!("deployment.model_bindings.{agent}"), model.clone()));
        }
    }

    let base = d.ports.base;
    if !(1024..=60000).contains(&base) {
        return Err(SpecError::schema("deployment.ports.base", format!("{base} not in [1024, 60000]")));
    }
    let needed = d.units.as_ref().map_or(agents.len(), Vec::len);
    if base as usize + needed > 65536 {
        return Err(SpecError::schema("deployment.ports.base", format!("no room for {needed} consecutive ports")));
    }
    if d.base_image.is_empty() || d.base_image.chars().any(char::is_whitespace) {
        return Err(SpecError::schema("deployment.base_image", "must be a non-empty image reference"));
    }
    Ok(())
}

fn sorted_pair<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
