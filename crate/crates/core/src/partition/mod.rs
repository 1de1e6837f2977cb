//! Assignment of agents to deployment units.
//!
//! Units are always named canonically: `u0, u1, …` in order of each unit's
//! lexicographically smallest member. Costs follow the linear model in
//! [`CostModel`]; the optimizer is a greedy agglomeration with
//! move/swap refinement, checked against exhaustive enumeration for small
//! instances.

mod brute;
mod feasibility;
mod optimize;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::Profile;
use crate::spec::SpecDocument;

pub use brute::{brute_force_partition, BRUTE_FORCE_LIMIT};
pub use feasibility::{check_feasible, Violation};
pub use optimize::optimize_partition;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("units do not cover agents: {}", .0.join(", "))]
    IncompleteCover(Vec<String>),
    #[error("constraint violation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    ConstraintViolation(Vec<Violation>),
    #[error("infeasible constraints: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Infeasible(Vec<Violation>),
    #[error("{0} agents is too many for exhaustive search (limit {BRUTE_FORCE_LIMIT})")]
    TooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Unit {
    pub name: String,
    pub members: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub units: Vec<Unit>,
    pub assignment: BTreeMap<String, String>,
}

impl Partition {
    /// Builds a canonically named partition from arbitrary non-empty blocks.
    pub fn from_blocks<I, B, S>(blocks: I) -> Self
    where
        I: IntoIterator<Item = B>,
        B: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut sets: Vec<BTreeSet<String>> = blocks
            .into_iter()
            .map(|b| b.into_iter().map(Into::into).collect::<BTreeSet<String>>())
            .filter(|b| !b.is_empty())
            .collect();
        sets.sort_by(|a, b| a.first().cmp(&b.first()));
        let mut assignment = BTreeMap::new();
        let units = sets
            .into_iter()
            .enumerate()
            .map(|(i, members)| {
                let name = format!("u{i}");
                for m in &members {
                    assignment.insert(m.clone(), name.clone());
                }
                Unit { name, members }
            })
            .collect();
        Self { units, assignment }
    }

    pub fn monolith(agents: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::from_blocks([agents.into_iter().map(Into::into).collect::<Vec<String>>()])
    }

    pub fn singletons(agents: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::from_blocks(agents.into_iter().map(|a| vec![a.into()]))
    }

    pub fn unit_of(&self, agent: &str) -> Option<&str> {
        self.assignment.get(agent).map(String::as_str)
    }

    pub fn unit(&self, name: &str) -> Option<&Unit> {
        self.units.iter().find(|u| u.name == name)
    }

    pub fn index_of(&self, unit: &str) -> Option<usize> {
        self.units.iter().position(|u| u.name == unit)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Sorted member lists in unit order; the basis of every tie-break.
    pub fn canonical_form(&self) -> Vec<Vec<String>> {
        self.units.iter().map(|u| u.members.iter().cloned().collect()).collect()
    }
}

/// Linear communication cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub remote_latency_ms: f64,
    pub remote_byte_cost: f64,
    pub unit_fixed_cost: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { remote_latency_ms: 1.0, remote_byte_cost: 0.001, unit_fixed_cost: 0.0 }
    }
}

impl CostModel {
    pub fn new(remote_latency_ms: f64, remote_byte_cost: f64, unit_fixed_cost: f64) -> Result<Self, String> {
        let cm = Self { remote_latency_ms, remote_byte_cost, unit_fixed_cost };
        for (name, v) in [("latency", remote_latency_ms), ("byte", remote_byte_cost), ("fixed", unit_fixed_cost)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} coefficient must be a non-negative number, got {v}"));
            }
        }
        Ok(cm)
    }
}

/// Σ over profiled edges crossing units of `count·latency + bytes·byte_cost`,
/// plus `|units|·fixed`.
pub fn partition_cost(p: &Partition, profile: &Profile, cm: &CostModel) -> f64 {
    let mut cut = 0.0;
    for (key, stats) in &profile.edges {
        if let (Some(a), Some(b)) = (p.unit_of(&key.from), p.unit_of(&key.to)) {
            if a != b {
                cut += stats.count as f64 * cm.remote_latency_ms + stats.bytes as f64 * cm.remote_byte_cost;
            }
        }
    }
    cut + p.units.len() as f64 * cm.unit_fixed_cost
}

/// The declared units, canonically renamed. Also returns the old → new name map.
pub fn partition_explicit(spec: &SpecDocument) -> Result<(Partition, BTreeMap<String, String>), PartitionError> {
    let declared = spec.deployment.units.as_deref().unwrap_or_default();
    let covered: BTreeSet<&str> = declared.iter().flat_map(|u| u.members.iter().map(String::as_str)).collect();
    let missing: Vec<String> =
        spec.workflow.agents.iter().map(|a| a.name.clone()).filter(|a| !covered.contains(a.as_str())).collect();
    if !missing.is_empty() {
        let mut missing = missing;
        missing.sort();
        return Err(PartitionError::IncompleteCover(missing));
    }
    let partition = Partition::from_blocks(declared.iter().map(|u| u.members.clone()));
    let violations = check_feasible(spec, &partition);
    if !violations.is_empty() {
        return Err(PartitionError::ConstraintViolation(violations));
    }
    let renames = declared
        .iter()
        .map(|u| (u.name.clone(), partition.unit_of(&u.members[0]).unwrap_or_default().to_string()))
        .collect();
    Ok((partition, renames))
}

/// One unit per agent.
pub fn partition_default(spec: &SpecDocument) -> Result<Partition, PartitionError> {
    let partition = Partition::singletons(spec.workflow.agents.iter().map(|a| a.name.clone()));
    let violations = check_feasible(spec, &partition);
    if !violations.is_empty() {
        return Err(PartitionError::ConstraintViolation(violations));
    }
    Ok(partition)
}

/// Explicit units when declared, the fully distributed default otherwise.
pub fn partition_for(spec: &SpecDocument) -> Result<Partition, PartitionError> {
    match spec.deployment.units {
        Some(_) => partition_explicit(spec).map(|(p, _)| p),
        None => partition_default(spec),
    }
}

/// Relative tolerance used for every cost comparison, so that decisions do
/// not change when all costs are scaled by a positive constant.
pub(crate) fn tolerance(scale: f64) -> f64 {
    1e-9 * scale.abs().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests;
