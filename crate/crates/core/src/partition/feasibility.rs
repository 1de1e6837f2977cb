use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::Partition;
use crate::spec::SpecDocument;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    Uncovered(String),
    UnknownAgent(String),
    MultiplyAssigned(String),
    EmptyUnit(String),
    DuplicateUnit(String),
    Colocate(String, String),
    Separate(String, String),
    MemCap { unit: String, mem_mb: u64, cap_mb: u64 },
    MaxUnits { units: usize, max: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Uncovered(a) => write!(f, "uncovered({a})"),
            Violation::UnknownAgent(a) => write!(f, "unknown_agent({a})"),
            Violation::MultiplyAssigned(a) => write!(f, "multiply_assigned({a})"),
            Violation::EmptyUnit(u) => write!(f, "empty_unit({u})"),
            Violation::DuplicateUnit(u) => write!(f, "duplicate_unit({u})"),
            Violation::Colocate(a, b) => write!(f, "colocate({a}, {b})"),
            Violation::Separate(a, b) => write!(f, "separate({a}, {b})"),
            Violation::MemCap { unit, mem_mb, cap_mb } => write!(f, "unit_mem_cap_mb({unit}: {mem_mb} > {cap_mb})"),
            Violation::MaxUnits { units, max } => write!(f, "max_units({units} > {max})"),
        }
    }
}

/// Every constraint `p` breaks. Computed from the unit member lists alone,
/// independently of the partition's own assignment map.
pub fn check_feasible(spec: &SpecDocument, p: &Partition) -> Vec<Violation> {
    let agents = spec.workflow.agent_names();
    let mut out = BTreeSet::new();
    let mut home: BTreeMap<&str, &str> = BTreeMap::new();
    let mut names = BTreeSet::new();
    for unit in &p.units {
        if !names.insert(unit.name.as_str()) {
            out.insert(Violation::DuplicateUnit(unit.name.clone()));
        }
        if unit.members.is_empty() {
            out.insert(Violation::EmptyUnit(unit.name.clone()));
        }
        for m in &unit.members {
            if !agents.contains(m) {
                out.insert(Violation::UnknownAgent(m.clone()));
            }
            if home.insert(m, &unit.name).is_some() {
                out.insert(Violation::MultiplyAssigned(m.clone()));
            }
        }
        if let Some(cap) = spec.deployment.constraints.unit_mem_cap_mb {
            let mem: u64 = unit.members.iter().map(|m| spec.mem_mb(m)).sum();
            if mem > cap {
                out.insert(Violation::MemCap { unit: unit.name.clone(), mem_mb: mem, cap_mb: cap });
            }
        }
    }
    for a in &agents {
        if !home.contains_key(a.as_str()) {
            out.insert(Violation::Uncovered(a.clone()));
        }
    }
    let c = &spec.deployment.constraints;
    for [a, b] in &c.colocate {
        if let (Some(x), Some(y)) = (home.get(a.as_str()), home.get(b.as_str())) {
            if x != y {
                out.insert(Violation::Colocate(a.clone(), b.clone()));
            }
        }
    }
    for [a, b] in &c.separate {
        if let (Some(x), Some(y)) = (home.get(a.as_str()), home.get(b.as_str())) {
            if x == y {
                out.insert(Violation::Separate(a.clone(), b.clone()));
            }
        }
    }
    if let Some(max) = c.max_units {
        if p.units.len() > max as usize {
            out.insert(Violation::MaxUnits { units: p.units.len(), max });
        }
    }
    out.into_iter().collect()
}
