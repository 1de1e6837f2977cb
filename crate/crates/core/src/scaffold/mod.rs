//! Deployment plans and the files generated from them.
//!
//! A plan is a pure function of the spec. Emitted files are byte-stable so
//! they can be checked in and diffed after every re-partitioning.

mod manifest;
mod templates;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use similar::TextDiff;
use thiserror::Error;

use crate::canonical::to_pretty;
use crate::partition::{partition_explicit, partition_for, Partition, PartitionError};
use crate::policy::{derive_policy, PolicyError, PolicyManifest};
use crate::spec::{AgentProtocol, SpecDocument};

pub use manifest::{unit_manifest, PeerEntry, UnitManifest};

pub const PLAN_FILE: &str = "plan.json";

#[derive(Debug, Error)]
pub enum ScaffoldError {
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("refusing to overwrite non-empty directory {0} (use --force)")]
    RefusesOverwrite(PathBuf),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ScaffoldError + '_ {
    move |source| ScaffoldError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDecl {
    pub from_unit: String,
    pub to_unit: String,
    pub protocol: AgentProtocol,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub partition: Partition,
    pub ports: BTreeMap<String, u16>,
    pub channels: Vec<ChannelDecl>,
    pub replicas: BTreeMap<String, u32>,
    /// Relative path to file contents; `plan.json` itself is not included.
    pub artifacts: BTreeMap<String, String>,
    pub policies: BTreeMap<String, PolicyManifest>,
}

#[derive(Serialize)]
struct PlanFile<'a> {
    partition: &'a Partition,
    ports: &'a BTreeMap<String, u16>,
    channels: &'a [ChannelDecl],
    replicas: &'a BTreeMap<String, u32>,
    artifacts: BTreeMap<&'a str, String>,
    policies: &'a BTreeMap<String, PolicyManifest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl DeploymentPlan {
    /// The `plan.json` text: everything but the artifacts, which are listed
    /// by SHA-256 digest.
    pub fn plan_json(&self) -> String {
        to_pretty(&PlanFile {
            partition: &self.partition,
            ports: &self.ports,
            channels: &self.channels,
            replicas: &self.replicas,
            artifacts: self.artifacts.iter().map(|(p, c)| (p.as_str(), sha256_hex(c.as_bytes()))).collect(),
            policies: &self.policies,
        })
    }

    /// Every emitted file including `plan.json`.
    pub fn files(&self) -> BTreeMap<String, String> {
        let mut files = self.artifacts.clone();
        files.insert(PLAN_FILE.to_string(), self.plan_json());
        files
    }

    pub fn manifest(&self, unit: &str) -> Option<UnitManifest> {
        let text = self.artifacts.get(&format!("units/{unit}/manifest.json"))?;
        serde_json::from_str(text).ok()
    }
}

/// A partition for `spec` along with replica counts keyed by canonical unit.
pub fn plan_partition(spec: &SpecDocument) -> Result<(Partition, BTreeMap<String, u32>), ScaffoldError> {
    let partition = partition_for(spec)?;
    let mut replicas: BTreeMap<String, u32> = partition.units.iter().map(|u| (u.name.clone(), 1)).collect();
    if let Some(units) = &spec.deployment.units {
        let (_, renames) = partition_explicit(spec)?;
        for decl in units {
            if let Some(canonical) = renames.get(&decl.name) {
                replicas.insert(canonical.clone(), decl.replicas);
            }
        }
    }
    Ok((partition, replicas))
}

pub fn channels_of(spec: &SpecDocument, partition: &Partition) -> Vec<ChannelDecl> {
    let protocol = spec.deployment.protocols.agent_protocol;
    let set: BTreeSet<ChannelDecl> = spec
        .workflow
        .edges
        .iter()
        .filter_map(|e| {
            let (a, b) = (partition.unit_of(&e.from)?, partition.unit_of(&e.to)?);
            (a != b).then(|| ChannelDecl { from_unit: a.to_string(), to_unit: b.to_string(), protocol })
        })
        .collect();
    set.into_iter().collect()
}

pub fn compile(spec: &SpecDocument) -> Result<DeploymentPlan, ScaffoldError> {
    let (partition, replicas) = plan_partition(spec)?;
    compile_with(spec, partition, replicas)
}

/// Plan for an already chosen partition.
pub fn compile_with(
    spec: &SpecDocument,
    partition: Partition,
    replicas: BTreeMap<String, u32>,
) -> Result<DeploymentPlan, ScaffoldError> {
    let base = spec.deployment.ports.base;
    let ports: BTreeMap<String, u16> =
        partition.units.iter().enumerate().map(|(i, u)| (u.name.clone(), base + i as u16)).collect();
    let channels = channels_of(spec, &partition);
    let policies = derive_policy(spec, &partition)?;

    let mut artifacts = BTreeMap::new();
    let mut manifests = BTreeMap::new();
    for unit in &partition.units {
        let m = unit_manifest(spec, &partition, &unit.name).expect("unit of its own partition");
        artifacts.insert(format!("units/{}/manifest.json", unit.name), to_pretty(&m));
        artifacts.insert(format!("units/{}/Dockerfile", unit.name), templates::dockerfile(&spec.deployment.base_image, &unit.name));
        artifacts.insert(format!("policies/{}.policy.json", unit.name), to_pretty(&policies[&unit.name]));
        manifests.insert(unit.name.clone(), m);
    }
    artifacts.insert("compose.yaml".to_string(), templates::compose(&partition, &channels, &replicas, &policies));
    artifacts.insert("run_local.sh".to_string(), templates::run_local(&manifests));

    Ok(DeploymentPlan { partition, ports, channels, replicas, artifacts, policies })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EmitReport {
    pub written: Vec<String>,
    pub unchanged: Vec<String>,
    pub removed: Vec<String>,
}

fn is_nonempty_dir(dir: &Path) -> Result<bool, ScaffoldError> {
    match fs::read_dir(dir) {
        Ok(mut entries) => Ok(entries.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(io(dir)(e)),
    }
}

fn previous_files(dir: &Path) -> Option<BTreeSet<String>> {
    let text = fs::read_to_string(dir.join(PLAN_FILE)).ok()?;
    let value: serde_json::Value = serde_json::from_str(&text).ok()?;
    let mut names: BTreeSet<String> = value.get("artifacts")?.as_object()?.keys().cloned().collect();
    names.insert(PLAN_FILE.to_string());
    Some(names)
}

/// Writes all files of `plan` under `out_dir`. A non-empty directory is
/// only touched with `force`, or when it already holds exactly this plan.
/// With `force`, files listed by a previous `plan.json` but absent from
/// this one are deleted.
pub fn emit(plan: &DeploymentPlan, out_dir: &Path, force: bool) -> Result<EmitReport, ScaffoldError> {
    let files = plan.files();
    let mut report = EmitReport::default();
    if is_nonempty_dir(out_dir)? && !force {
        let same = fs::read_to_string(out_dir.join(PLAN_FILE)).is_ok_and(|t| t == files[PLAN_FILE])
            && files.iter().all(|(p, c)| fs::read(out_dir.join(p)).is_ok_and(|b| b == c.as_bytes()));
        if !same {
            return Err(ScaffoldError::RefusesOverwrite(out_dir.to_path_buf()));
        }
        report.unchanged = files.keys().cloned().collect();
        return Ok(report);
    }
    if let Some(old) = previous_files(out_dir) {
        for stale in old.iter().filter(|p| !files.contains_key(*p) && is_relative_clean(p)) {
            let path = out_dir.join(stale);
            if path.is_file() {
                fs::remove_file(&path).map_err(io(&path))?;
                report.removed.push(stale.clone());
                if let Some(parent) = path.parent() {
                    let _ = fs::remove_dir(parent);
                }
            }
        }
    }
    for (rel, content) in &files {
        let path = out_dir.join(rel);
        if fs::read(&path).is_ok_and(|b| b == content.as_bytes()) {
            report.unchanged.push(rel.clone());
            continue;
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io(parent))?;
        }
        fs::write(&path, content).map_err(io(&path))?;
        #[cfg(unix)]
        if rel.ends_with(".sh") {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).map_err(io(&path))?;
        }
        report.written.push(rel.clone());
    }
    Ok(report)
}

fn is_relative_clean(p: &str) -> bool {
    !p.starts_with('/') && p.split('/').all(|c| !c.is_empty() && c != "." && c != "..")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ArtifactChange {
    Added,
    Removed,
    Changed { diff: String },
    Unchanged,
}

/// Per-file comparison of two plans, `plan.json` included.
pub fn diff_plan(old: &DeploymentPlan, new: &DeploymentPlan) -> BTreeMap<String, ArtifactChange> {
    let (a, b) = (old.files(), new.files());
    let paths: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    paths
        .into_iter()
        .map(|p| {
            let change = match (a.get(p), b.get(p)) {
                (None, Some(_)) => ArtifactChange::Added,
                (Some(_), None) => ArtifactChange::Removed,
                (Some(x), Some(y)) if x == y => ArtifactChange::Unchanged,
                (Some(x), Some(y)) => ArtifactChange::Changed {
                    diff: TextDiff::from_lines(x, y).unified_diff().header(p, p).to_string(),
                },
                (None, None) => unreachable!("path comes from one of the maps"),
            };
            (p.clone(), change)
        })
        .collect()
}

/// `status path` lines, one per artifact.
pub fn render_diff(diff: &BTreeMap<String, ArtifactChange>) -> String {
    let mut out = String::new();
    for (path, change) in diff {
        let status = match change {
            ArtifactChange::Added => "added",
            ArtifactChange::Removed => "removed",
            ArtifactChange::Changed { .. } => "changed",
            ArtifactChange::Unchanged => "unchanged",
        };
        out.push_str(&format!("{status} {path}\n"));
    }
    out
}

#[cfg(test)]
mod tests;
