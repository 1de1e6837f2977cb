use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{join_nodes, AgentDecl, Edge, ModelDecl, ToolDecl};
use crate::partition::Partition;
use crate::policy::unit_peers;
use crate::spec::{Protocols, SpecDocument};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerEntry {
    pub port: u16,
    pub agents: Vec<String>,
}

/// Everything one unit needs at run time. Model references of the hosted
/// agents already reflect deployment bindings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitManifest {
    pub unit: String,
    pub members: Vec<String>,
    pub agents: Vec<AgentDecl>,
    pub models: Vec<ModelDecl>,
    pub tools: Vec<ToolDecl>,
    /// Out-edges of the members, in workflow order.
    pub routes: Vec<Edge>,
    /// Barrier members and the sources they wait for.
    pub joins: BTreeMap<String, Vec<String>>,
    pub entry: String,
    /// Unit of every agent in the application.
    pub assignment: BTreeMap<String, String>,
    pub port: u16,
    pub peers: BTreeMap<String, PeerEntry>,
    pub protocols: Protocols,
}

pub fn unit_manifest(spec: &SpecDocument, partition: &Partition, unit: &str) -> Option<UnitManifest> {
    let g = &spec.workflow;
    let index = partition.index_of(unit)?;
    let members: BTreeSet<String> = partition.units[index].members.clone();
    let base = spec.deployment.ports.base;

    let agents: Vec<AgentDecl> = g
        .agents
        .iter()
        .filter(|a| members.contains(&a.name))
        .map(|a| AgentDecl { model: spec.model_of(&a.name).unwrap_or(&a.model).to_string(), ..a.clone() })
        .collect();
    let model_names: BTreeSet<&str> = agents.iter().map(|a| a.model.as_str()).collect();
    let models = g
        .models
        .iter()
        .filter(|m| model_names.contains(m.name.as_str()))
        .map(|m| {
            let mut m = m.clone();
            m.responses.retain(|agent, _| members.contains(agent));
            m
        })
        .collect();
    let tool_names: BTreeSet<&str> = agents.iter().flat_map(|a| a.tools.iter().map(String::as_str)).collect();
    let tools = g.tools.iter().filter(|t| tool_names.contains(t.name.as_str())).cloned().collect();
    let routes = g.edges.iter().filter(|e| members.contains(&e.from)).cloned().collect();
    let joins = join_nodes(g)
        .into_iter()
        .filter(|j| members.contains(j))
        .map(|j| {
            let sources: BTreeSet<String> = g.in_edges(&j).map(|e| e.from.clone()).collect();
            (j, sources.into_iter().collect())
        })
        .collect();
    let peers = unit_peers(g, partition)
        .remove(unit)
        .unwrap_or_default()
        .into_iter()
        .filter_map(|peer| {
            let i = partition.index_of(&peer)?;
            let agents = partition.units[i].members.iter().cloned().collect();
            Some((peer, PeerEntry { port: base + i as u16, agents }))
        })
        .collect();
    Some(UnitManifest {
        unit: unit.to_string(),
        members: members.into_iter().collect(),
        agents,
        models,
        tools,
        routes,
        joins,
        entry: g.entry.clone().unwrap_or_default(),
        assignment: partition.assignment.clone(),
        port: base + index as u16,
        peers,
        protocols: spec.deployment.protocols,
    })
}
