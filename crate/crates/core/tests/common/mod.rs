#![allow(dead_code, clippy::result_large_err)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dmas_forge::graph::{self, AgentDecl, EdgeKind, ModelDecl, ScriptedReply, ToolDecl, ToolHandler, WorkflowGraph};
use dmas_forge::protocol::Part;
use dmas_forge::runtime::{run, RunFailure, RunMode, RunOptions, Trace};
use dmas_forge::spec::{AgentProtocol, DeploymentSpec, Protocols, SpecDocument, ToolProtocol, UnitDecl};
use dmas_forge::Message;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::json;

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_dmasf"))
}

pub fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn sample_path() -> PathBuf {
    root().join("specs/weather_news.dmas.json")
}

pub fn dmasf(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env_remove("DMASF_LOG").output().expect("dmasf runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn opts() -> RunOptions {
    RunOptions { unit_binary: Some(bin()), ..RunOptions::default() }
}

pub fn run_in(spec: &SpecDocument, input: &str, mode: RunMode, opts: &RunOptions) -> Result<Trace, RunFailure> {
    run(spec, &Message::user_text(input), mode, opts).map(|(t, _)| t)
}

const WORDS: [&str; 8] = ["sun", "rain", "wind", "fog", "snow", "hail", "heat", "cold"];

fn reply(rng: &mut impl Rng, routes: &[String], tool: bool) -> ScriptedReply {
    let mut parts = vec![Part::text(format!("{} {}", WORDS.choose(rng).unwrap(), rng.random_range(0..1000)))];
    if let Some(label) = routes.choose(rng) {
        parts.push(Part::data(json!({"route": label})));
    }
    if tool && rng.random_bool(0.3) {
        parts.push(Part::data(json!({"tool_call": {"tool": "shout", "arguments": {"text": "x"}}})));
    }
    ScriptedReply::Parts(parts)
}

/// A random acyclic workflow of 1..=`max_agents` scripted agents where every
/// agent is reachable from `a0`.
pub fn random_workflow(rng: &mut impl Rng, max_agents: usize) -> WorkflowGraph {
    loop {
        let n = rng.random_range(1..=max_agents);
        let names: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 1..n {
            out[rng.random_range(0..i)].push(i);
        }
        for _ in 0..rng.random_range(0..=n) {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a < b && !out[a].contains(&b) {
                out[a].push(b);
            }
        }
        let kinds: Vec<Option<EdgeKind>> = out
            .iter()
            .map(|targets| match targets.len() {
                0 => None,
                1 if rng.random_bool(0.7) => Some(EdgeKind::Sequential),
                1 => Some(EdgeKind::Conditional),
                _ if rng.random_bool(0.5) => Some(EdgeKind::Parallel),
                _ => Some(EdgeKind::Conditional),
            })
            .collect();
        let tooled: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();

        let mut model = ModelDecl::scripted("s");
        for i in 0..n {
            let routes: Vec<String> = match kinds[i] {
                Some(EdgeKind::Conditional) => (0..out[i].len()).map(|k| format!("l{k}")).collect(),
                _ => Vec::new(),
            };
            let replies = (0..16).map(|_| reply(rng, &routes, tooled[i])).collect();
            model = model.with_responses(&names[i], replies);
        }
        let mut g = WorkflowGraph::new();
        g.add_model(model).unwrap();
        g.add_tool(ToolDecl::new("shout", ToolHandler::BuiltinUpper).with_capability("net:web")).unwrap();
        for i in 0..n {
            let mut a = AgentDecl::new(names[i].as_str(), "s", if rng.random_bool(0.5) { "Act." } else { "" });
            if tooled[i] {
                a = a.with_tool("shout");
            }
            g.add_agent(a).unwrap();
        }
        for i in 0..n {
            for (k, &t) in out[i].iter().enumerate() {
                let kind = kinds[i].unwrap();
                let label = (kind == EdgeKind::Conditional).then(|| format!("l{k}"));
                g.connect(&names[i], &names[t], kind, label.as_deref()).unwrap();
            }
        }
        if graph::validate(&g).is_empty() {
            return g;
        }
    }
}

pub fn random_protocols(rng: &mut impl Rng) -> Protocols {
    Protocols {
        agent_protocol: *[AgentProtocol::Inmem, AgentProtocol::HttpRpc, AgentProtocol::A2aLite].choose(rng).unwrap(),
        tool_protocol: *[ToolProtocol::Inproc, ToolProtocol::McpLite].choose(rng).unwrap(),
    }
}

pub fn with_units(g: &WorkflowGraph, protocols: Protocols, blocks: Vec<Vec<String>>) -> SpecDocument {
    let units = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| UnitDecl::new(&format!("unit-{i}"), &b.iter().map(String::as_str).collect::<Vec<_>>()))
        .collect();
    let deployment = DeploymentSpec { units: Some(units), protocols, ..DeploymentSpec::default() };
    SpecDocument::new(g.clone(), deployment)
}

pub fn singleton_blocks(g: &WorkflowGraph) -> Vec<Vec<String>> {
    g.agent_names().into_iter().map(|a| vec![a]).collect()
}

pub fn random_blocks(rng: &mut impl Rng, g: &WorkflowGraph) -> Vec<Vec<String>> {
    let names: Vec<String> = g.agent_names().into_iter().collect();
    let k = rng.random_range(1..=names.len());
    let mut blocks: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        // The first k agents open the k blocks so none is empty.
        let b = if i < k { i } else { rng.random_range(0..k) };
        blocks.entry(b).or_default().push(name.clone());
    }
    blocks.into_values().collect()
}

/// Outcome reduced to what must not depend on the deployment.
pub fn outcome(r: &Result<Trace, RunFailure>) -> (String, String) {
    match r {
        Ok(t) => ("ok".into(), dmas_forge::runtime::canonical_trace(t)),
        Err(f) => (format!("{:?}", f.error), dmas_forge::runtime::canonical_trace(&f.trace)),
    }
}
