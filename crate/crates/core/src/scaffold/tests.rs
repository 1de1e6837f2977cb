use std::collections::BTreeSet;

use super::*;
use crate::graph::{AgentDecl, EdgeKind, ModelDecl, ToolDecl, ToolHandler, WorkflowGraph};
use crate::spec::{load_spec, DeploymentSpec, UnitDecl};

fn sample() -> SpecDocument {
    load_spec(include_bytes!("../../../../specs/weather_news.dmas.json")).unwrap()
}

fn monolith_of(mut s: SpecDocument) -> SpecDocument {
    let all: Vec<String> = s.workflow.agent_names().into_iter().collect();
    let refs: Vec<&str> = all.iter().map(String::as_str).collect();
    s.deployment.units = Some(vec![UnitDecl::new("all", &refs)]);
    s
}

fn statuses(diff: &BTreeMap<String, ArtifactChange>) -> BTreeMap<&str, &'static str> {
    diff.iter()
        .map(|(p, c)| {
            let s = match c {
                ArtifactChange::Added => "added",
                ArtifactChange::Removed => "removed",
                ArtifactChange::Changed { .. } => "changed",
                ArtifactChange::Unchanged => "unchanged",
            };
            (p.as_str(), s)
        })
        .collect()
}

#[test]
fn two_unit_plan() {
    let plan = compile(&sample()).unwrap();
    assert_eq!(plan.ports, BTreeMap::from([("u0".to_string(), 9000), ("u1".to_string(), 9001)]));
    assert_eq!(
        plan.channels,
        vec![ChannelDecl { from_unit: "u1".into(), to_unit: "u0".into(), protocol: AgentProtocol::A2aLite }]
    );
    let files = plan.files();
    let paths: BTreeSet<&str> = files.keys().map(String::as_str).collect();
    let expected: BTreeSet<&str> = [
        "compose.yaml",
        "plan.json",
        "policies/u0.policy.json",
        "policies/u1.policy.json",
        "run_local.sh",
        "units/u0/Dockerfile",
        "units/u0/manifest.json",
        "units/u1/Dockerfile",
        "units/u1/manifest.json",
    ]
    .into();
    assert_eq!(paths, expected);
    assert!(plan.artifacts["compose.yaml"].contains("networks:\n  net-u0-u1: {}\n"));
    let m = plan.manifest("u1").unwrap();
    assert_eq!(m.peers["u0"].port, 9000);
    assert_eq!(m.port, 9001);
}

#[test]
fn plan_json_lists_digests() {
    let plan = compile(&sample()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&plan.plan_json()).unwrap();
    let listed = v["artifacts"].as_object().unwrap();
    assert_eq!(listed.len(), plan.artifacts.len());
    for (path, content) in &plan.artifacts {
        assert_eq!(listed[path].as_str().unwrap(), sha256_hex(content.as_bytes()), "{path}");
    }
    assert_eq!(
        sha256_hex(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}

#[test]
fn monolith_has_no_network() {
    let plan = compile(&monolith_of(sample())).unwrap();
    assert_eq!(plan.partition.len(), 1);
    assert!(plan.channels.is_empty());
    let compose = &plan.artifacts["compose.yaml"];
    assert!(!compose.contains("networks"), "{compose}");
    assert!(!compose.contains("depends_on"));
    assert!(compose.contains("DMASF_PEERS: '{}'"));
}

#[test]
fn compile_is_deterministic() {
    let a = compile(&sample()).unwrap();
    let b = compile(&sample()).unwrap();
    assert_eq!(a.files(), b.files());
    assert_eq!(a, b);
}

#[test]
fn replicas_become_services() {
    let mut s = sample();
    s.deployment.units.as_mut().unwrap()[1].replicas = 3;
    let plan = compile(&s).unwrap();
    assert_eq!(plan.replicas["u0"], 3);
    let compose = &plan.artifacts["compose.yaml"];
    for i in 0..3 {
        assert!(compose.contains(&format!("  u0-{i}:\n")), "{compose}");
    }
    assert!(!compose.contains("  u0:\n"));
    assert!(compose.contains("u0-0:8080,u0-1:8080,u0-2:8080"));
    assert!(compose.contains("    depends_on:\n      - u0-0\n      - u0-1\n      - u0-2\n"));
}

#[test]
fn identical_plans_diff_unchanged() {
    let plan = compile(&sample()).unwrap();
    let diff = diff_plan(&plan, &plan);
    assert_eq!(diff.len(), 9);
    assert!(diff.values().all(|c| *c == ArtifactChange::Unchanged));
    assert!(render_diff(&diff).lines().all(|l| l.starts_with("unchanged ")));
}

#[test]
fn merging_units_diff() {
    let split = compile(&sample()).unwrap();
    let merged = compile(&monolith_of(sample())).unwrap();
    let forward = diff_plan(&split, &merged);
    let st = statuses(&forward);
    assert_eq!(st["units/u1/manifest.json"], "removed");
    assert_eq!(st["units/u1/Dockerfile"], "removed");
    assert_eq!(st["policies/u1.policy.json"], "removed");
    assert_eq!(st["units/u0/manifest.json"], "changed");
    assert_eq!(st["units/u0/Dockerfile"], "unchanged");
    assert_eq!(st["compose.yaml"], "changed");
    assert_eq!(st["plan.json"], "changed");
    assert!(!st.values().any(|s| *s == "added"));
    let backward = diff_plan(&merged, &split);
    let back = statuses(&backward);
    assert_eq!(back["units/u1/manifest.json"], "added");
}

#[test]
fn port_base_change_diff() {
    let old = compile(&sample()).unwrap();
    let mut s = sample();
    s.deployment.ports.base = 9100;
    let new = compile(&s).unwrap();
    let diff = diff_plan(&old, &new);
    let st = statuses(&diff);
    for u in ["u0", "u1"] {
        assert_eq!(st[format!("units/{u}/manifest.json").as_str()], "changed");
        assert_eq!(st[format!("units/{u}/Dockerfile").as_str()], "unchanged");
        assert_eq!(st[format!("policies/{u}.policy.json").as_str()], "changed");
    }
    assert_eq!(st["compose.yaml"], "unchanged");
    assert_eq!(st["run_local.sh"], "changed");
    let ArtifactChange::Changed { diff: text } = &diff["units/u0/manifest.json"] else { unreachable!() };
    assert!(text.contains("-  \"port\": 9000") && text.contains("+  \"port\": 9100"), "{text}");
}

#[test]
fn emit_and_overwrite_rules() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let plan = compile(&sample()).unwrap();
    let first = emit(&plan, &out, false).unwrap();
    assert_eq!(first.written.len(), 9);
    for (path, content) in plan.files() {
        assert_eq!(fs::read_to_string(out.join(&path)).unwrap(), content);
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = fs::metadata(out.join("run_local.sh")).unwrap().permissions().mode();
        assert_eq!(mode & 0o111, 0o111);
    }

    let again = emit(&plan, &out, false).unwrap();
    assert!(again.written.is_empty());
    assert_eq!(again.unchanged.len(), 9);

    let merged = compile(&monolith_of(sample())).unwrap();
    assert!(matches!(emit(&merged, &out, false), Err(ScaffoldError::RefusesOverwrite(_))));
    let forced = emit(&merged, &out, true).unwrap();
    assert_eq!(
        forced.removed,
        vec!["policies/u1.policy.json", "units/u1/Dockerfile", "units/u1/manifest.json"]
    );
    assert!(!out.join("units/u1").exists());

    let other = dir.path().join("other");
    fs::create_dir_all(&other).unwrap();
    fs::write(other.join("keep.txt"), "mine").unwrap();
    assert!(matches!(emit(&plan, &other, false), Err(ScaffoldError::RefusesOverwrite(_))));
    assert_eq!(fs::read_to_string(other.join("keep.txt")).unwrap(), "mine");
}

fn hub_spec() -> SpecDocument {
    let mut g = WorkflowGraph::new();
    g.add_model(ModelDecl::mock("m")).unwrap();
    g.add_tool(ToolDecl::new("vault", ToolHandler::BuiltinEcho).with_capability("secret:API_TOKEN")).unwrap();
    g.add_agent(AgentDecl::new("hub", "m", "").with_tool("vault")).unwrap();
    for leaf in ["left", "right", "sink"] {
        g.add_agent(AgentDecl::new(leaf, "m", "")).unwrap();
    }
    g.connect("hub", "left", EdgeKind::Parallel, None).unwrap();
    g.connect("hub", "right", EdgeKind::Parallel, None).unwrap();
    g.connect("left", "sink", EdgeKind::Sequential, None).unwrap();
    g.connect("right", "sink", EdgeKind::Sequential, None).unwrap();
    let d = DeploymentSpec {
        units: Some(vec![UnitDecl::new("a", &["hub"]), UnitDecl::new("b", &["left"]), UnitDecl::new("c", &["right", "sink"])]),
        ..DeploymentSpec::default()
    };
    SpecDocument::new(g, d)
}

#[test]
fn channels_networks_and_peers_agree() {
    let plan = compile(&hub_spec()).unwrap();
    let compose = &plan.artifacts["compose.yaml"];
    let pairs: BTreeSet<(String, String)> = plan
        .channels
        .iter()
        .map(|c| {
            let (a, b) = (c.from_unit.clone(), c.to_unit.clone());
            if a < b { (a, b) } else { (b, a) }
        })
        .collect();
    let declared: BTreeSet<String> = compose
        .split("\nnetworks:\n")
        .nth(1)
        .unwrap()
        .lines()
        .map(|l| l.trim().trim_end_matches(": {}").to_string())
        .collect();
    let expected: BTreeSet<String> = pairs.iter().map(|(a, b)| format!("net-{a}-{b}")).collect();
    assert_eq!(declared, expected);
    for u in &plan.partition.units {
        let m = plan.manifest(&u.name).unwrap();
        let from_channels: BTreeSet<String> = pairs
            .iter()
            .filter_map(|(a, b)| if *a == u.name { Some(b.clone()) } else if *b == u.name { Some(a.clone()) } else { None })
            .collect();
        let peers: BTreeSet<String> = m.peers.keys().cloned().collect();
        assert_eq!(peers, from_channels, "{}", u.name);
        assert_eq!(plan.policies[&u.name].allowed_peers, from_channels);
    }
}

#[test]
fn secrets_are_referenced_not_embedded() {
    std::env::set_var("API_TOKEN", "hunter2-do-not-leak");
    let plan = compile(&hub_spec()).unwrap();
    for (path, content) in plan.files() {
        assert!(!content.contains("hunter2-do-not-leak"), "{path}");
    }
    let hub_unit = plan.partition.unit_of("hub").unwrap().to_string();
    assert!(plan.policies[&hub_unit].capabilities.contains("secret:API_TOKEN"));
    assert_eq!(plan.artifacts["compose.yaml"].matches("API_TOKEN: ${API_TOKEN}").count(), 1);
}
