use proptest::prelude::*;
use serde_json::{json, Value};

use super::*;
use crate::graph::{AgentDecl, EdgeKind, ModelDecl};
use crate::runtime::Profile;

const SAMPLE: &[u8] = include_bytes!("../../../../specs/weather_news.dmas.json");

fn doc_json() -> Value {
    serde_json::from_slice(SAMPLE).unwrap()
}

fn load_value(v: &Value) -> Result<SpecDocument, SpecError> {
    load_spec(serde_json::to_string(v).unwrap().as_bytes())
}

#[test]
fn sample_file_loads() {
    let doc = load_spec(SAMPLE).unwrap();
    assert_eq!(doc.workflow.agents.len(), 2);
    assert_eq!(doc.deployment.protocols.agent_protocol, AgentProtocol::A2aLite);
    assert_eq!(doc.workflow.entry.as_deref(), Some("weather"));
}

#[test]
fn defaults_are_filled_in() {
    let mut v = doc_json();
    v["deployment"] = json!({"units": [{"name": "all", "members": ["weather", "news"]}]});
    let doc = load_value(&v).unwrap();
    let d = &doc.deployment;
    assert_eq!(d.units.as_ref().unwrap()[0].replicas, 1);
    assert_eq!(d.units.as_ref().unwrap()[0].target, Target::Container);
    assert_eq!(d.protocols, Protocols { agent_protocol: AgentProtocol::Inmem, tool_protocol: ToolProtocol::Inproc });
    assert_eq!(doc.mem_mb("weather"), 256);
    assert_eq!(d.ports.base, 9000);
    assert_eq!(d.base_image, DEFAULT_BASE_IMAGE);

    let mut v = doc_json();
    v["workflow"].as_object_mut().unwrap().remove("entry");
    v.as_object_mut().unwrap().remove("deployment");
    assert_eq!(load_value(&v).unwrap().workflow.entry.as_deref(), Some("weather"));
}

#[test]
fn empty_workflow_is_rejected() {
    let v = json!({"version": 1, "workflow": {}, "deployment": {}});
    assert_eq!(
        load_value(&v).unwrap_err(),
        SpecError::Schema { path: "workflow.agents".into(), message: "empty".into() }
    );
}

#[test]
fn dangling_unit_member() {
    let mut v = doc_json();
    v["deployment"]["units"][0]["members"] = json!(["ghost"]);
    let err = load_value(&v).unwrap_err();
    assert_eq!(err, SpecError::CrossRef { path: "deployment.units[0].members".into(), name: "ghost".into() });
    assert_eq!(err.to_string(), "cross-reference error: deployment.units[0].members: ghost");
}

#[test]
fn parse_version_and_key_errors() {
    match load_spec(b"{\n  \"version\": 1,\n  oops\n}").unwrap_err() {
        SpecError::Parse { line, column, .. } => assert_eq!((line, column), (3, 3)),
        other => panic!("{other:?}"),
    }
    let mut v = doc_json();
    v["version"] = json!(2);
    assert_eq!(load_value(&v).unwrap_err(), SpecError::Version("2".into()));
    let mut v = doc_json();
    v["extras"] = json!({});
    assert_eq!(load_value(&v).unwrap_err().locator(), Some("extras"));
    let mut v = doc_json();
    v["deployment"]["protocols"]["agent_protocol"] = json!("carrier_pigeon");
    assert_eq!(load_value(&v).unwrap_err().locator(), Some("deployment.protocols.agent_protocol"));
    let mut v = doc_json();
    v["deployment"]["unknown"] = json!(1);
    assert_eq!(load_value(&v).unwrap_err().locator(), Some("deployment.unknown"));
}

#[test]
fn deployment_invariants() {
    let cases: Vec<(Value, &str)> = vec![
        (json!({"units": [{"name": "a", "members": ["weather"], "replicas": 0}, {"name": "b", "members": ["news"]}]}), "deployment.units[0].replicas"),
        (json!({"units": [{"name": "a", "members": ["weather"]}, {"name": "b", "members": ["weather", "news"]}]}), "deployment.units[1].members"),
        (json!({"units": [{"name": "a", "members": ["weather"]}, {"name": "a", "members": ["news"]}]}), "deployment.units[1].name"),
        (json!({"constraints": {"colocate": [["weather", "news"]], "separate": [["news", "weather"]]}}), "deployment.constraints.separate[0]"),
        (json!({"constraints": {"max_units": 0}}), "deployment.constraints.max_units"),
        (json!({"resources": {"weather": {"mem_mb": 0}}}), "deployment.resources.weather.mem_mb"),
        (json!({"resources": {"ghost": {"mem_mb": 5}}}), "deployment.resources"),
        (json!({"model_bindings": {"news": "m9"}}), "deployment.model_bindings.news"),
        (json!({"ports": {"base": 80}}), "deployment.ports.base"),
        (json!({"ports": {"base": 65535}}), "deployment.ports.base"),
    ];
    for (dep, path) in cases {
        let mut v = doc_json();
        v["deployment"] = dep.clone();
        let err = load_value(&v).unwrap_err();
        assert_eq!(err.locator(), Some(path), "{dep}: {err}");
    }
}

#[test]
fn deployment_override_replaces_section() {
    let mut v = doc_json();
    v["deployment"] = json!({"units": [{"name": "x", "members": ["ghost"]}]});
    let spec = serde_json::to_vec(&v).unwrap();
    assert!(load_spec(&spec).is_err());
    let doc = load_spec_with_deployment(&spec, br#"{"protocols": {"agent_protocol": "http_rpc"}}"#).unwrap();
    assert_eq!(doc.deployment.protocols.agent_protocol, AgentProtocol::HttpRpc);
    assert!(doc.deployment.units.is_none());
    let err = load_deployment(br#"{"ports": {"base": "x"}}"#).unwrap_err();
    assert_eq!(err.locator(), Some("deployment.ports.base"));
}

#[test]
fn save_is_canonical_and_round_trips() {
    let doc = load_spec(SAMPLE).unwrap();
    let text = save_spec(&doc);
    assert!(text.ends_with("}\n"));
    assert!(text.starts_with("{\n  \"deployment\": {"));
    let again = load_spec(text.as_bytes()).unwrap();
    assert_eq!(again, doc);
    assert_eq!(save_spec(&again), text);
    assert_eq!(save_spec(&load_spec(SAMPLE).unwrap()), text);
}

#[test]
fn rename_touches_only_lines_with_the_names() {
    let doc = load_spec(SAMPLE).unwrap();
    let before = save_spec(&doc);
    let renamed = String::from_utf8(SAMPLE.to_vec()).unwrap().replace("\"news\"", "\"press\"");
    let after = save_spec(&load_spec(renamed.as_bytes()).unwrap());
    let (a, b): (Vec<&str>, Vec<&str>) = (before.lines().collect(), after.lines().collect());
    assert_eq!(a.len(), b.len());
    let changed: Vec<(&str, &str)> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, y)| (*x, *y)).collect();
    assert!(!changed.is_empty());
    for (x, y) in changed {
        assert!(x.contains("news") && y.contains("press"), "{x} / {y}");
    }
}

#[test]
fn profile_round_trip_and_errors() {
    let mut p = Profile::default();
    p.set_edge("weather", "news", 3, 1200);
    let text = save_profile(&p);
    assert_eq!(load_profile(text.as_bytes()).unwrap(), p);
    assert!(text.contains("\"weather->news\""), "{text}");
    let neg = br#"{"edges": {"weather->news": {"count": 3, "bytes": -1}}, "nodes": {}}"#;
    assert_eq!(load_profile(neg).unwrap_err().locator(), Some("edges.weather->news.bytes"));
    let bad = br#"{"edges": {}, "nodes": {"a": {"invocations": 1, "total_ms": -2.0}}}"#;
    assert_eq!(load_profile(bad).unwrap_err().locator(), Some("nodes.a.total_ms"));
    let empty = load_profile(br#"{"edges": {}, "nodes": {}}"#).unwrap();
    assert_eq!(empty, Profile::default());
    assert_eq!(empty.total_messages(), 0);
}

#[test]
fn builder_and_file_agree() {
    let mut g = crate::graph::WorkflowGraph::new();
    g.add_model(ModelDecl::mock("gpt-4o")).unwrap();
    g.add_agent(AgentDecl::new("weather", "gpt-4o", "Report the weather.")).unwrap();
    g.add_agent(AgentDecl::new("news", "gpt-4o", "Write a news brief.")).unwrap();
    g.connect("weather", "news", EdgeKind::Sequential, None).unwrap();
    let doc = SpecDocument::new(g, DeploymentSpec::default());
    assert_eq!(load_spec(save_spec(&doc).as_bytes()).unwrap(), doc);
    assert_eq!(weather_news_spec(), doc);
}

/// Paths of required fields in the sample document.
fn required_paths(v: &Value) -> Vec<(Vec<PathItem>, String)> {
    let mut out = vec![(vec![PathItem::Key("version".into())], "version".to_string())];
    let arrays = [("agents", vec!["name", "model"]), ("edges", vec!["from", "to", "kind"]), ("models", vec!["name", "backend"]), ("tools", vec!["name", "handler"])];
    for (array, fields) in arrays {
        for (i, _) in v["workflow"][array].as_array().unwrap().iter().enumerate() {
            for f in &fields {
                out.push((
                    vec![PathItem::Key("workflow".into()), PathItem::Key(array.into()), PathItem::Index(i), PathItem::Key((*f).into())],
                    format!("workflow.{array}[{i}].{f}"),
                ));
            }
        }
    }
    for (i, _) in v["deployment"]["units"].as_array().unwrap().iter().enumerate() {
        for f in ["name", "members"] {
            out.push((
                vec![PathItem::Key("deployment".into()), PathItem::Key("units".into()), PathItem::Index(i), PathItem::Key(f.into())],
                format!("deployment.units[{i}].{f}"),
            ));
        }
    }
    out
}

#[derive(Debug, Clone)]
enum PathItem {
    Key(String),
    Index(usize),
}

fn corrupt(v: &mut Value, path: &[PathItem], remove: bool) {
    let (last, parent) = path.split_last().unwrap();
    let mut cur = v;
    for p in parent {
        cur = match p {
            PathItem::Key(k) => &mut cur[k.as_str()],
            PathItem::Index(i) => &mut cur[*i],
        };
    }
    let PathItem::Key(k) = last else { unreachable!() };
    let obj = cur.as_object_mut().unwrap();
    if remove {
        obj.remove(k);
    } else {
        obj.insert(k.clone(), json!({"corrupted": [1, 2]}));
    }
}

proptest! {
    #[test]
    fn corrupted_field_is_located(index in 0usize..64, remove in any::<bool>()) {
        let base = doc_json();
        let paths = required_paths(&base);
        let (path, text) = &paths[index % paths.len()];
        let mut v = base.clone();
        corrupt(&mut v, path, remove);
        let err = load_value(&v).unwrap_err();
        let locator = err.locator().unwrap_or_else(|| panic!("no locator for {text}: {err}")).to_string();
        prop_assert!(text.starts_with(&locator), "{} does not prefix {} ({})", locator, text, err);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..2048)) {
        let _ = load_spec(&bytes);
        let _ = load_profile(&bytes);
    }

    #[test]
    fn mutated_documents_never_panic(pos in 0usize..4096, byte in any::<u8>()) {
        let mut bytes = SAMPLE.to_vec();
        let i = pos % bytes.len();
        bytes[i] = byte;
        let _ = load_spec(&bytes);
    }
}
