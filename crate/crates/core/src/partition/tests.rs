use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::graph::{AgentDecl, EdgeKind, ModelDecl, WorkflowGraph};
use crate::spec::{DeploymentSpec, Resources, UnitDecl};

fn chain(names: &[&str]) -> WorkflowGraph {
    let mut g = WorkflowGraph::new();
    g.add_model(ModelDecl::mock("m")).unwrap();
    for n in names {
        g.add_agent(AgentDecl::new(*n, "m", "")).unwrap();
    }
    for w in names.windows(2) {
        g.connect(w[0], w[1], EdgeKind::Sequential, None).unwrap();
    }
    g
}

fn spec(names: &[&str]) -> SpecDocument {
    SpecDocument::new(chain(names), DeploymentSpec::default())
}

fn sample() -> SpecDocument {
    crate::spec::weather_news_spec()
}

fn pair(a: &str, b: &str) -> [String; 2] {
    [a.to_string(), b.to_string()]
}

/// Independent oracle: every set partition by recursive block assignment.
fn all_partitions(names: &[String]) -> Vec<Vec<Vec<String>>> {
    fn go(i: usize, names: &[String], blocks: &mut Vec<Vec<String>>, out: &mut Vec<Vec<Vec<String>>>) {
        if i == names.len() {
            out.push(blocks.clone());
            return;
        }
        for b in 0..blocks.len() {
            blocks[b].push(names[i].clone());
            go(i + 1, names, blocks, out);
            blocks[b].pop();
        }
        blocks.push(vec![names[i].clone()]);
        go(i + 1, names, blocks, out);
        blocks.pop();
    }
    let mut out = Vec::new();
    go(0, names, &mut Vec::new(), &mut out);
    out
}

/// Hand-written cost formula over the profile's edge list.
fn oracle_cost(blocks: &[Vec<String>], profile: &Profile, cm: &CostModel) -> f64 {
    let block_of = |a: &str| blocks.iter().position(|b| b.iter().any(|x| x == a));
    let mut c = blocks.len() as f64 * cm.unit_fixed_cost;
    for (k, s) in &profile.edges {
        if block_of(&k.from) != block_of(&k.to) {
            c += s.count as f64 * cm.remote_latency_ms + s.bytes as f64 * cm.remote_byte_cost;
        }
    }
    c
}

#[test]
fn explicit_units() {
    let mut s = sample();
    s.deployment.units = Some(vec![UnitDecl::new("u_a", &["weather"]), UnitDecl::new("u_b", &["news"])]);
    let (p, renames) = partition_explicit(&s).unwrap();
    assert_eq!(p.len(), 2);
    assert_eq!(p.canonical_form(), vec![vec!["news".to_string()], vec!["weather".to_string()]]);
    assert_eq!(renames["u_a"], "u1");
    assert_eq!(renames["u_b"], "u0");

    s.deployment.units = Some(vec![UnitDecl::new("u_a", &["weather"])]);
    assert_eq!(partition_explicit(&s).unwrap_err(), PartitionError::IncompleteCover(vec!["news".into()]));

    s.deployment.units = Some(vec![UnitDecl::new("both", &["weather", "news"])]);
    s.deployment.constraints.separate = vec![pair("weather", "news")];
    assert_eq!(partition_explicit(&s).unwrap_err(), PartitionError::ConstraintViolation(vec![Violation::Separate("weather".into(), "news".into())]));
}

#[test]
fn default_partition() {
    let p = partition_default(&sample()).unwrap();
    assert_eq!(p.units[0].name, "u0");
    assert_eq!(p.units[0].members, BTreeSet::from(["news".to_string()]));
    assert_eq!(p.assignment["weather"], "u1");
    assert_eq!(partition_default(&spec(&["solo"])).unwrap().len(), 1);
    let mut s = spec(&["a", "b"]);
    s.deployment.constraints.colocate = vec![pair("a", "b")];
    assert!(matches!(partition_default(&s), Err(PartitionError::ConstraintViolation(_))));
}

#[test]
fn cost_formula() {
    let mut profile = Profile::default();
    profile.set_edge("weather", "news", 3, 1200);
    let split = partition_default(&sample()).unwrap();
    let mono = Partition::monolith(["weather", "news"]);
    let cm = CostModel::new(10.0, 0.01, 0.0).unwrap();
    assert_eq!(partition_cost(&mono, &profile, &cm), 0.0);
    let expected = 3.0 * 10.0 + 1200.0 * 0.01;
    assert!((partition_cost(&split, &profile, &cm) - expected).abs() < 1e-9);
    assert!((expected - 42.0).abs() < 1e-9);
    let cm = CostModel::new(10.0, 0.01, 5.0).unwrap();
    assert!((partition_cost(&split, &profile, &cm) - (expected + 2.0 * 5.0)).abs() < 1e-9);
    assert!((partition_cost(&split, &profile, &cm) - 52.0).abs() < 1e-9);
    assert!(CostModel::new(-1.0, 0.0, 0.0).is_err());
    assert!(CostModel::new(f64::NAN, 0.0, 0.0).is_err());
}

#[test]
fn heavy_traffic_merges() {
    let s = spec(&["a", "b"]);
    let mut profile = Profile::default();
    profile.set_edge("a", "b", 1000, 0);
    let cm = CostModel::default();
    let got = optimize_partition(&s, &profile, &cm).unwrap();
    assert_eq!(got.len(), 1);
    let names: Vec<String> = vec!["a".into(), "b".into()];
    let best = all_partitions(&names)
        .into_iter()
        .min_by(|x, y| oracle_cost(x, &profile, &cm).total_cmp(&oracle_cost(y, &profile, &cm)))
        .unwrap();
    assert_eq!(best.len(), 1);
    assert_eq!(brute_force_partition(&s, &profile, &cm).unwrap(), got);

    let mut s = spec(&["a", "b"]);
    s.deployment.constraints.separate = vec![pair("a", "b")];
    assert_eq!(optimize_partition(&s, &profile, &cm).unwrap().len(), 2);
}

#[test]
fn chain_with_two_units() {
    let mut s = spec(&["a", "b", "c", "d"]);
    s.deployment.constraints.max_units = Some(2);
    s.deployment.constraints.unit_mem_cap_mb = Some(512);
    let mut profile = Profile::default();
    for (x, y) in [("a", "b"), ("b", "c"), ("c", "d")] {
        profile.set_edge(x, y, 10, 100);
    }
    let cm = CostModel::default();
    let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let two_blocks: Vec<_> = all_partitions(&names).into_iter().filter(|p| p.len() == 2).collect();
    assert_eq!(two_blocks.len(), 7);
    let fits: Vec<_> = two_blocks.into_iter().filter(|p| p.iter().all(|b| b.len() <= 2)).collect();
    let min = fits.iter().map(|p| oracle_cost(p, &profile, &cm)).fold(f64::INFINITY, f64::min);
    let winners: Vec<_> = fits.iter().filter(|p| oracle_cost(p, &profile, &cm) <= min + 1e-9).collect();
    assert_eq!(winners.len(), 1);
    let expected = Partition::from_blocks(winners[0].clone());
    assert_eq!(expected.canonical_form(), vec![vec!["a", "b"], vec!["c", "d"]]);
    assert_eq!(optimize_partition(&s, &profile, &cm).unwrap(), expected);
    assert_eq!(brute_force_partition(&s, &profile, &cm).unwrap(), expected);
}

#[test]
fn brute_force_edge_cases() {
    let cm = CostModel::default();
    let one = brute_force_partition(&spec(&["x"]), &Profile::default(), &cm).unwrap();
    assert_eq!(one.canonical_form(), vec![vec!["x"]]);

    let s = spec(&["a", "b", "c"]);
    let fixed = CostModel::new(1.0, 0.0, 2.0).unwrap();
    assert_eq!(brute_force_partition(&s, &Profile::default(), &fixed).unwrap().len(), 1);

    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let least = all_partitions(&names).into_iter().map(|b| Partition::from_blocks(b).canonical_form()).min().unwrap();
    let tie = brute_force_partition(&s, &Profile::default(), &cm).unwrap();
    assert_eq!(tie.canonical_form(), least);
    assert_eq!(optimize_partition(&s, &Profile::default(), &cm).unwrap(), tie);

    let big: Vec<String> = (0..11).map(|i| format!("a{i:02}")).collect();
    let refs: Vec<&str> = big.iter().map(String::as_str).collect();
    assert_eq!(brute_force_partition(&spec(&refs), &Profile::default(), &cm).unwrap_err(), PartitionError::TooLarge(11));
}

#[test]
fn conflicts_are_reported_before_search() {
    let mut s = spec(&["a", "b", "c"]);
    s.deployment.constraints.colocate = vec![pair("a", "b"), pair("b", "c")];
    s.deployment.constraints.separate = vec![pair("a", "c")];
    let err = optimize_partition(&s, &Profile::default(), &CostModel::default()).unwrap_err();
    assert_eq!(
        err,
        PartitionError::Infeasible(vec![
            Violation::Colocate("a".into(), "b".into()),
            Violation::Colocate("b".into(), "c".into()),
            Violation::Separate("a".into(), "c".into()),
        ])
    );

    let mut s = spec(&["a", "b"]);
    s.deployment.constraints.colocate = vec![pair("a", "b")];
    s.deployment.constraints.unit_mem_cap_mb = Some(300);
    assert!(matches!(
        optimize_partition(&s, &Profile::default(), &CostModel::default()),
        Err(PartitionError::Infeasible(v)) if matches!(v[0], Violation::MemCap { mem_mb: 512, cap_mb: 300, .. })
    ));

    let mut s = spec(&["a", "b", "c"]);
    s.deployment.constraints.max_units = Some(1);
    s.deployment.constraints.separate = vec![pair("a", "c")];
    assert!(matches!(optimize_partition(&s, &Profile::default(), &CostModel::default()), Err(PartitionError::Infeasible(_))));
}

#[test]
fn memory_weights_count() {
    let mut s = spec(&["a", "b", "c"]);
    s.deployment.resources.insert("a".into(), Resources { mem_mb: 900 });
    s.deployment.constraints.unit_mem_cap_mb = Some(1000);
    let mut profile = Profile::default();
    profile.set_edge("a", "b", 50, 0);
    profile.set_edge("b", "c", 50, 0);
    let p = optimize_partition(&s, &profile, &CostModel::default()).unwrap();
    assert!(check_feasible(&s, &p).is_empty());
    assert_eq!(p.canonical_form(), vec![vec!["a"], vec!["b", "c"]]);
}

fn random_instance() -> impl Strategy<Value = (SpecDocument, Profile, CostModel)> {
    (2usize..=6)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec((0..n, 0..n, 0u64..50, 0u64..4000), 0..10),
                proptest::option::of(1u32..=n as u32),
                proptest::option::of(1u64..=4),
                proptest::collection::vec((0..n, 0..n), 0..2),
                proptest::collection::vec((0..n, 0..n), 0..2),
                (0.0f64..5.0, 0.0f64..0.01, 0.0f64..20.0),
            )
        })
        .prop_map(|(n, edges, max_units, cap_agents, colocate, separate, (lat, byte, fixed))| {
            let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let mut s = spec(&refs);
            s.deployment.constraints.max_units = max_units;
            s.deployment.constraints.unit_mem_cap_mb = cap_agents.map(|k| k * 256);
            s.deployment.constraints.colocate =
                colocate.into_iter().filter(|(a, b)| a != b).map(|(a, b)| pair(&names[a], &names[b])).collect();
            s.deployment.constraints.separate =
                separate.into_iter().filter(|(a, b)| a != b).map(|(a, b)| pair(&names[a], &names[b])).collect();
            let mut profile = Profile::default();
            for (a, b, c, bytes) in edges {
                if a != b {
                    profile.set_edge(&names[a], &names[b], c, bytes);
                }
            }
            (s, profile, CostModel::new(lat, byte, fixed).unwrap())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn optimizer_is_feasible_near_optimal_and_deterministic((s, profile, cm) in random_instance()) {
        let exact = brute_force_partition(&s, &profile, &cm);
        let greedy = optimize_partition(&s, &profile, &cm);
        match (exact, greedy) {
            (Ok(e), Ok(g)) => {
                prop_assert!(check_feasible(&s, &g).is_empty());
                let (ce, cg) = (partition_cost(&e, &profile, &cm), partition_cost(&g, &profile, &cm));
                prop_assert!(cg <= 1.25 * ce + 1e-9, "greedy {} vs optimum {}", cg, ce);
                prop_assert_eq!(optimize_partition(&s, &profile, &cm).unwrap(), g);
                let blocks = e.canonical_form();
                prop_assert!((oracle_cost(&blocks, &profile, &cm) - ce).abs() <= 1e-9 * (1.0 + ce));
            }
            (Err(_), Err(_)) => {}
            (e, g) => prop_assert!(false, "disagree on feasibility: {:?} vs {:?}", e, g),
        }
    }

    #[test]
    fn scaling_traffic_keeps_the_partition((s, profile, cm) in random_instance(), k in 1u64..50) {
        let cm = CostModel { unit_fixed_cost: 0.0, ..cm };
        let a = optimize_partition(&s, &profile, &cm);
        let b = optimize_partition(&s, &profile.scaled(k), &cm);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn brute_force_matches_oracle((s, profile, cm) in random_instance()) {
        let names: Vec<String> = s.workflow.agent_names().into_iter().collect();
        let mut best: Option<(f64, Vec<Vec<String>>)> = None;
        for blocks in all_partitions(&names) {
            let p = Partition::from_blocks(blocks);
            if !check_feasible(&s, &p).is_empty() {
                continue;
            }
            let form = p.canonical_form();
            let c = oracle_cost(&form, &profile, &cm);
            let replace = match &best {
                None => true,
                Some((bc, bf)) => c < bc - 1e-9 * bc.max(1.0) || ((c - bc).abs() <= 1e-9 * bc.max(1.0) && form < *bf),
            };
            if replace {
                best = Some((c, form));
            }
        }
        match (best, brute_force_partition(&s, &profile, &cm)) {
            (Some((_, form)), Ok(p)) => prop_assert_eq!(p.canonical_form(), form),
            (None, Err(_)) => {}
            (o, b) => prop_assert!(false, "oracle {:?} vs brute {:?}", o, b),
        }
    }
}
