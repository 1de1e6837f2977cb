use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{EdgeKind, WorkflowGraph};

/// Nodes reachable from `start` (inclusive) along directed edges.
pub fn reachable_from(g: &WorkflowGraph, start: &str) -> BTreeSet<String> {
    let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in &g.edges {
        adjacency.entry(e.from.as_str()).or_default().push(e.to.as_str());
    }
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([start]);
    seen.insert(start.to_string());
    while let Some(node) = queue.pop_front() {
        for next in adjacency.get(node).into_iter().flatten() {
            if seen.insert((*next).to_string()) {
                queue.push_back(next);
            }
        }
    }
    seen
}

/// Barrier nodes: nodes with more than one in-edge that are reachable from at
/// least two distinct successors of one parallel fanout. Such a node waits
/// for a message on every in-edge before it activates.
pub fn join_nodes(g: &WorkflowGraph) -> BTreeSet<String> {
    let mut indegree: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &g.edges {
        *indegree.entry(e.to.as_str()).or_default() += 1;
    }
    let mut joins = BTreeSet::new();
    for agent in &g.agents {
        if g.fanout(&agent.name) != Some(EdgeKind::Parallel) {
            continue;
        }
        let mut hits: BTreeMap<String, usize> = BTreeMap::new();
        for e in g.out_edges(&agent.name) {
            for node in reachable_from(g, &e.to) {
                *hits.entry(node).or_default() += 1;
            }
        }
        for (node, count) in hits {
            if count >= 2 && indegree.get(node.as_str()).copied().unwrap_or(0) >= 2 {
                joins.insert(node);
            }
        }
    }
    joins
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AgentDecl, ModelDecl};

    fn graph(nodes: &[&str], edges: &[(&str, &str, EdgeKind, Option<&str>)]) -> WorkflowGraph {
        let mut g = WorkflowGraph::new();
        g.add_model(ModelDecl::mock("m")).unwrap();
        for n in nodes {
            g.add_agent(AgentDecl::new(*n, "m", "")).unwrap();
        }
        for (a, b, k, l) in edges {
            g.connect(a, b, *k, *l).unwrap();
        }
        g
    }

    #[test]
    fn diamond_join() {
        use EdgeKind::*;
        let g = graph(
            &["p", "b", "c", "d"],
            &[("p", "b", Parallel, None), ("p", "c", Parallel, None), ("b", "d", Sequential, None), ("c", "d", Sequential, None)],
        );
        assert_eq!(join_nodes(&g), BTreeSet::from(["d".to_string()]));
    }

    #[test]
    fn conditional_merge_is_not_a_join() {
        use EdgeKind::*;
        let g = graph(
            &["r", "b", "c", "d"],
            &[
                ("r", "b", Conditional, Some("x")),
                ("r", "c", Conditional, Some("y")),
                ("b", "d", Sequential, None),
                ("c", "d", Sequential, None),
            ],
        );
        assert!(join_nodes(&g).is_empty());
    }

    #[test]
    fn uneven_branch_join() {
        use EdgeKind::*;
        let g = graph(&["p", "b", "d"], &[("p", "b", Parallel, None), ("p", "d", Parallel, None), ("b", "d", Sequential, None)]);
        assert_eq!(join_nodes(&g), BTreeSet::from(["d".to_string()]));
    }
}
