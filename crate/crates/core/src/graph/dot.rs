use super::{validate, EdgeKind, GraphError, WorkflowGraph};

fn dot_id(name: &str) -> String {
    let plain = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

/// Graphviz rendering. Nodes are sorted by name, edges keep insertion order.
pub fn export_dot(g: &WorkflowGraph) -> Result<String, GraphError> {
    let diagnostics = validate(g);
    if !diagnostics.is_empty() {
        return Err(GraphError::InvalidGraph(diagnostics));
    }
    if g.agents.is_empty() {
        return Ok("digraph g {}\n".to_string());
    }
    let mut out = String::from("digraph g {\n");
    let mut names: Vec<&str> = g.agents.iter().map(|a| a.name.as_str()).collect();
    names.sort_unstable();
    for name in names {
        if g.entry.as_deref() == Some(name) {
            out.push_str(&format!("  {} [shape=doublecircle];\n", dot_id(name)));
        } else {
            out.push_str(&format!("  {};\n", dot_id(name)));
        }
    }
    for e in &g.edges {
        let attrs = match (e.kind, &e.label) {
            (EdgeKind::Conditional, Some(label)) => format!(" [label={}]", dot_id_quoted(label)),
            (EdgeKind::Parallel, _) => " [style=bold]".to_string(),
            _ => String::new(),
        };
        out.push_str(&format!("  {} -> {}{};\n", dot_id(&e.from), dot_id(&e.to), attrs));
    }
    out.push_str("}\n");
    Ok(out)
}

fn dot_id_quoted(label: &str) -> String {
    format!("\"{}\"", label.replace('\\', "\\\\").replace('"', "\\\""))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{weather_news, AgentDecl};

    #[test]
    fn weather_news_dot() {
        let dot = export_dot(&weather_news()).unwrap();
        assert!(dot.contains("  weather -> news;\n"), "{dot}");
        assert_eq!(
            dot,
            "digraph g {\n  news;\n  weather [shape=doublecircle];\n  weather -> news;\n}\n"
        );
        assert_eq!(dot, export_dot(&weather_news()).unwrap());
    }

    #[test]
    fn empty_graph_dot() {
        assert_eq!(export_dot(&WorkflowGraph::new()).unwrap(), "digraph g {}\n");
    }

    #[test]
    fn invalid_graph_rejected() {
        let mut g = weather_news();
        g.add_agent(AgentDecl::new("orphan", "gpt-4o", "")).unwrap();
        assert!(matches!(export_dot(&g), Err(GraphError::InvalidGraph(_))));
    }

    #[test]
    fn conditional_labels_and_quoting() {
        let mut g = weather_news();
        g.add_agent(AgentDecl::new("x-ray", "gpt-4o", "")).unwrap();
        g.connect("news", "x-ray", EdgeKind::Conditional, Some("go")).unwrap();
        let dot = export_dot(&g).unwrap();
        assert!(dot.contains("  news -> \"x-ray\" [label=\"go\"];\n"), "{dot}");
    }
}
