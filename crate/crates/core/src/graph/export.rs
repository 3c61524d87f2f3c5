use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GraphError, KnowledgeGraph, Node};

pub const CSV_NODES: &str = "nodes.csv";
pub const CSV_RELS: &str = "rels.csv";

fn io_error(e: impl std::fmt::Display) -> GraphError {
    GraphError::Io { message: e.to_string(), position: None }
}

/// `RecommendedFood` becomes `RECOMMENDED_FOOD`.
pub fn relationship_type(relation: &str) -> String {
    let mut out = String::with_capacity(relation.len() + 4);
    let mut prev_lower = false;
    for c in relation.chars() {
        if c.is_ascii_uppercase() && prev_lower {
            out.push('_');
        }
        prev_lower = c.is_ascii_lowercase() || c.is_ascii_digit();
        out.push(c.to_ascii_uppercase());
    }
    out
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out.push('\'');
    out
}

fn key(k: &str) -> String {
    let plain = k.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain {
        k.to_string()
    } else {
        format!("`{}`", k.replace('`', "``"))
    }
}

fn node_statement(n: &Node) -> String {
    let mut s = format!(
        "CREATE (:{} {{id: {}, name: {}, origin: {}",
        key(&n.label),
        quote(n.id.as_str()),
        quote(&n.name),
        quote(n.origin.as_str())
    );
    for (k, v) in &n.attributes {
        let _ = write!(s, ", {}: {}", key(k), quote(v));
    }
    s.push_str("});");
    s
}

fn sorted_nodes(graph: &KnowledgeGraph) -> Vec<&Node> {
    let mut nodes: Vec<&Node> = graph.nodes().collect();
    nodes.sort_by(|a, b| (&a.label, &a.name).cmp(&(&b.label, &b.name)));
    nodes
}

/// One `CREATE` statement per node (ordered by label, then name) followed by
/// one `MATCH … CREATE` statement per triple in lexicographic order.
pub fn cypher_statements(graph: &KnowledgeGraph) -> Vec<String> {
    let mut out: Vec<String> = sorted_nodes(graph).into_iter().map(node_statement).collect();
    for t in graph.triples() {
        out.push(format!(
            "MATCH (h {{id: {}}}), (t {{id: {}}}) CREATE (h)-[:{}]->(t);",
            quote(t.head.as_str()),
            quote(t.tail.as_str()),
            relationship_type(&t.relation)
        ));
    }
    out
}

/// Writes the statements one per line and returns how many were written.
pub fn export_cypher(graph: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<usize, GraphError> {
    let statements = cypher_statements(graph);
    let mut text = statements.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(io_error)?;
    Ok(statements.len())
}

/// Writes `nodes.csv` (id, label, name, attributes as a JSON object) and
/// `rels.csv` (head, relation, tail) into `dir`.
pub fn export_csv(graph: &KnowledgeGraph, dir: impl AsRef<Path>) -> Result<(usize, usize), GraphError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_error)?;

    let mut nodes = csv::Writer::from_path(dir.join(CSV_NODES)).map_err(io_error)?;
    nodes.write_record(["id", "label", "name", "attributes"]).map_err(io_error)?;
    let sorted = sorted_nodes(graph);
    for n in &sorted {
        let attrs = serde_json::to_string(&n.attributes).map_err(io_error)?;
        nodes.write_record([n.id.as_str(), &n.label, &n.name, &attrs]).map_err(io_error)?;
    }
    nodes.flush().map_err(io_error)?;

    let mut rels = csv::Writer::from_path(dir.join(CSV_RELS)).map_err(io_error)?;
    rels.write_record(["head", "relation", "tail"]).map_err(io_error)?;
    for t in graph.triples() {
        rels.write_record([t.head.as_str(), &t.relation, t.tail.as_str()]).map_err(io_error)?;
    }
    rels.flush().map_err(io_error)?;
    Ok((sorted.len(), graph.triple_count()))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::graph::Origin;

    #[test]
    fn relation_names() {
        assert_eq!(relationship_type("RecommendedFood"), "RECOMMENDED_FOOD");
        assert_eq!(relationship_type("HasBodyCheck"), "HAS_BODY_CHECK");
        assert_eq!(relationship_type("Complication"), "COMPLICATION");
    }

    #[test]
    fn statement_counts() {
        let mut g = KnowledgeGraph::default();
        assert!(cypher_statements(&g).is_empty());
        let d = g.upsert_node("Disease", "肝癌", Origin::Kb, BTreeMap::new()).unwrap();
        let f = g.upsert_node("Food", "O'Neil\\鸡蛋", Origin::Kb, BTreeMap::new()).unwrap();
        g.add_triple(&d, "RecommendedFood", &f).unwrap();
        let s = cypher_statements(&g);
        assert_eq!(s.len(), 3);
        assert!(s[1].contains(r"'O\'Neil\\鸡蛋'"));
        assert!(s[2].ends_with("CREATE (h)-[:RECOMMENDED_FOOD]->(t);"));
    }
}
