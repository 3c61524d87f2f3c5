use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GraphError, GraphSchema, KnowledgeGraph, Node, Triple};
use crate::corpus::EntitySchema;

pub const GRAPH_FORMAT: &str = "emrkg-graph";
pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GraphFile {
    format: String,
    schema_version: u32,
    entity_types: Vec<String>,
    nodes: Vec<Node>,
    triples: Vec<Triple>,
}

fn json_error(e: serde_json::Error) -> GraphError {
    GraphError::Io { message: e.to_string(), position: Some((e.line(), e.column())) }
}

pub fn to_json(graph: &KnowledgeGraph) -> String {
    let mut nodes: Vec<Node> = graph.nodes().cloned().collect();
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let file = GraphFile {
        format: GRAPH_FORMAT.into(),
        schema_version: GRAPH_SCHEMA_VERSION,
        entity_types: graph.schema().entity_types().types().to_vec(),
        nodes,
        triples: graph.triples().cloned().collect(),
    };
    serde_json::to_string_pretty(&file).expect("graph serialization cannot fail") + "\n"
}

pub fn from_json(text: &str) -> Result<KnowledgeGraph, GraphError> {
    if text.trim().is_empty() {
        return Err(GraphError::SchemaVersionMismatch("file is empty".into()));
    }
    let value: serde_json::Value = serde_json::from_str(text).map_err(json_error)?;
    let format = value.get("format").and_then(|v| v.as_str());
    let version = value.get("schema_version").and_then(|v| v.as_u64());
    if format != Some(GRAPH_FORMAT) || version != Some(GRAPH_SCHEMA_VERSION as u64) {
        return Err(GraphError::SchemaVersionMismatch(format!(
            "found format {format:?} version {version:?}, expected {GRAPH_FORMAT:?} version {GRAPH_SCHEMA_VERSION}"
        )));
    }
    let file: GraphFile =
        serde_json::from_value(value).map_err(|e| GraphError::Io { message: e.to_string(), position: None })?;
    let types =
        EntitySchema::new(file.entity_types).map_err(|e| GraphError::Io { message: e.to_string(), position: None })?;
    let mut graph = KnowledgeGraph::new(GraphSchema::new(&types));
    for n in file.nodes {
        let id = graph.upsert_node(&n.label, &n.name, n.origin, n.attributes)?;
        if id != n.id {
            return Err(GraphError::Io {
                message: format!("node id {} does not match its label and name", n.id),
                position: None,
            });
        }
    }
    for t in file.triples {
        graph.add_triple(&t.head, &t.relation, &t.tail)?;
    }
    Ok(graph)
}

pub fn save(graph: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    std::fs::write(path, to_json(graph)).map_err(|e| GraphError::Io { message: e.to_string(), position: None })
}

pub fn load(path: impl AsRef<Path>) -> Result<KnowledgeGraph, GraphError> {
    let text = std::fs::read_to_string(path).map_err(|e| GraphError::Io { message: e.to_string(), position: None })?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::graph::Origin;

    fn sample() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::default();
        let attrs = BTreeMap::from([("age".to_string(), "56".to_string())]);
        g.add_patient_record("P1", attrs, &[("Disease".into(), "肝癌".into())]).unwrap();
        let d = g.find("Disease", "肝癌").unwrap().id.clone();
        let f = g.upsert_node("Food", "鸡蛋", Origin::Kb, BTreeMap::new()).unwrap();
        g.add_triple(&d, "RecommendedFood", &f).unwrap();
        g
    }

    #[test]
    fn round_trip() {
        let g = sample();
        let back = from_json(&to_json(&g)).unwrap();
        assert_eq!(back, g);
        assert_eq!(to_json(&back), to_json(&g));
    }

    #[test]
    fn empty_and_truncated_files() {
        assert!(matches!(from_json(""), Err(GraphError::SchemaVersionMismatch(_))));
        let text = to_json(&sample());
        match from_json(&text[..text.len() / 2]) {
            Err(GraphError::Io { position: Some((line, _)), .. }) => assert!(line > 1),
            other => panic!("{other:?}"),
        }
        let wrong = text.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(from_json(&wrong), Err(GraphError::SchemaVersionMismatch(_))));
    }
}
