//! In-memory typed property graph of knowledge triples.
//!
//! Nodes are keyed by `(label, normalized name)`; the key doubles as the
//! node id (`Disease:肝癌`), so ids are stable regardless of insertion order.
//! Triples are unique and always reference existing nodes.

mod export;
mod persist;
mod query;
mod schema;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{cypher_statements, export_csv, export_cypher, relationship_type, CSV_NODES, CSV_RELS};
pub use persist::{from_json, load, save, to_json, GRAPH_SCHEMA_VERSION};
pub use query::{follow, pattern_query, pattern_query_chain};
pub use schema::{emr_relation, normalize_name, GraphSchema, PATIENT};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("label {0:?} is not in the graph schema")]
    LabelUnknown(String),
    #[error("node name must not be empty")]
    EmptyName,
    #[error("triple endpoint {0} does not exist")]
    DanglingEndpoint(NodeId),
    #[error("relation {relation} cannot connect {head_label} to {tail_label}")]
    RelationTypeMismatch { relation: String, head_label: String, tail_label: String },
    #[error("I/O error{}: {message}", position.map(|(l, c)| format!(" at line {l}, column {c}")).unwrap_or_default())]
    Io { message: String, position: Option<(usize, usize)> },
    #[error("graph file schema version mismatch: {0}")]
    SchemaVersionMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(label: &str, name: &str) -> Self {
        Self(format!("{label}:{}", normalize_name(name)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Where a node's knowledge came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Emr,
    Kb,
    Both,
}

impl Origin {
    pub fn merge(self, other: Origin) -> Origin {
        if self == other {
            self
        } else {
            Origin::Both
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Emr => "emr",
            Origin::Kb => "kb",
            Origin::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub label: String,
    pub name: String,
    pub origin: Origin,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: NodeId,
    pub relation: String,
    pub tail: NodeId,
}

impl Triple {
    pub fn new(head: NodeId, relation: impl Into<String>, tail: NodeId) -> Self {
        Self { head, relation: relation.into(), tail }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    schema: GraphSchema,
    nodes: BTreeMap<NodeId, Node>,
    triples: BTreeSet<Triple>,
    by_head: BTreeMap<NodeId, BTreeSet<Triple>>,
    by_tail: BTreeMap<NodeId, BTreeSet<Triple>>,
}

impl Default for KnowledgeGraph {
    fn default() -> Self {
        Self::new(GraphSchema::default())
    }
}

impl KnowledgeGraph {
    pub fn new(schema: GraphSchema) -> Self {
        Self {
            schema,
            nodes: BTreeMap::new(),
            triples: BTreeSet::new(),
            by_head: BTreeMap::new(),
            by_tail: BTreeMap::new(),
        }
    }

    pub fn schema(&self) -> &GraphSchema {
        &self.schema
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn find(&self, label: &str, name: &str) -> Option<&Node> {
        self.nodes.get(&NodeId::new(label, name))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn outgoing(&self, id: &NodeId) -> impl Iterator<Item = &Triple> {
        self.by_head.get(id).into_iter().flatten()
    }

    pub fn incoming(&self, id: &NodeId) -> impl Iterator<Item = &Triple> {
        self.by_tail.get(id).into_iter().flatten()
    }

    /// Inserts a node, or merges into the node with the same label and
    /// normalized name: attributes are overwritten key by key and origins
    /// combine. The first-seen display name is kept.
    pub fn upsert_node(
        &mut self,
        label: &str,
        name: &str,
        origin: Origin,
        attributes: BTreeMap<String, String>,
    ) -> Result<NodeId, GraphError> {
        if !self.schema.has_label(label) {
            return Err(GraphError::LabelUnknown(label.to_string()));
        }
        if normalize_name(name).is_empty() {
            return Err(GraphError::EmptyName);
        }
        let id = NodeId::new(label, name);
        match self.nodes.get_mut(&id) {
            Some(node) => {
                node.origin = node.origin.merge(origin);
                node.attributes.extend(attributes);
            }
            None => {
                let node = Node {
                    id: id.clone(),
                    label: label.to_string(),
                    name: name.trim().to_string(),
                    origin,
                    attributes,
                };
                self.nodes.insert(id.clone(), node);
            }
        }
        Ok(id)
    }

    pub fn set_attribute(&mut self, id: &NodeId, key: &str, value: String) -> Result<(), GraphError> {
        let node = self.nodes.get_mut(id).ok_or_else(|| GraphError::DanglingEndpoint(id.clone()))?;
        node.attributes.insert(key.to_string(), value);
        Ok(())
    }

    pub fn set_origin(&mut self, id: &NodeId, origin: Origin) -> Result<(), GraphError> {
        let node = self.nodes.get_mut(id).ok_or_else(|| GraphError::DanglingEndpoint(id.clone()))?;
        node.origin = origin;
        Ok(())
    }

    /// Adds a triple after checking endpoints and the relation signature.
    /// Returns `false` if the triple was already present.
    pub fn add_triple(&mut self, head: &NodeId, relation: &str, tail: &NodeId) -> Result<bool, GraphError> {
        let h = self.nodes.get(head).ok_or_else(|| GraphError::DanglingEndpoint(head.clone()))?;
        let t = self.nodes.get(tail).ok_or_else(|| GraphError::DanglingEndpoint(tail.clone()))?;
        if !self.schema.allows(relation, &h.label, &t.label) {
            return Err(GraphError::RelationTypeMismatch {
                relation: relation.to_string(),
                head_label: h.label.clone(),
                tail_label: t.label.clone(),
            });
        }
        let triple = Triple::new(head.clone(), relation, tail.clone());
        if !self.triples.insert(triple.clone()) {
            return Ok(false);
        }
        self.by_head.entry(head.clone()).or_default().insert(triple.clone());
        self.by_tail.entry(tail.clone()).or_default().insert(triple);
        Ok(true)
    }

    fn remove_triple(&mut self, triple: &Triple) {
        self.triples.remove(triple);
        for (index, key) in [(&mut self.by_head, &triple.head), (&mut self.by_tail, &triple.tail)] {
            if let Some(set) = index.get_mut(key) {
                set.remove(triple);
                if set.is_empty() {
                    index.remove(key);
                }
            }
        }
    }

    /// Removes a node and every triple touching it.
    pub fn remove_node(&mut self, id: &NodeId) -> Option<Node> {
        let incident: Vec<Triple> = self.outgoing(id).chain(self.incoming(id)).cloned().collect();
        for t in &incident {
            self.remove_triple(t);
        }
        self.nodes.remove(id)
    }

    /// Moves every triple touching `from` onto `to`, then removes `from`.
    /// Returns how many re-pointed triples collapsed into an existing one.
    pub fn merge_node_into(&mut self, from: &NodeId, to: &NodeId) -> Result<usize, GraphError> {
        if !self.nodes.contains_key(to) {
            return Err(GraphError::DanglingEndpoint(to.clone()));
        }
        if !self.nodes.contains_key(from) {
            return Err(GraphError::DanglingEndpoint(from.clone()));
        }
        if from == to {
            return Ok(0);
        }
        let incident: Vec<Triple> = self.outgoing(from).chain(self.incoming(from)).cloned().collect();
        let mut collapsed = 0;
        for t in &incident {
            self.remove_triple(t);
        }
        for t in incident {
            let head = if t.head == *from { to.clone() } else { t.head };
            let tail = if t.tail == *from { to.clone() } else { t.tail };
            if !self.add_triple(&head, &t.relation, &tail)? {
                collapsed += 1;
            }
        }
        self.nodes.remove(from);
        Ok(collapsed)
    }

    /// Adds a patient node with its attributes and one patient-side triple
    /// per recognized `(entity type, surface)` pair.
    pub fn add_patient_record(
        &mut self,
        patient_id: &str,
        attributes: BTreeMap<String, String>,
        entities: &[(String, String)],
    ) -> Result<NodeId, GraphError> {
        let patient = self.upsert_node(PATIENT, patient_id, Origin::Emr, attributes)?;
        for (label, surface) in entities {
            let node = self.upsert_node(label, surface, Origin::Emr, BTreeMap::new())?;
            self.add_triple(&patient, &emr_relation(label), &node)?;
        }
        Ok(patient)
    }

    /// Checks that both indexes agree with the triple store and that every
    /// triple references existing nodes.
    pub fn check_consistency(&self) -> Result<(), String> {
        for t in &self.triples {
            for end in [&t.head, &t.tail] {
                if !self.nodes.contains_key(end) {
                    return Err(format!("dangling endpoint {end} in {t:?}"));
                }
            }
            if !self.by_head.get(&t.head).is_some_and(|s| s.contains(t)) {
                return Err(format!("head index misses {t:?}"));
            }
            if !self.by_tail.get(&t.tail).is_some_and(|s| s.contains(t)) {
                return Err(format!("tail index misses {t:?}"));
            }
        }
        let indexed: usize = self.by_head.values().map(BTreeSet::len).sum();
        let indexed_tail: usize = self.by_tail.values().map(BTreeSet::len).sum();
        if indexed != self.triples.len() || indexed_tail != self.triples.len() {
            return Err("index holds stale triples".into());
        }
        for (id, node) in &self.nodes {
            if *id != NodeId::new(&node.label, &node.name) {
                return Err(format!("node {id} keyed inconsistently"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn upsert_merges_attributes() {
        let mut g = KnowledgeGraph::default();
        let a = g.upsert_node("Disease", "肝癌", Origin::Kb, attrs(&[("cause", "病毒感染")])).unwrap();
        let b = g.upsert_node("Disease", " 肝癌 ", Origin::Emr, attrs(&[("cure_time", "长期")])).unwrap();
        assert_eq!(a, b);
        assert_eq!(g.node_count(), 1);
        let n = g.node(&a).unwrap();
        assert_eq!(n.attributes.len(), 2);
        assert_eq!(n.origin, Origin::Both);
    }

    #[test]
    fn same_name_different_labels_are_distinct() {
        let mut g = KnowledgeGraph::default();
        g.upsert_node("Symptom", "黄疸", Origin::Kb, BTreeMap::new()).unwrap();
        g.upsert_node("Disease", "黄疸", Origin::Kb, BTreeMap::new()).unwrap();
        assert_eq!(g.node_count(), 2);
        assert!(matches!(
            g.upsert_node("Planet", "火星", Origin::Kb, BTreeMap::new()),
            Err(GraphError::LabelUnknown(_))
        ));
        assert!(matches!(g.upsert_node("Disease", "  ", Origin::Kb, BTreeMap::new()), Err(GraphError::EmptyName)));
    }

    #[test]
    fn triples_are_idempotent_and_type_checked() {
        let mut g = KnowledgeGraph::default();
        let d = g.upsert_node("Disease", "肝癌", Origin::Kb, BTreeMap::new()).unwrap();
        let f = g.upsert_node("Food", "鸡蛋", Origin::Kb, BTreeMap::new()).unwrap();
        let drug = g.upsert_node("Drug", "索拉非尼片", Origin::Kb, BTreeMap::new()).unwrap();
        assert!(g.add_triple(&d, "RecommendedFood", &f).unwrap());
        assert!(!g.add_triple(&d, "RecommendedFood", &f).unwrap());
        assert_eq!(g.triple_count(), 1);
        assert!(matches!(g.add_triple(&d, "RecommendedFood", &drug), Err(GraphError::RelationTypeMismatch { .. })));
        let ghost = NodeId::new("Food", "不存在");
        assert!(matches!(g.add_triple(&d, "RecommendedFood", &ghost), Err(GraphError::DanglingEndpoint(_))));
        g.check_consistency().unwrap();
    }

    #[test]
    fn merge_repoints_and_collapses() {
        let mut g = KnowledgeGraph::default();
        let p = g.add_patient_record("P1", BTreeMap::new(), &[("Disease".into(), "原发肝细胞癌".into())]).unwrap();
        let emr = NodeId::new("Disease", "原发肝细胞癌");
        let kb = g.upsert_node("Disease", "原发性肝细胞癌", Origin::Kb, BTreeMap::new()).unwrap();
        let z = g.upsert_node("Disease", "肝性脑病", Origin::Kb, BTreeMap::new()).unwrap();
        g.add_triple(&kb, "Complication", &z).unwrap();
        assert_eq!(g.merge_node_into(&emr, &kb).unwrap(), 0);
        assert!(g.node(&emr).is_none());
        assert_eq!(g.outgoing(&p).next().unwrap().tail, kb);
        g.check_consistency().unwrap();

        g.add_triple(&p, "HasDisease", &z).unwrap();
        assert_eq!(g.merge_node_into(&z, &kb).unwrap(), 1);
        g.check_consistency().unwrap();
    }

    #[test]
    fn remove_node_drops_incident_triples() {
        let mut g = KnowledgeGraph::default();
        let p = g
            .add_patient_record(
                "P1",
                BTreeMap::new(),
                &[("Disease".into(), "肝癌".into()), ("Symptom".into(), "腹痛".into())],
            )
            .unwrap();
        assert_eq!(g.triple_count(), 2);
        g.remove_node(&p);
        assert_eq!(g.triple_count(), 0);
        g.check_consistency().unwrap();
    }
}
