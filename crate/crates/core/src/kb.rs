//! External disease knowledge base.
//!
//! The file format is line-delimited JSON. The first non-blank line is a
//! header, every following non-blank line is one disease:
//!
//! ```text
//! {"format":"emrkg-kb","schema_version":1}
//! {"name":"肝癌","description":"…","cure_time":"1-3个月","treatments":["手术治疗"],
//!  "relations":{"RecommendedFood":["鸡蛋"],"Complication":["肝性脑病"]}}
//! ```
//!
//! Scalar fields (`description`, `prevention`, `cure_time`, `cause`) and
//! `treatments` are optional. Relation keys must be one of the eight
//! [`KbRelation`] names; the target type follows from the relation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{normalize_name, GraphError, KnowledgeGraph, NodeId, Origin};

pub const KB_FORMAT: &str = "emrkg-kb";
pub const KB_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown relation type {relation:?}")]
    UnknownRelationType { line: usize, relation: String },
    #[error("cannot read knowledge base: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KbEntityType {
    Disease,
    Food,
    Department,
    Drug,
    Examination,
    Symptom,
}

impl KbEntityType {
    pub const ALL: [KbEntityType; 6] = [
        KbEntityType::Disease,
        KbEntityType::Food,
        KbEntityType::Department,
        KbEntityType::Drug,
        KbEntityType::Examination,
        KbEntityType::Symptom,
    ];

    pub fn label(self) -> &'static str {
        match self {
            KbEntityType::Disease => "Disease",
            KbEntityType::Food => "Food",
            KbEntityType::Department => "Department",
            KbEntityType::Drug => "Drug",
            KbEntityType::Examination => "Examination",
            KbEntityType::Symptom => "Symptom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KbRelation {
    RecommendedFood,
    AvoidFood,
    BelongsToDepartment,
    CommonDrug,
    DiagnosticCheck,
    HasSymptom,
    Complication,
    RelatedDepartment,
}

impl KbRelation {
    pub const ALL: [KbRelation; 8] = [
        KbRelation::RecommendedFood,
        KbRelation::AvoidFood,
        KbRelation::BelongsToDepartment,
        KbRelation::CommonDrug,
        KbRelation::DiagnosticCheck,
        KbRelation::HasSymptom,
        KbRelation::Complication,
        KbRelation::RelatedDepartment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KbRelation::RecommendedFood => "RecommendedFood",
            KbRelation::AvoidFood => "AvoidFood",
            KbRelation::BelongsToDepartment => "BelongsToDepartment",
            KbRelation::CommonDrug => "CommonDrug",
            KbRelation::DiagnosticCheck => "DiagnosticCheck",
            KbRelation::HasSymptom => "HasSymptom",
            KbRelation::Complication => "Complication",
            KbRelation::RelatedDepartment => "RelatedDepartment",
        }
    }

    pub fn from_name(name: &str) -> Option<KbRelation> {
        KbRelation::ALL.into_iter().find(|r| r.name() == name)
    }

    /// Head and tail entity types. Every relation starts at a disease.
    pub fn endpoints(self) -> (KbEntityType, KbEntityType) {
        use KbEntityType as T;
        let tail = match self {
            KbRelation::RecommendedFood | KbRelation::AvoidFood => T::Food,
            KbRelation::BelongsToDepartment | KbRelation::RelatedDepartment => T::Department,
            KbRelation::CommonDrug => T::Drug,
            KbRelation::DiagnosticCheck => T::Examination,
            KbRelation::HasSymptom => T::Symptom,
            KbRelation::Complication => T::Disease,
        };
        (T::Disease, tail)
    }
}

impl fmt::Display for KbRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DiseaseEntry {
    pub name: String,
    pub description: Option<String>,
    pub prevention: Option<String>,
    pub cure_time: Option<String>,
    pub treatments: Vec<String>,
    pub cause: Option<String>,
    pub relations: Vec<(KbRelation, String)>,
}

impl DiseaseEntry {
    /// Attribute map attached to the disease node.
    pub fn attributes(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for (key, value) in [
            ("description", &self.description),
            ("prevention", &self.prevention),
            ("cure_time", &self.cure_time),
            ("cause", &self.cause),
        ] {
            if let Some(v) = value {
                out.insert(key.to_string(), v.clone());
            }
        }
        if !self.treatments.is_empty() {
            out.insert("treatments".to_string(), self.treatments.join("、"));
        }
        out
    }

    fn merge(&mut self, other: DiseaseEntry) {
        for (mine, theirs) in [
            (&mut self.description, other.description),
            (&mut self.prevention, other.prevention),
            (&mut self.cure_time, other.cure_time),
            (&mut self.cause, other.cause),
        ] {
            if theirs.is_some() {
                *mine = theirs;
            }
        }
        for t in other.treatments {
            if !self.treatments.contains(&t) {
                self.treatments.push(t);
            }
        }
        for r in other.relations {
            if !self.relations.contains(&r) {
                self.relations.push(r);
            }
        }
    }
}

/// Distinct entity names per knowledge-base entity type.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KbCatalogs {
    by_type: BTreeMap<KbEntityType, BTreeSet<String>>,
}

impl KbCatalogs {
    pub fn get(&self, t: KbEntityType) -> impl Iterator<Item = &str> {
        self.by_type.get(&t).into_iter().flatten().map(String::as_str)
    }

    pub fn contains(&self, t: KbEntityType, name: &str) -> bool {
        self.by_type.get(&t).is_some_and(|s| s.contains(name))
    }

    pub fn count(&self, t: KbEntityType) -> usize {
        self.by_type.get(&t).map_or(0, BTreeSet::len)
    }

    pub fn is_empty(&self) -> bool {
        self.by_type.values().all(BTreeSet::is_empty)
    }

    fn insert(&mut self, t: KbEntityType, name: &str) {
        self.by_type.entry(t).or_default().insert(name.to_string());
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnowledgeBase {
    pub entries: Vec<DiseaseEntry>,
    pub catalogs: KbCatalogs,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    schema_version: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    name: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    prevention: Option<String>,
    #[serde(default)]
    cure_time: Option<String>,
    #[serde(default)]
    treatments: Vec<String>,
    #[serde(default)]
    cause: Option<String>,
    #[serde(default)]
    relations: BTreeMap<String, Vec<String>>,
}

fn parse_error(line: usize, message: impl Into<String>) -> KbError {
    KbError::Parse { line, message: message.into() }
}

fn convert(raw: RawEntry, line: usize) -> Result<DiseaseEntry, KbError> {
    let name = normalize_name(&raw.name);
    if name.is_empty() {
        return Err(parse_error(line, "disease name is empty"));
    }
    let mut relations = Vec::new();
    for (key, targets) in raw.relations {
        let relation =
            KbRelation::from_name(&key).ok_or_else(|| KbError::UnknownRelationType { line, relation: key.clone() })?;
        for target in targets {
            let target = normalize_name(&target);
            if target.is_empty() {
                return Err(parse_error(line, format!("empty {key} target")));
            }
            let pair = (relation, target);
            if !relations.contains(&pair) {
                relations.push(pair);
            }
        }
    }
    let scalar = |s: Option<String>| s.map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
    Ok(DiseaseEntry {
        name,
        description: scalar(raw.description),
        prevention: scalar(raw.prevention),
        cure_time: scalar(raw.cure_time),
        treatments: raw.treatments.iter().map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect(),
        cause: scalar(raw.cause),
        relations,
    })
}

/// Parses knowledge-base text. Line numbers in errors are 1-based.
pub fn parse_kb(content: &str) -> Result<KnowledgeBase, KbError> {
    let mut lines = content.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let mut kb = KnowledgeBase::default();
    let Some((line, header)) = lines.next() else {
        log::warn!("knowledge base is empty");
        kb.warnings.push("knowledge base is empty".into());
        return Ok(kb);
    };
    let header: Header =
        serde_json::from_str(header).map_err(|e| parse_error(line, format!("expected header record: {e}")))?;
    if header.format != KB_FORMAT {
        return Err(parse_error(line, format!("unexpected format {:?}", header.format)));
    }
    if header.schema_version != KB_SCHEMA_VERSION {
        return Err(parse_error(
            line,
            format!("schema version {} is not supported (expected {KB_SCHEMA_VERSION})", header.schema_version),
        ));
    }

    let mut position: BTreeMap<String, usize> = BTreeMap::new();
    for (line, text) in lines {
        let raw: RawEntry = serde_json::from_str(text).map_err(|e| parse_error(line, e.to_string()))?;
        let entry = convert(raw, line)?;
        match position.get(&entry.name) {
            Some(&i) => {
                let msg = format!("line {line}: duplicate disease {:?} merged into earlier entry", entry.name);
                log::warn!("{msg}");
                kb.warnings.push(msg);
                kb.entries[i].merge(entry);
            }
            None => {
                position.insert(entry.name.clone(), kb.entries.len());
                kb.entries.push(entry);
            }
        }
    }
    if kb.entries.is_empty() {
        log::warn!("knowledge base has no disease records");
        kb.warnings.push("knowledge base has no disease records".into());
    }
    for e in &kb.entries {
        kb.catalogs.insert(KbEntityType::Disease, &e.name);
        for (r, target) in &e.relations {
            kb.catalogs.insert(r.endpoints().1, target);
        }
    }
    Ok(kb)
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase, KbError> {
    parse_kb(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KbTriple {
    pub head: String,
    pub relation: KbRelation,
    pub tail: String,
}

/// One triple per relation instance, in entry order.
pub fn kb_to_triples(entries: &[DiseaseEntry]) -> Vec<KbTriple> {
    entries
        .iter()
        .flat_map(|e| e.relations.iter().map(|(r, t)| KbTriple { head: e.name.clone(), relation: *r, tail: t.clone() }))
        .collect()
}

/// Inserts every catalog entity, disease attributes and triple into `graph`
/// with knowledge-base origin.
pub fn insert_into_graph(kb: &KnowledgeBase, graph: &mut KnowledgeGraph) -> Result<(), GraphError> {
    for e in &kb.entries {
        graph.upsert_node(KbEntityType::Disease.label(), &e.name, Origin::Kb, e.attributes())?;
    }
    for t in KbEntityType::ALL {
        for name in kb.catalogs.get(t) {
            graph.upsert_node(t.label(), name, Origin::Kb, BTreeMap::new())?;
        }
    }
    for t in kb_to_triples(&kb.entries) {
        let (h, tl) = t.relation.endpoints();
        graph.add_triple(&NodeId::new(h.label(), &t.head), t.relation.name(), &NodeId::new(tl.label(), &t.tail))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "{\"format\":\"emrkg-kb\",\"schema_version\":1}\n";

    fn kb(lines: &[&str]) -> Result<KnowledgeBase, KbError> {
        parse_kb(&format!("{HEADER}{}", lines.join("\n")))
    }

    #[test]
    fn direct_mapping() {
        let kb = kb(&[r#"{"name":"肝癌","relations":{"RecommendedFood":["鸡蛋"]}}"#]).unwrap();
        assert!(kb.catalogs.contains(KbEntityType::Disease, "肝癌"));
        assert!(kb.catalogs.contains(KbEntityType::Food, "鸡蛋"));
        assert_eq!(kb.catalogs.count(KbEntityType::Drug), 0);
    }

    #[test]
    fn empty_file_warns() {
        let kb = parse_kb("").unwrap();
        assert!(kb.catalogs.is_empty());
        assert_eq!(kb.warnings.len(), 1);
        let kb = parse_kb(HEADER).unwrap();
        assert!(kb.entries.is_empty());
        assert_eq!(kb.warnings.len(), 1);
    }

    #[test]
    fn shared_targets_stored_once() {
        let kb = kb(&[
            r#"{"name":"肝癌","relations":{"RecommendedFood":["鸡蛋","鲫鱼"]}}"#,
            r#"{"name":"肝硬化","relations":{"RecommendedFood":["鸡蛋"]}}"#,
        ])
        .unwrap();
        let foods: Vec<&str> = kb.catalogs.get(KbEntityType::Food).collect();
        assert_eq!(foods, ["鲫鱼", "鸡蛋"]);
        assert_eq!(kb_to_triples(&kb.entries).len(), 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match kb(&[r#"{"name":"肝癌"}"#, "", r#"{"name":"#]) {
            Err(KbError::Parse { line: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
        match kb(&[r#"{"name":"肝癌","relations":{"Cures":["x"]}}"#]) {
            Err(KbError::UnknownRelationType { line: 2, relation }) => assert_eq!(relation, "Cures"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(kb(&[r#"{"name":"  "}"#]), Err(KbError::Parse { line: 2, .. })));
        assert!(matches!(parse_kb(r#"{"name":"肝癌"}"#), Err(KbError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_kb("{\"format\":\"emrkg-kb\",\"schema_version\":9}"),
            Err(KbError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn duplicates_merge_last_writer_wins() {
        let kb = kb(&[
            r#"{"name":"肝癌","cause":"甲","cure_time":"1年","treatments":["手术"],"relations":{"AvoidFood":["白酒"]}}"#,
            r#"{"name":"肝癌","cause":"乙","treatments":["化疗","手术"],"relations":{"AvoidFood":["白酒","辣椒"]}}"#,
        ])
        .unwrap();
        assert_eq!(kb.entries.len(), 1);
        assert_eq!(kb.warnings.len(), 1);
        let e = &kb.entries[0];
        assert_eq!(e.cause.as_deref(), Some("乙"));
        assert_eq!(e.cure_time.as_deref(), Some("1年"));
        assert_eq!(e.treatments, ["手术", "化疗"]);
        assert_eq!(e.relations.len(), 2);
    }

    #[test]
    fn complication_links_two_diseases() {
        let kb = kb(&[r#"{"name":"肝硬化","relations":{"Complication":["肝癌"],"HasSymptom":["乏力"],"CommonDrug":["恩替卡韦"]}}"#])
            .unwrap();
        let triples = kb_to_triples(&kb.entries);
        assert_eq!(triples.len(), 3);
        assert!(kb.catalogs.contains(KbEntityType::Disease, "肝癌"));
        let mut g = KnowledgeGraph::default();
        insert_into_graph(&kb, &mut g).unwrap();
        assert_eq!(g.triple_count(), 3);
        assert_eq!(g.node_count(), 4);
        assert!(g.find("Disease", "肝癌").is_some());
    }

    #[test]
    fn loading_is_idempotent() {
        let text = format!("{HEADER}{}", r#"{"name":"肝癌","relations":{"HasSymptom":["黄疸"]}}"#);
        assert_eq!(parse_kb(&text).unwrap(), parse_kb(&text).unwrap());
    }
}
