use std::path::Path;

use emrkg_core::graph::{pattern_query, KnowledgeGraph, NodeId, Origin};
use emrkg_core::kb::{insert_into_graph, kb_to_triples, load_kb, parse_kb, KbEntityType, KbRelation};

const FIVE: &str = r#"{"format":"emrkg-kb","schema_version":1}
{"name":"肝癌","description":"常见恶性肿瘤","relations":{"HasSymptom":["黄疸","腹痛"],"Complication":["肝硬化"],"CommonDrug":["索拉非尼片"],"BelongsToDepartment":["肿瘤科"]}}
{"name":"肝硬化","relations":{"HasSymptom":["黄疸"],"Complication":["门静脉高压"],"RecommendedFood":["鸡蛋"],"AvoidFood":["白酒"]}}
{"name":"门静脉高压","relations":{"HasSymptom":["呕血"],"DiagnosticCheck":["胃镜"]}}

{"name":" 胆囊炎 ","relations":{"HasSymptom":["腹痛"],"RelatedDepartment":["肝胆外科"],"CommonDrug":["头孢"]}}
{"name":"胃炎","cure_time":"1个月"}
{"name":"肝癌","description":"原发或继发","treatments":["手术治疗"],"relations":{"Complication":["肝硬化","胃炎"]}}
"#;

fn names(kb: &emrkg_core::kb::KnowledgeBase, t: KbEntityType) -> Vec<&str> {
    kb.catalogs.get(t).collect()
}

#[test]
fn five_disease_catalogs() {
    let kb = parse_kb(FIVE).unwrap();
    assert_eq!(kb.entries.len(), 5);
    assert_eq!(kb.warnings.len(), 1, "{:?}", kb.warnings);
    assert_eq!(names(&kb, KbEntityType::Disease), ["肝癌", "肝硬化", "胃炎", "胆囊炎", "门静脉高压"]);
    assert_eq!(names(&kb, KbEntityType::Symptom), ["呕血", "腹痛", "黄疸"]);
    assert_eq!(names(&kb, KbEntityType::Drug), ["头孢", "索拉非尼片"]);
    assert_eq!(names(&kb, KbEntityType::Food), ["白酒", "鸡蛋"]);
    assert_eq!(names(&kb, KbEntityType::Examination), ["胃镜"]);
    assert_eq!(names(&kb, KbEntityType::Department), ["肝胆外科", "肿瘤科"]);
}

#[test]
fn duplicate_disease_merges() {
    let kb = parse_kb(FIVE).unwrap();
    let liver = &kb.entries[0];
    assert_eq!(liver.description.as_deref(), Some("原发或继发"));
    assert_eq!(liver.treatments, ["手术治疗"]);
    let complications: Vec<&str> =
        liver.relations.iter().filter(|(r, _)| *r == KbRelation::Complication).map(|(_, t)| t.as_str()).collect();
    assert_eq!(complications, ["肝硬化", "胃炎"]);
}

#[test]
fn five_disease_graph() {
    let kb = parse_kb(FIVE).unwrap();
    assert_eq!(kb_to_triples(&kb.entries).len(), 15);
    let mut g = KnowledgeGraph::default();
    insert_into_graph(&kb, &mut g).unwrap();
    assert_eq!(g.node_count(), 15);
    assert_eq!(g.triple_count(), 15);
    assert!(g.nodes().all(|n| n.origin == Origin::Kb));
    let liver = g.node(&NodeId::new("Disease", "肝癌")).unwrap();
    assert_eq!(liver.attributes["treatments"], "手术治疗");
    let symptoms: Vec<&str> =
        pattern_query(&g, "Disease", "肝癌", "HasSymptom").iter().map(|n| n.name.as_str()).collect();
    assert_eq!(symptoms, ["腹痛", "黄疸"]);
    let food: Vec<&str> =
        pattern_query(&g, "Disease", "肝硬化", "RecommendedFood").iter().map(|n| n.name.as_str()).collect();
    assert_eq!(food, ["鸡蛋"]);
    assert_eq!(g.incoming(&NodeId::new("Symptom", "腹痛")).count(), 2);
}

#[test]
fn bundled_fixture_loads() {
    let kb = load_kb(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/kb_small.jsonl")).unwrap();
    assert!(kb.warnings.is_empty(), "{:?}", kb.warnings);
    let mut g = KnowledgeGraph::default();
    insert_into_graph(&kb, &mut g).unwrap();
    let total: usize = KbEntityType::ALL.iter().map(|t| kb.catalogs.count(*t)).sum();
    assert_eq!(g.node_count(), total);
    assert_eq!(g.triple_count(), kb_to_triples(&kb.entries).len());
    g.check_consistency().unwrap();
    for t in g.triples() {
        assert_eq!(g.node(&t.head).unwrap().label, "Disease");
    }
}

#[test]
fn rejects_bad_headers() {
    assert!(parse_kb(r#"{"name":"肝癌"}"#).is_err());
    assert!(parse_kb(r#"{"format":"other","schema_version":1}"#).is_err());
    assert!(parse_kb(r#"{"format":"emrkg-kb","schema_version":2}"#).is_err());
}
