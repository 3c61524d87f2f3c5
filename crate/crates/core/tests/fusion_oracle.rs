use std::collections::BTreeMap;

use emrkg_core::fusion::{align, align_graph, fuse, Alignment, FusionConfig, FusionError, TfIdfIndex, ALIGNED_FROM};
use emrkg_core::graph::{KnowledgeGraph, NodeId, Origin};
use proptest::prelude::*;

fn grams(name: &str) -> Vec<String> {
    let c: Vec<char> = name.chars().collect();
    let mut out: Vec<String> = c.iter().map(char::to_string).collect();
    out.extend(c.windows(2).map(|w| w.iter().collect()));
    out
}

fn weights(terms: &[String], idf: impl Fn(&str) -> f64) -> BTreeMap<String, f64> {
    let mut v = BTreeMap::new();
    for t in terms {
        *v.entry(t.clone()).or_insert(0.0) += idf(t) / terms.len() as f64;
    }
    v
}

fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().map(|(t, w)| w * b.get(t).unwrap_or(&0.0)).sum();
    let na = a.values().map(|w| w * w).sum::<f64>().sqrt();
    let nb = b.values().map(|w| w * w).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine of `query` against each name, computed term by term.
fn oracle(names: &[String], query: &str) -> Vec<f64> {
    let docs: Vec<Vec<String>> = names.iter().map(|n| grams(n)).collect();
    let n = docs.len() as f64;
    let df = |t: &str| docs.iter().filter(|d| d.iter().any(|x| x == t)).count();
    let uniform = docs.iter().flatten().all(|t| df(t) == docs.len());
    let idf = |t: &str| match df(t) {
        _ if uniform => 1.0,
        0 => n.ln() + 1.0,
        k => (n / k as f64).ln(),
    };
    let q = weights(&grams(query), idf);
    names.iter().zip(&docs).map(|(name, d)| if name == query { 1.0 } else { cosine(&q, &weights(d, idf)) }).collect()
}

#[test]
fn hand_computed_similarities() {
    let index = TfIdfIndex::build(&["肝癌", "肝炎"], &[1, 2]).unwrap();
    assert_eq!(index.names(), ["肝炎", "肝癌"]);
    let s = index.similarities("癌");
    assert_eq!(s[0], 0.0);
    assert!((s[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    assert_eq!(index.similarities("肝"), [0.0, 0.0]);
    assert_eq!(index.similarities("胃"), [0.0, 0.0]);
    assert_eq!(index.similarities("肝炎"), [1.0, 0.0]);

    let single = TfIdfIndex::build(&["肝癌"], &[1, 2]).unwrap();
    assert!(single.is_uniform());
    assert_eq!(single.similarities("肝癌"), [1.0]);
    assert!(matches!(TfIdfIndex::build::<&str>(&[], &[1, 2]), Err(FusionError::EmptyCatalog)));
}

#[test]
fn ties_go_to_the_smallest_name() {
    let index = TfIdfIndex::build(&["乙肝", "甲肝", "丙肝"], &[1]).unwrap();
    let a = align("Disease", "肝", &index, 0.0);
    assert_eq!(a.target.as_deref(), Some("丙肝"));
    let b = align("Disease", "甲乙", &index, 0.0);
    assert_eq!(b.target.as_deref(), Some("乙肝"));
}

const POOL: &[char] = &['肝', '癌', '硬', '化', '胆', '炎', '性', '原'];

fn name() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(POOL), 1..6).prop_map(|c| c.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn index_matches_oracle(names in proptest::collection::btree_set(name(), 1..8), query in name()) {
        let names: Vec<String> = names.into_iter().collect();
        let index = TfIdfIndex::build(&names, &[1, 2]).unwrap();
        let got = index.similarities(&query);
        let expected = oracle(&names, &query);
        for (g, e) in got.iter().zip(&expected) {
            prop_assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
        let a = align("Disease", &query, &index, 0.5);
        let best = expected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((a.similarity - best).abs() < 1e-12);
        prop_assert_eq!(a.target.is_some(), a.similarity >= 0.5);
        if names.contains(&query) {
            prop_assert_eq!(a.target.as_deref(), Some(query.as_str()));
        }
    }
}

fn fixture() -> KnowledgeGraph {
    let mut g = KnowledgeGraph::default();
    let none = BTreeMap::new;
    let kb = g.upsert_node("Disease", "原发性肝细胞癌", Origin::Kb, none()).unwrap();
    let comp = g.upsert_node("Disease", "门静脉高压", Origin::Kb, none()).unwrap();
    g.add_triple(&kb, "Complication", &comp).unwrap();
    g.upsert_node("Disease", "胆囊结石", Origin::Kb, none()).unwrap();
    g.add_patient_record(
        "P1",
        none(),
        &[("Disease".into(), "原发肝细胞癌".into()), ("Disease".into(), "阑尾炎".into())],
    )
    .unwrap();
    g.add_patient_record("P2", none(), &[("Disease".into(), "原发性肝细胞癌".into())]).unwrap();
    g
}

#[test]
fn fusion_repoints_patients() {
    let mut g = fixture();
    let config = FusionConfig { threshold: 0.5, ..FusionConfig::default() };
    let alignments = align_graph(&g, &config).unwrap();
    let sources: Vec<&str> = alignments.iter().map(|a| a.source.as_str()).collect();
    assert_eq!(sources, ["原发肝细胞癌", "阑尾炎"]);
    let report = fuse(&mut g, &alignments).unwrap();
    assert_eq!(report.merged.len(), 1);
    assert_eq!(report.unmatched, [("Disease".to_string(), "阑尾炎".to_string())]);
    assert!(g.find("Disease", "原发肝细胞癌").is_none());
    let target = g.find("Disease", "原发性肝细胞癌").unwrap();
    assert_eq!(target.origin, Origin::Both);
    assert_eq!(target.attributes[ALIGNED_FROM], "原发肝细胞癌");
    let patients: Vec<&str> = g.incoming(&target.id).map(|t| t.head.as_str()).collect();
    assert_eq!(patients, ["Patient:P1", "Patient:P2"]);
    g.check_consistency().unwrap();

    let before = g.clone();
    let again = fuse(&mut g, &alignments).unwrap();
    assert_eq!(g, before);
    assert_eq!(again.already_fused, 1);
}

#[test]
fn dangling_target_is_rejected_before_any_change() {
    let mut g = fixture();
    let before = g.clone();
    let bad = [
        Alignment {
            label: "Disease".into(),
            source: "阑尾炎".into(),
            target: Some("胆囊结石".into()),
            similarity: 1.0,
            threshold: 0.8,
        },
        Alignment {
            label: "Disease".into(),
            source: "原发肝细胞癌".into(),
            target: Some("不存在".into()),
            similarity: 1.0,
            threshold: 0.8,
        },
    ];
    match fuse(&mut g, &bad) {
        Err(FusionError::DanglingAlignment(id)) => assert_eq!(id, NodeId::new("Disease", "不存在")),
        other => panic!("{other:?}"),
    }
    assert_eq!(g, before);
}
