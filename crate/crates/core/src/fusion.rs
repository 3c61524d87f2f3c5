//! TF-IDF alignment of extracted entity names to knowledge-base entities,
//! and merging of aligned nodes.
//!
//! Names are split into character n-grams (orders 1 and 2 by default).
//! Term frequency is `count / |terms|`. Inverse document frequency is
//! `ln(|D| / df)` for a term seen in `df` catalog names; a term seen in no
//! catalog name gets `ln(|D|) + 1`, which is what the smoothed form
//! `ln(|D| / (1 + df)) + 1` gives at `df = 0`. When every catalog term has
//! IDF 0 (one name, or identical names) all terms are weighted 1 instead.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{normalize_name, GraphError, KnowledgeGraph, NodeId, Origin};

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const ALIGNED_FROM: &str = "aligned_from";

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("document {0:?} has no terms")]
    EmptyDocument(String),
    #[error("cannot build an index from an empty catalog")]
    EmptyCatalog,
    #[error("alignment target {0} is not in the graph")]
    DanglingAlignment(NodeId),
    #[error("invalid fusion configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub threshold: f64,
    pub ngram_orders: Vec<usize>,
    /// Node labels whose EMR-side nodes are aligned.
    pub labels: Vec<String>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, ngram_orders: vec![1, 2], labels: vec!["Disease".into()] }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(FusionError::InvalidConfig(format!("threshold {} is outside [0, 1]", self.threshold)));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(FusionError::InvalidConfig("n-gram orders must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// Character n-grams of `name` for each order, in order of appearance.
pub fn ngrams(name: &str, orders: &[usize]) -> Vec<String> {
    let chars: Vec<char> = name.chars().collect();
    let mut out = Vec::new();
    for &n in orders {
        if n == 0 || n > chars.len() {
            continue;
        }
        out.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
    }
    out
}

pub fn term_frequency(term: &str, document: &[String]) -> Result<f64, FusionError> {
    if document.is_empty() {
        return Err(FusionError::EmptyDocument(String::new()));
    }
    let count = document.iter().filter(|t| *t == term).count();
    Ok(count as f64 / document.len() as f64)
}

/// IDF of `term` over `corpus`; 0 for an empty corpus.
pub fn inverse_document_frequency(term: &str, corpus: &[Vec<String>]) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let df = corpus.iter().filter(|d| d.iter().any(|t| t == term)).count();
    idf_from_counts(corpus.len(), df)
}

fn idf_from_counts(documents: usize, df: usize) -> f64 {
    let d = documents as f64;
    if df == 0 {
        smoothed_idf(documents, 0)
    } else {
        (d / df as f64).ln()
    }
}

/// `ln(|D| / (1 + df)) + 1`.
pub fn smoothed_idf(documents: usize, df: usize) -> f64 {
    (documents as f64 / (1 + df) as f64).ln() + 1.0
}

type SparseVector = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfIndex {
    orders: Vec<usize>,
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<f64>,
    names: Vec<String>,
    vectors: Vec<SparseVector>,
    uniform: bool,
}

fn normalized(mut v: SparseVector) -> SparseVector {
    let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in &mut v {
            *w /= norm;
        }
    }
    v
}

impl TfIdfIndex {
    /// Builds the index over the distinct `names`, stored in sorted order.
    pub fn build<S: AsRef<str>>(names: &[S], orders: &[usize]) -> Result<Self, FusionError> {
        let names: Vec<String> =
            names.iter().map(|n| normalize_name(n.as_ref())).collect::<BTreeSet<_>>().into_iter().collect();
        if names.is_empty() {
            return Err(FusionError::EmptyCatalog);
        }
        let docs: Vec<Vec<String>> = names.iter().map(|n| ngrams(n, orders)).collect();
        if let Some(i) = docs.iter().position(Vec::is_empty) {
            return Err(FusionError::EmptyDocument(names[i].clone()));
        }

        let terms: BTreeSet<&String> = docs.iter().flatten().collect();
        let vocabulary: BTreeMap<String, usize> = terms.into_iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut df = vec![0usize; vocabulary.len()];
        for d in &docs {
            let distinct: BTreeSet<usize> = d.iter().map(|t| vocabulary[t]).collect();
            for c in distinct {
                df[c] += 1;
            }
        }
        let mut idf: Vec<f64> = df.iter().map(|&k| idf_from_counts(docs.len(), k)).collect();
        let uniform = idf.iter().all(|&w| w == 0.0);
        if uniform {
            log::debug!("all IDF weights are zero; falling back to uniform term weights");
            idf.iter_mut().for_each(|w| *w = 1.0);
        }

        let mut index = TfIdfIndex { orders: orders.to_vec(), vocabulary, idf, names, vectors: Vec::new(), uniform };
        index.vectors = docs.iter().map(|d| index.weights(d).0).collect();
        let zero = index.vectors.iter().filter(|v| v.is_empty()).count();
        if zero > 0 {
            log::debug!("{zero} catalog names have an all-zero TF-IDF vector");
        }
        Ok(index)
    }

    /// Normalized vector over indexed terms plus the squared weight of
    /// terms outside the vocabulary (unnormalized).
    fn weights(&self, terms: &[String]) -> (SparseVector, f64) {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in terms {
            *counts.entry(t).or_default() += 1;
        }
        let total = terms.len() as f64;
        let unseen_idf = if self.uniform { 1.0 } else { smoothed_idf(self.names.len(), 0) };
        let mut known = Vec::new();
        let mut unseen_sq = 0.0;
        for (t, c) in counts {
            let tf = c as f64 / total;
            match self.vocabulary.get(t) {
                Some(&col) => {
                    let w = tf * self.idf[col];
                    if w != 0.0 {
                        known.push((col, w));
                    }
                }
                None => unseen_sq += (tf * unseen_idf).powi(2),
            }
        }
        known.sort_by_key(|&(c, _)| c);
        if unseen_sq == 0.0 {
            return (normalized(known), 0.0);
        }
        let norm = (known.iter().map(|(_, w)| w * w).sum::<f64>() + unseen_sq).sqrt();
        for (_, w) in &mut known {
            *w /= norm;
        }
        (known, unseen_sq / (norm * norm))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    /// Dense copy of the stored (L2-normalized) vector of catalog row `row`.
    pub fn dense_vector(&self, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.vocabulary.len()];
        for &(c, w) in &self.vectors[row] {
            out[c] = w;
        }
        out
    }

    /// Cosine similarity between `query` and every catalog name, in row order.
    /// A query equal to a catalog name scores 1 against it even when every
    /// term of that name has IDF 0.
    pub fn similarities(&self, query: &str) -> Vec<f64> {
        let query = normalize_name(query);
        let terms = ngrams(&query, &self.orders);
        let (q, unseen) = self.weights(&terms);
        self.vectors
            .iter()
            .zip(&self.names)
            .map(|(d, name)| if *name == query { 1.0 } else { similarity(&q, unseen, d) })
            .collect()
    }
}

fn similarity(q: &SparseVector, unseen: f64, d: &SparseVector) -> f64 {
    if q.is_empty() || d.is_empty() {
        return 0.0;
    }
    if unseen == 0.0 && q == d {
        return 1.0;
    }
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < q.len() && j < d.len() {
        match q[i].0.cmp(&d[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += q[i].1 * d[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub label: String,
    pub source: String,
    pub target: Option<String>,
    /// Best cosine similarity found, reported even below the threshold.
    pub similarity: f64,
    pub threshold: f64,
}

/// Best catalog match for `query`. Ties go to the smallest name; the match
/// is kept only when its similarity is at least `threshold`.
pub fn align(label: &str, query: &str, index: &TfIdfIndex, threshold: f64) -> Alignment {
    let mut best: Option<(usize, f64)> = None;
    for (row, s) in index.similarities(query).into_iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((row, s));
        }
    }
    let (row, sim) = best.expect("index is never empty");
    Alignment {
        label: label.to_string(),
        source: query.to_string(),
        target: (sim >= threshold).then(|| index.names[row].clone()),
        similarity: sim,
        threshold,
    }
}

/// Builds one index per configured label from the knowledge-base nodes of
/// the graph. Labels without knowledge-base nodes are left out.
pub fn catalog_indexes(
    graph: &KnowledgeGraph,
    config: &FusionConfig,
) -> Result<BTreeMap<String, TfIdfIndex>, FusionError> {
    config.validate()?;
    let mut out = BTreeMap::new();
    for label in &config.labels {
        let names: Vec<&str> =
            graph.nodes().filter(|n| &n.label == label && n.origin != Origin::Emr).map(|n| n.name.as_str()).collect();
        if !names.is_empty() {
            out.insert(label.clone(), TfIdfIndex::build(&names, &config.ngram_orders)?);
        }
    }
    Ok(out)
}

/// Aligns every EMR-only node of the configured labels against the
/// knowledge-base nodes of the same label.
pub fn align_graph(graph: &KnowledgeGraph, config: &FusionConfig) -> Result<Vec<Alignment>, FusionError> {
    let indexes = catalog_indexes(graph, config)?;
    let mut out = Vec::new();
    for label in &config.labels {
        let mut sources: Vec<&str> =
            graph.nodes().filter(|n| &n.label == label && n.origin == Origin::Emr).map(|n| n.name.as_str()).collect();
        sources.sort_unstable();
        for s in sources {
            out.push(match indexes.get(label) {
                Some(index) => align(label, s, index, config.threshold),
                None => Alignment {
                    label: label.clone(),
                    source: s.to_string(),
                    target: None,
                    similarity: 0.0,
                    threshold: config.threshold,
                },
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    /// `(label, source, target, similarity)` of every node merged in this call.
    pub merged: Vec<(String, String, String, f64)>,
    /// `(label, source)` of nodes left in place.
    pub unmatched: Vec<(String, String)>,
    /// Matched alignments whose source node was already gone.
    pub already_fused: usize,
    /// Re-pointed triples that coincided with an existing triple.
    pub collapsed_triples: usize,
}

/// Merges every matched source node into its target: incident triples are
/// re-pointed, the source node is removed, its name is recorded in the
/// target's `aligned_from` attribute and the target becomes `Both`.
/// Applying the same alignments again leaves the graph unchanged.
pub fn fuse(graph: &mut KnowledgeGraph, alignments: &[Alignment]) -> Result<FusionReport, FusionError> {
    for a in alignments {
        if let Some(t) = &a.target {
            let id = NodeId::new(&a.label, t);
            if graph.node(&id).is_none() {
                return Err(FusionError::DanglingAlignment(id));
            }
        }
    }
    let mut report = FusionReport::default();
    for a in alignments {
        let Some(target) = &a.target else {
            report.unmatched.push((a.label.clone(), a.source.clone()));
            continue;
        };
        let from = NodeId::new(&a.label, &a.source);
        let to = NodeId::new(&a.label, target);
        if from == to || graph.node(&from).is_none() {
            report.already_fused += 1;
            continue;
        }
        let surface = graph.node(&from).map(|n| n.name.clone()).unwrap_or_default();
        report.collapsed_triples += graph.merge_node_into(&from, &to)?;
        let node = graph.node(&to).expect("target checked above");
        let mut sources: BTreeSet<String> =
            node.attributes.get(ALIGNED_FROM).map(|s| s.split('、').map(str::to_string).collect()).unwrap_or_default();
        sources.insert(surface);
        let joined = sources.into_iter().collect::<Vec<_>>().join("、");
        graph.set_attribute(&to, ALIGNED_FROM, joined)?;
        graph.set_origin(&to, Origin::Both)?;
        report.merged.push((a.label.clone(), a.source.clone(), target.clone(), a.similarity));
    }
    Ok(report)
}
