//! Building a disease knowledge graph from annotated clinical records.
//!
//! The pipeline runs in stages, one module each:
//!
//! * [`corpus`]: brat standoff parsing, sentence segmentation, BIO tagging
//!   and dataset splitting.
//! * [`derm`]: per-epoch entity replacement and masking augmentation.
//! * [`tagger`]: character BiLSTM-CRF entity recognizer.
//! * [`metrics`]: strict entity-level precision, recall and F1.
//! * [`kb`]: loading the external disease knowledge base.
//! * [`fusion`]: TF-IDF alignment of extracted names to knowledge-base
//!   entities and node merging.
//! * [`graph`]: the in-memory property graph with pattern queries,
//!   persistence and Cypher/CSV export.

pub mod corpus;
pub mod derm;
pub mod fusion;
pub mod graph;
pub mod kb;
pub mod metrics;
pub mod seed;
pub mod tagger;
