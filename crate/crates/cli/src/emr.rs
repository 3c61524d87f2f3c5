//! Reading the clinical-record directory and the entity table.
//!
//! A record `P0001` is `P0001.txt` (the text), `P0001.ann` (brat standoff
//! entities) and an optional `P0001.meta` with `key\tvalue` lines holding
//! patient attributes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use emrkg_core::corpus::{parse_ann, segment, spans_from_tags, AnnotatedDocument, BioSentence, EntitySchema};
use emrkg_core::tagger::{predict, TaggerModel};

use crate::DataError;

#[derive(Debug, Clone)]
pub struct EmrRecord {
    pub doc: AnnotatedDocument,
    pub meta: BTreeMap<String, String>,
}

/// A recognized or annotated entity in document coordinates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct EntityRow {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub label: String,
    pub surface: String,
}

/// Record ids (file stems of `.txt` files), sorted.
pub fn record_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading corpus directory {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(DataError(format!("no .txt records in {}", dir.display())).into());
    }
    Ok(ids)
}

pub fn parse_meta(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .collect()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn sibling(dir: &Path, id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{id}.{ext}"))
}

/// Loads every record. With `annotated`, a missing `.ann` is an error;
/// otherwise annotations are not read.
pub fn load_records(dir: &Path, schema: &EntitySchema, annotated: bool) -> Result<Vec<EmrRecord>> {
    let mut out = Vec::new();
    for id in record_ids(dir)? {
        let text = read(&sibling(dir, &id, "txt"))?;
        let doc = if annotated {
            let ann = read(&sibling(dir, &id, "ann"))?;
            parse_ann(&id, &ann, &text, schema).with_context(|| format!("{id}.ann"))?
        } else {
            AnnotatedDocument { doc_id: id.clone(), text, ..Default::default() }
        };
        let meta_path = sibling(dir, &id, "meta");
        let meta = if meta_path.exists() { parse_meta(&read(&meta_path)?) } else { BTreeMap::new() };
        out.push(EmrRecord { doc, meta });
    }
    Ok(out)
}

/// Every file a record directory contributes, for input digests.
pub fn record_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for id in record_ids(dir)? {
        for ext in ["txt", "ann", "meta"] {
            let p = sibling(dir, &id, ext);
            if p.exists() {
                files.push(p);
            }
        }
    }
    Ok(files)
}

pub fn gold_entities(records: &[EmrRecord]) -> Vec<EntityRow> {
    let mut rows: Vec<EntityRow> = records
        .iter()
        .flat_map(|r| {
            r.doc.spans.iter().map(|s| EntityRow {
                doc_id: r.doc.doc_id.clone(),
                start: s.start,
                end: s.end,
                label: s.label.clone(),
                surface: s.surface.clone(),
            })
        })
        .collect();
    rows.sort();
    rows
}

/// Segments each record's text and tags it with `model`.
pub fn predict_entities(model: &TaggerModel, records: &[EmrRecord], max_len: usize) -> Result<Vec<EntityRow>> {
    let mut rows = Vec::new();
    for r in records {
        let bare = AnnotatedDocument { spans: Vec::new(), rejected: Vec::new(), ..r.doc.clone() };
        let segments = segment(&bare, max_len)?;
        let sentences: Vec<BioSentence> = segments.iter().map(|s| BioSentence::untagged(&s.text())).collect();
        let tagged = predict(model, &sentences)?;
        for (seg, sent) in segments.iter().zip(&tagged) {
            for span in spans_from_tags(&sent.tags)? {
                rows.push(EntityRow {
                    doc_id: r.doc.doc_id.clone(),
                    start: seg.offset + span.start,
                    end: seg.offset + span.end,
                    label: span.label.clone(),
                    surface: seg.chars[span.start..span.end].iter().collect(),
                });
            }
        }
    }
    rows.sort();
    Ok(rows)
}

const ENTITY_HEADER: &str = "doc_id\tstart\tend\tlabel\tsurface";

pub fn write_entities(rows: &[EntityRow]) -> String {
    let mut out = format!("{ENTITY_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.doc_id, r.start, r.end, r.label, r.surface));
    }
    out
}

pub fn read_entities(text: &str) -> Result<Vec<EntityRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == ENTITY_HEADER => {}
        _ => return Err(DataError(format!("entity table must start with the header `{ENTITY_HEADER}`")).into()),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(DataError(format!("entity table line {}: expected 5 fields", i + 1)).into());
        }
        let num =
            |s: &str| s.parse::<usize>().with_context(|| format!("entity table line {}: bad offset {s:?}", i + 1));
        rows.push(EntityRow {
            doc_id: f[0].into(),
            start: num(f[1])?,
            end: num(f[2])?,
            label: f[3].into(),
            surface: f[4].into(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_lines() {
        let m = parse_meta("nation\t汉族\nage\t56\n\nbroken line\n");
        assert_eq!(m.len(), 2);
        assert_eq!(m["age"], "56");
    }

    #[test]
    fn entity_table_round_trip() {
        let rows =
            vec![EntityRow {
                doc_id: "P1".into(), start: 3, end: 5, label: "Disease".into(), surface: "肝癌".into()
            }];
        assert_eq!(read_entities(&write_entities(&rows)).unwrap(), rows);
        assert!(read_entities("P1\t3\t5\tDisease\t肝癌\n").is_err());
    }
}
