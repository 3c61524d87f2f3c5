//! Dynamic entity replacement and masking.
//!
//! Each training epoch, every sentence independently draws one action:
//! replace one entity with another surface of the same type, mask some
//! characters of one entity, or leave the sentence alone. Augmentation always
//! starts from the pristine corpus, so changes never compound across epochs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{from_bio, AnnotatedDocument, BioSentence, EntitySchema, Tag, TypedSpan};

/// Reserved token that stands in for a masked character.
pub const MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Error, PartialEq)]
pub enum DermError {
    #[error("invalid DERM configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {reason}")]
    DictionaryFormat { line: usize, reason: String },
    #[error("entity type {0:?} is not in the schema")]
    UnknownType(String),
}

/// Surface forms per entity type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDictionary {
    pub by_type: BTreeMap<String, BTreeSet<String>>,
}

impl EntityDictionary {
    pub fn insert(&mut self, label: &str, surface: &str) {
        let surface = surface.trim();
        if !surface.is_empty() {
            self.by_type.entry(label.to_string()).or_default().insert(surface.to_string());
        }
    }

    pub fn surfaces(&self, label: &str) -> impl Iterator<Item = &str> {
        self.by_type.get(label).into_iter().flatten().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_type.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parses `type\tsurface` lines. Blank lines and `#` comments are ignored.
    pub fn parse(content: &str, schema: &EntitySchema) -> Result<Self, DermError> {
        let mut dict = Self::default();
        for (i, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, surface) = line.split_once('\t').ok_or_else(|| DermError::DictionaryFormat {
                line: i + 1,
                reason: "expected `type\\tsurface`".into(),
            })?;
            let label = schema.resolve(label.trim()).ok_or_else(|| DermError::UnknownType(label.to_string()))?;
            if surface.trim().is_empty() {
                return Err(DermError::DictionaryFormat { line: i + 1, reason: "empty surface".into() });
            }
            dict.insert(label, surface);
        }
        Ok(dict)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (label, surfaces) in &self.by_type {
            for s in surfaces {
                out.push_str(label);
                out.push('\t');
                out.push_str(s);
                out.push('\n');
            }
        }
        out
    }
}

/// Collects entity surfaces from annotated documents, merged with optional
/// per-type name lists (e.g. from a knowledge base).
pub fn build_dictionary(
    docs: &[AnnotatedDocument],
    kb_names: Option<&BTreeMap<String, Vec<String>>>,
    schema: &EntitySchema,
) -> Result<EntityDictionary, DermError> {
    let mut dict = EntityDictionary::default();
    for doc in docs {
        for span in &doc.spans {
            dict.insert(&span.label, &span.surface);
        }
    }
    if let Some(kb) = kb_names {
        for (label, names) in kb {
            let label = schema.resolve(label).ok_or_else(|| DermError::UnknownType(label.clone()))?;
            for name in names {
                dict.insert(label, name);
            }
        }
    }
    if dict.is_empty() {
        log::warn!("entity dictionary is empty; replacement will always degrade to no-op");
    }
    Ok(dict)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DermConfig {
    pub p_replace: f64,
    pub p_mask: f64,
    pub p_noop: f64,
    /// Entities up to this length get exactly one masked character.
    pub short_threshold: usize,
    pub mask_fraction: f64,
    pub mask_symbol: String,
}

impl Default for DermConfig {
    fn default() -> Self {
        Self {
            p_replace: 0.30,
            p_mask: 0.30,
            p_noop: 0.40,
            short_threshold: 5,
            mask_fraction: 0.20,
            mask_symbol: MASK_TOKEN.to_string(),
        }
    }
}

impl DermConfig {
    pub fn validate(&self) -> Result<(), DermError> {
        let probs = [self.p_replace, self.p_mask, self.p_noop];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(DermError::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DermError::InvalidConfig("probabilities must sum to 1".into()));
        }
        if self.short_threshold == 0 {
            return Err(DermError::InvalidConfig("short_threshold must be at least 1".into()));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction <= 1.0) {
            return Err(DermError::InvalidConfig("mask_fraction must lie in (0, 1]".into()));
        }
        if self.mask_symbol.is_empty() {
            return Err(DermError::InvalidConfig("mask_symbol must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DermAction {
    Replace,
    Mask,
    Noop,
}

impl fmt::Display for DermAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DermAction::Replace => "Replace",
            DermAction::Mask => "Mask",
            DermAction::Noop => "Noop",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DermOutcome {
    pub sentence: BioSentence,
    pub action: DermAction,
    /// The affected entity in the output sentence's coordinates.
    pub affected_span: Option<TypedSpan>,
}

impl DermOutcome {
    fn noop(sentence: &BioSentence) -> Self {
        Self { sentence: sentence.clone(), action: DermAction::Noop, affected_span: None }
    }
}

/// Number of characters to mask in an entity of `entity_length` characters:
/// one for short entities, otherwise `mask_fraction` of the length rounded
/// half-up, never less than one.
pub fn mask_count(entity_length: usize, config: &DermConfig) -> usize {
    if entity_length <= config.short_threshold {
        1
    } else {
        let scaled = (config.mask_fraction * entity_length as f64 + 0.5).floor() as usize;
        scaled.clamp(1, entity_length)
    }
}

/// Replaces the entity `span` with `surface`, re-tagging it as one entity of
/// the same type.
pub fn replace_entity(sentence: &BioSentence, span: &TypedSpan, surface: &str) -> BioSentence {
    let new_tokens: Vec<String> = surface.chars().map(String::from).collect();
    let mut tokens = Vec::with_capacity(sentence.len() + new_tokens.len());
    let mut tags = Vec::with_capacity(tokens.capacity());
    tokens.extend_from_slice(&sentence.tokens[..span.start]);
    tags.extend_from_slice(&sentence.tags[..span.start]);
    for (i, tok) in new_tokens.into_iter().enumerate() {
        tokens.push(tok);
        tags.push(if i == 0 { Tag::B(span.label.clone()) } else { Tag::I(span.label.clone()) });
    }
    tokens.extend_from_slice(&sentence.tokens[span.end..]);
    tags.extend_from_slice(&sentence.tags[span.end..]);
    BioSentence { tokens, tags }
}

/// Replaces the tokens at `positions` with `symbol`; tags are untouched.
pub fn mask_positions(sentence: &BioSentence, positions: &[usize], symbol: &str) -> BioSentence {
    let mut out = sentence.clone();
    for &p in positions {
        out.tokens[p] = symbol.to_string();
    }
    out
}

/// Applies one randomly drawn augmentation to `sentence`.
///
/// Sentences without entities, and replacements with no alternative surface
/// of the chosen entity's type, fall back to an unchanged sentence reported
/// as [`DermAction::Noop`].
pub fn derm_transform<R: Rng + ?Sized>(
    sentence: &BioSentence,
    dict: &EntityDictionary,
    config: &DermConfig,
    rng: &mut R,
) -> DermOutcome {
    let u: f64 = rng.gen();
    let action = if u < config.p_replace {
        DermAction::Replace
    } else if u < config.p_replace + config.p_mask {
        DermAction::Mask
    } else {
        DermAction::Noop
    };
    if action == DermAction::Noop {
        return DermOutcome::noop(sentence);
    }
    let spans = match from_bio(sentence) {
        Ok(s) if !s.is_empty() => s,
        _ => return DermOutcome::noop(sentence),
    };
    let span = &spans[rng.gen_range(0..spans.len())];

    match action {
        DermAction::Replace => {
            let original = sentence.surface(span);
            let candidates: Vec<&str> = dict.surfaces(&span.label).filter(|s| *s != original).collect();
            if candidates.is_empty() {
                return DermOutcome::noop(sentence);
            }
            let surface = candidates[rng.gen_range(0..candidates.len())];
            let new_len = surface.chars().count();
            DermOutcome {
                sentence: replace_entity(sentence, span, surface),
                action,
                affected_span: Some(TypedSpan::new(span.label.clone(), span.start, span.start + new_len)),
            }
        }
        DermAction::Mask => {
            let k = mask_count(span.len(), config);
            let mut positions: Vec<usize> = sample(rng, span.len(), k).into_iter().map(|i| span.start + i).collect();
            positions.sort_unstable();
            DermOutcome {
                sentence: mask_positions(sentence, &positions, &config.mask_symbol),
                action,
                affected_span: Some(span.clone()),
            }
        }
        DermAction::Noop => unreachable!(),
    }
}

/// Seed for sentence `index` of an epoch whose seed is `epoch_seed`.
pub fn sentence_seed(epoch_seed: u64, index: usize) -> u64 {
    epoch_seed ^ index as u64
}

/// Augments every sentence independently; sentence `i` draws from a
/// generator seeded with `seed ^ i`, so the result does not depend on
/// processing order.
pub fn augment_epoch(
    sentences: &[BioSentence],
    dict: &EntityDictionary,
    config: &DermConfig,
    seed: u64,
) -> Vec<DermOutcome> {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(sentence_seed(seed, i));
            derm_transform(s, dict, config, &mut rng)
        })
        .collect()
}

/// Renders one provenance line per outcome: action, then the affected span
/// as `label\tstart\tend`, or `-` when nothing was changed.
pub fn provenance_lines(outcomes: &[DermOutcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        match &o.affected_span {
            Some(s) => out.push_str(&format!("{}\t{}\t{}\t{}\n", o.action, s.label, s.start, s.end)),
            None => out.push_str(&format!("{}\t-\n", o.action)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{check_well_formed, EntitySpan};

    /// 伴左上腹隐痛、呕吐、腹泻等 with 左上腹 as BodyCheck and 呕吐, 腹泻 as
    /// Symptom.
    fn table_sentence() -> BioSentence {
        let text = "伴左上腹隐痛、呕吐、腹泻等";
        let mut tags = vec![Tag::O; text.chars().count()];
        for (label, start, end) in [("BodyCheck", 1, 4), ("Symptom", 7, 9), ("Symptom", 10, 12)] {
            tags[start] = Tag::B(label.into());
            for t in &mut tags[start + 1..end] {
                *t = Tag::I(label.into());
            }
        }
        BioSentence::new(text.chars().map(String::from).collect(), tags).unwrap()
    }

    fn doc(spans: &[(&str, &str)]) -> AnnotatedDocument {
        AnnotatedDocument {
            doc_id: "d".into(),
            text: String::new(),
            spans: spans
                .iter()
                .map(|(l, s)| EntitySpan {
                    id: "T1".into(),
                    label: l.to_string(),
                    start: 0,
                    end: s.chars().count(),
                    surface: s.to_string(),
                })
                .collect(),
            rejected: vec![],
        }
    }

    #[test]
    fn dictionary_deduplicates_and_merges() {
        let schema = EntitySchema::default();
        let docs = [doc(&[("Symptom", "呕吐")]), doc(&[("Symptom", "呕吐"), ("Disease", "肝癌")])];
        let dict = build_dictionary(&docs, None, &schema).unwrap();
        assert_eq!(dict.surfaces("Symptom").collect::<Vec<_>>(), ["呕吐"]);

        let kb = BTreeMap::from([("symptom".to_string(), vec!["腹泻".to_string(), "呕吐".to_string()])]);
        let dict = build_dictionary(&docs, Some(&kb), &schema).unwrap();
        let mut manual: BTreeSet<&str> = ["呕吐"].into();
        manual.extend(["腹泻", "呕吐"]);
        assert_eq!(dict.surfaces("Symptom").collect::<BTreeSet<_>>(), manual);
        assert_eq!(dict.surfaces("Disease").collect::<Vec<_>>(), ["肝癌"]);

        assert!(build_dictionary(&[], None, &schema).unwrap().is_empty());
        let bad = BTreeMap::from([("Food".to_string(), vec!["鸡蛋".to_string()])]);
        assert!(build_dictionary(&[], Some(&bad), &schema).is_err());
    }

    #[test]
    fn dictionary_file_round_trip() {
        let schema = EntitySchema::default();
        let dict = EntityDictionary::parse("# comment\nSymptom\t呕吐\ndisease\t肝癌\n\n", &schema).unwrap();
        assert_eq!(dict.len(), 2);
        assert_eq!(EntityDictionary::parse(&dict.to_tsv(), &schema).unwrap(), dict);
        assert!(EntityDictionary::parse("Symptom 呕吐\n", &schema).is_err());
        assert!(EntityDictionary::parse("Food\t鸡蛋\n", &schema).is_err());
    }

    #[test]
    fn mask_count_rule() {
        let c = DermConfig::default();
        for len in 1..=5 {
            assert_eq!(mask_count(len, &c), 1);
        }
        assert_eq!(mask_count(7, &c), 1); // round(1.4)
        assert_eq!(mask_count(8, &c), 2); // round(1.6)
        assert_eq!(mask_count(10, &c), 2);
        assert_eq!(mask_count(13, &c), 3); // round(2.6)
        assert_eq!(mask_count(12, &c), 2); // round(2.4)
        assert_eq!(mask_count(15, &c), 3);
        assert_eq!(mask_count(18, &c), 4); // round(3.6)
        let mut prev = 0;
        for len in 6..200 {
            let k = mask_count(len, &c);
            assert!(k >= prev);
            prev = k;
        }
    }

    #[test]
    fn table_replacement_row() {
        let s = table_sentence();
        let out = replace_entity(&s, &TypedSpan::new("Symptom", 10, 12), "头痛");
        assert_eq!(out.text(), "伴左上腹隐痛、呕吐、头痛等");
        assert_eq!(out.tags, s.tags);
    }

    #[test]
    fn table_masking_row() {
        let s = table_sentence();
        let out = mask_positions(&s, &[3], MASK_TOKEN);
        assert_eq!(out.text(), "伴左上[MASK]隐痛、呕吐、腹泻等");
        assert_eq!(out.len(), s.len());
        assert_eq!(out.tags, s.tags);
    }

    #[test]
    fn longer_replacement_retags() {
        let s = table_sentence();
        let out = replace_entity(&s, &TypedSpan::new("Symptom", 7, 9), "恶心呕吐");
        assert_eq!(out.len(), s.len() + 2);
        let tags: Vec<String> = out.tags[7..11].iter().map(Tag::to_string).collect();
        assert_eq!(tags, ["B-Symptom", "I-Symptom", "I-Symptom", "I-Symptom"]);
        let spans = from_bio(&out).unwrap();
        assert_eq!(spans.len(), 3);
        assert_eq!(spans[1], TypedSpan::new("Symptom", 7, 11));
    }

    fn full_dict() -> EntityDictionary {
        let mut d = EntityDictionary::default();
        for s in ["左上腹", "右下腹", "剑突下"] {
            d.insert("BodyCheck", s);
        }
        for s in ["呕吐", "腹泻", "头痛", "发热"] {
            d.insert("Symptom", s);
        }
        d
    }

    #[test]
    fn transform_preserves_entity_count_and_types() {
        let s = table_sentence();
        let dict = full_dict();
        let config = DermConfig::default();
        let before = from_bio(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let o = derm_transform(&s, &dict, &config, &mut rng);
            check_well_formed(&o.sentence.tags).unwrap();
            let after = from_bio(&o.sentence).unwrap();
            assert_eq!(after.len(), before.len());
            let labels = |v: &[TypedSpan]| v.iter().map(|s| s.label.clone()).collect::<Vec<_>>();
            assert_eq!(labels(&after), labels(&before));
            match o.action {
                DermAction::Noop => assert_eq!(o.sentence, s),
                DermAction::Mask => {
                    assert_eq!(o.sentence.tags, s.tags);
                    let span = o.affected_span.unwrap();
                    let masked = o.sentence.tokens.iter().filter(|t| *t == MASK_TOKEN).count();
                    assert_eq!(masked, mask_count(span.len(), &config));
                }
                DermAction::Replace => {
                    let span = o.affected_span.unwrap();
                    assert!(after.contains(&span));
                    assert!(dict.surfaces(&span.label).any(|x| x == o.sentence.surface(&span)));
                }
            }
        }
    }

    #[test]
    fn degrades_to_noop() {
        let config = DermConfig { p_replace: 1.0, p_mask: 0.0, p_noop: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plain = BioSentence::untagged("无殊");
        let o = derm_transform(&plain, &full_dict(), &config, &mut rng);
        assert_eq!((o.action, o.sentence), (DermAction::Noop, plain));

        let s = table_sentence();
        let o = derm_transform(&s, &EntityDictionary::default(), &config, &mut rng);
        assert_eq!(o.action, DermAction::Noop);
        assert_eq!(o.sentence, s);
    }

    #[test]
    fn augment_epoch_is_deterministic() {
        let sentences = vec![table_sentence(); 50];
        let config = DermConfig::default();
        let a = augment_epoch(&sentences, &full_dict(), &config, 7);
        let b = augment_epoch(&sentences, &full_dict(), &config, 7);
        assert_eq!(a, b);
        let c = augment_epoch(&sentences, &full_dict(), &config, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn all_noop_config_leaves_input() {
        let sentences = vec![table_sentence(); 20];
        let config = DermConfig { p_replace: 0.0, p_mask: 0.0, p_noop: 1.0, ..Default::default() };
        for o in augment_epoch(&sentences, &full_dict(), &config, 1) {
            assert_eq!(o.sentence, sentences[0]);
            assert_eq!(o.action, DermAction::Noop);
        }
    }

    #[test]
    fn config_validation() {
        assert!(DermConfig::default().validate().is_ok());
        let bad = DermConfig { p_noop: 0.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DermConfig { mask_fraction: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DermConfig { short_threshold: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn provenance_format() {
        let s = table_sentence();
        let outcomes = vec![
            DermOutcome::noop(&s),
            DermOutcome {
                sentence: s.clone(),
                action: DermAction::Mask,
                affected_span: Some(TypedSpan::new("BodyCheck", 1, 4)),
            },
        ];
        assert_eq!(provenance_lines(&outcomes), "Noop\t-\nMask\tBodyCheck\t1\t4\n");
    }
}
