//! Standoff annotations, sentence segmentation and BIO conversion.
//!
//! Annotations follow the brat standoff convention: one `T` line per entity,
//! `<id>\t<label> <start> <end>\t<surface>`, with *character* offsets and an
//! exclusive end. Everything downstream of [`parse_ann`] works on character
//! positions, never bytes.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default maximum sentence length in characters.
pub const DEFAULT_MAX_LEN: usize = 50;

/// Characters that end a sentence. Newlines are handled separately because
/// they are dropped rather than kept with the sentence.
const SENTENCE_FINAL: [char; 4] = ['。', '！', '？', '；'];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: malformed annotation: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: span [{start}, {end}) out of bounds for text of {len} characters")]
    OffsetOutOfBounds { line: usize, start: usize, end: usize, len: usize },
    #[error("line {line}: surface {expected:?} does not match text slice {found:?}")]
    SurfaceMismatch { line: usize, expected: String, found: String },
    #[error("line {line}: unknown entity label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("entity {surface:?} ({len} characters) is longer than max_len {max_len}")]
    UnsplittableEntity { surface: String, len: usize, max_len: usize },
    #[error("overlapping spans in segment at offset {offset}")]
    OverlapAfterValidation { offset: usize },
    #[error("malformed BIO at position {position}: {reason}")]
    MalformedBio { position: usize, reason: String },
    #[error("need at least 10 sentences to split, got {0}")]
    TooFewSentences(usize),
    #[error("invalid entity schema: {0}")]
    InvalidSchema(String),
    #[error("max_len must be at least 2, got {0}")]
    InvalidMaxLen(usize),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Ordered set of entity type names. The order fixes tag indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct EntitySchema {
    types: Vec<String>,
}

impl EntitySchema {
    pub const DEFAULT_TYPES: [&'static str; 7] =
        ["Disease", "BodyCheck", "Symptom", "Condition", "Check", "Treatment", "Operation"];

    pub fn new<I, S>(types: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let types: Vec<String> = types.into_iter().map(Into::into).collect();
        if types.is_empty() {
            return Err(CorpusError::InvalidSchema("schema is empty".into()));
        }
        for (i, t) in types.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) || t.contains('-') {
                return Err(CorpusError::InvalidSchema(format!("bad type name {t:?}")));
            }
            if types[..i].iter().any(|u| u.eq_ignore_ascii_case(t)) {
                return Err(CorpusError::InvalidSchema(format!("duplicate type {t:?}")));
            }
        }
        Ok(Self { types })
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    /// Maps an annotation label onto the canonical type name. Matching is
    /// ASCII case-insensitive, so brat's lowercase `disease` resolves to
    /// `Disease`.
    pub fn resolve(&self, label: &str) -> Option<&str> {
        self.types.iter().find(|t| t.eq_ignore_ascii_case(label)).map(String::as_str)
    }
}

impl Default for EntitySchema {
    fn default() -> Self {
        Self { types: Self::DEFAULT_TYPES.iter().map(|s| s.to_string()).collect() }
    }
}

impl TryFrom<Vec<String>> for EntitySchema {
    type Error = CorpusError;

    fn try_from(types: Vec<String>) -> Result<Self> {
        Self::new(types)
    }
}

impl From<EntitySchema> for Vec<String> {
    fn from(schema: EntitySchema) -> Self {
        schema.types
    }
}

/// One standoff entity annotation anchored to its document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub id: String,
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub text: String,
    pub spans: Vec<EntitySpan>,
    /// Spans dropped because they overlap an earlier-listed span.
    pub rejected: Vec<EntitySpan>,
}

impl AnnotatedDocument {
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Typed span in local (sentence) coordinates, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TypedSpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl TypedSpan {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        Self { label: label.into(), start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Parses a brat `.ann` file against its `.txt` source.
///
/// Only text-bound (`T`) annotations are read; relation, attribute and note
/// lines are skipped. A span overlapping an earlier one is moved to
/// [`AnnotatedDocument::rejected`] instead of failing the document.
pub fn parse_ann(
    doc_id: &str,
    ann_content: &str,
    txt_content: &str,
    schema: &EntitySchema,
) -> Result<AnnotatedDocument> {
    let chars: Vec<char> = txt_content.chars().collect();
    let mut doc = AnnotatedDocument { doc_id: doc_id.to_string(), text: txt_content.to_string(), ..Default::default() };

    for (idx, raw) in ann_content.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            continue;
        }
        if !raw.starts_with('T') {
            log::debug!("{doc_id}: skipping non-entity annotation on line {line}");
            continue;
        }
        let span = parse_entity_line(raw, line, &chars, schema)?;
        let overlaps = doc.spans.iter().any(|s| span.start < s.end && s.start < span.end);
        if overlaps {
            log::warn!(
                "{doc_id}: line {line}: span {} [{}, {}) overlaps an earlier span; rejected",
                span.id,
                span.start,
                span.end
            );
            doc.rejected.push(span);
        } else {
            doc.spans.push(span);
        }
    }
    doc.spans.sort_by_key(|s| (s.start, s.end));
    Ok(doc)
}

fn parse_entity_line(raw: &str, line: usize, chars: &[char], schema: &EntitySchema) -> Result<EntitySpan> {
    let malformed = |reason: &str| CorpusError::MalformedLine { line, reason: reason.to_string() };
    let fields: Vec<&str> = raw.split('\t').collect();
    if fields.len() != 3 {
        return Err(malformed(&format!("expected 3 tab-separated fields, found {}", fields.len())));
    }
    let (id, middle, surface) = (fields[0], fields[1], fields[2]);
    if id.len() < 2 || !id[1..].chars().all(|c| c.is_ascii_digit()) {
        return Err(malformed(&format!("bad annotation id {id:?}")));
    }
    let parts: Vec<&str> = middle.split(' ').collect();
    if parts.len() != 3 {
        return Err(malformed("expected `<label> <start> <end>`"));
    }
    let start: usize = parts[1].parse().map_err(|_| malformed(&format!("bad start offset {:?}", parts[1])))?;
    let end: usize = parts[2].parse().map_err(|_| malformed(&format!("bad end offset {:?}", parts[2])))?;
    let label =
        schema.resolve(parts[0]).ok_or_else(|| CorpusError::UnknownLabel { line, label: parts[0].to_string() })?;
    if start >= end || end > chars.len() {
        return Err(CorpusError::OffsetOutOfBounds { line, start, end, len: chars.len() });
    }
    let found: String = chars[start..end].iter().collect();
    if found != surface {
        return Err(CorpusError::SurfaceMismatch { line, expected: surface.to_string(), found });
    }
    Ok(EntitySpan { id: id.to_string(), label: label.to_string(), start, end, surface: surface.to_string() })
}

/// A sentence-sized slice of a document with spans in local coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub chars: Vec<char>,
    pub spans: Vec<TypedSpan>,
    /// Character offset of the segment's first character in the document.
    pub offset: usize,
}

impl Segment {
    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }
}

/// Splits a document into sentences of at most `max_len` characters.
///
/// Sentences end after `。！？；`; newlines end a sentence and are dropped.
/// Delimiters inside an entity do not split it. Over-long sentences are
/// hard-wrapped, moving the wrap point left to the start of any entity it
/// would cut.
pub fn segment(doc: &AnnotatedDocument, max_len: usize) -> Result<Vec<Segment>> {
    if max_len < 2 {
        return Err(CorpusError::InvalidMaxLen(max_len));
    }
    let chars: Vec<char> = doc.text.chars().collect();
    let inside_span = |pos: usize| doc.spans.iter().any(|s| s.start < pos && pos < s.end);

    // Sentence boundaries as [start, end) ranges, newlines excluded.
    let mut sentences = Vec::new();
    let mut start = 0;
    for (i, &c) in chars.iter().enumerate() {
        if (c == '\n' || c == '\r') && !inside_span(i) && !inside_span(i + 1) {
            sentences.push((start, i));
            start = i + 1;
        } else if SENTENCE_FINAL.contains(&c) && !inside_span(i + 1) {
            sentences.push((start, i + 1));
            start = i + 1;
        }
    }
    sentences.push((start, chars.len()));

    let mut out = Vec::new();
    for (s_start, s_end) in sentences {
        let mut cur = s_start;
        while cur < s_end {
            let mut cut = s_end.min(cur + max_len);
            if cut < s_end {
                if let Some(span) = doc.spans.iter().find(|s| s.start < cut && cut < s.end) {
                    if span.start <= cur {
                        return Err(CorpusError::UnsplittableEntity {
                            surface: span.surface.clone(),
                            len: span.end - span.start,
                            max_len,
                        });
                    }
                    cut = span.start;
                }
            }
            let piece = &chars[cur..cut];
            if piece.iter().any(|c| !c.is_whitespace()) {
                let spans = doc
                    .spans
                    .iter()
                    .filter(|s| s.start >= cur && s.end <= cut)
                    .map(|s| TypedSpan::new(s.label.clone(), s.start - cur, s.end - cur))
                    .collect();
                out.push(Segment { chars: piece.to_vec(), spans, offset: cur });
            }
            cur = cut;
        }
    }
    Ok(out)
}

/// A BIO tag. Entity tags carry the type name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    O,
    B(String),
    I(String),
}

impl Tag {
    pub fn entity_type(&self) -> Option<&str> {
        match self {
            Tag::O => None,
            Tag::B(t) | Tag::I(t) => Some(t),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(t) => write!(f, "B-{t}"),
            Tag::I(t) => write!(f, "I-{t}"),
        }
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "O" => Ok(Tag::O),
            _ => match s.split_once('-') {
                Some(("B", t)) if !t.is_empty() => Ok(Tag::B(t.to_string())),
                Some(("I", t)) if !t.is_empty() => Ok(Tag::I(t.to_string())),
                _ => Err(format!("bad tag {s:?}")),
            },
        }
    }
}

/// Character-level tagged sentence. A token is a single character or a
/// reserved symbol such as the augmentation mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BioSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

impl BioSentence {
    /// Builds a sentence, checking length agreement and BIO well-formedness.
    pub fn new(tokens: Vec<String>, tags: Vec<Tag>) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(CorpusError::MalformedBio {
                position: tokens.len().min(tags.len()),
                reason: format!("{} tokens but {} tags", tokens.len(), tags.len()),
            });
        }
        check_well_formed(&tags)?;
        Ok(Self { tokens, tags })
    }

    pub fn untagged(text: &str) -> Self {
        let tokens: Vec<String> = text.chars().map(String::from).collect();
        let tags = vec![Tag::O; tokens.len()];
        Self { tokens, tags }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.concat()
    }

    pub fn surface(&self, span: &TypedSpan) -> String {
        self.tokens[span.start..span.end].concat()
    }
}

/// Checks that every `I-t` continues a `B-t` or `I-t` of the same type.
pub fn check_well_formed(tags: &[Tag]) -> Result<()> {
    let mut prev: Option<&str> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::O => prev = None,
            Tag::B(t) => prev = Some(t),
            Tag::I(t) => {
                if prev != Some(t.as_str()) {
                    return Err(CorpusError::MalformedBio {
                        position: i,
                        reason: format!("I-{t} without a preceding B-{t} or I-{t}"),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Converts segments to BIO sentences.
pub fn to_bio(segments: &[Segment]) -> Result<Vec<BioSentence>> {
    segments.iter().map(segment_to_bio).collect()
}

fn segment_to_bio(seg: &Segment) -> Result<BioSentence> {
    let mut tags = vec![Tag::O; seg.chars.len()];
    for span in &seg.spans {
        if span.is_empty() || span.end > tags.len() {
            return Err(CorpusError::OverlapAfterValidation { offset: seg.offset + span.start });
        }
        if tags[span.start..span.end].iter().any(|t| *t != Tag::O) {
            return Err(CorpusError::OverlapAfterValidation { offset: seg.offset + span.start });
        }
        tags[span.start] = Tag::B(span.label.clone());
        for t in &mut tags[span.start + 1..span.end] {
            *t = Tag::I(span.label.clone());
        }
    }
    let tokens = seg.chars.iter().map(|c| c.to_string()).collect();
    BioSentence::new(tokens, tags)
}

/// Extracts typed spans from a BIO tag sequence.
pub fn from_bio(sentence: &BioSentence) -> Result<Vec<TypedSpan>> {
    spans_from_tags(&sentence.tags)
}

pub fn spans_from_tags(tags: &[Tag]) -> Result<Vec<TypedSpan>> {
    check_well_formed(tags)?;
    let mut spans = Vec::new();
    let mut open: Option<TypedSpan> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::I(_) => {
                if let Some(s) = open.as_mut() {
                    s.end = i + 1;
                }
            }
            Tag::B(t) => {
                spans.extend(open.take());
                open = Some(TypedSpan::new(t.clone(), i, i + 1));
            }
            Tag::O => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// Train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit<T = BioSentence> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

/// Shuffles under `seed` and splits 8:1:1. Validation and test sizes are
/// `round(n / 10)` (half-up); the remainder goes to train.
pub fn split_dataset<T>(items: Vec<T>, seed: u64) -> Result<DatasetSplit<T>> {
    let n = items.len();
    if n < 10 {
        return Err(CorpusError::TooFewSentences(n));
    }
    let tenth = (n + 5) / 10;
    let mut items = items;
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = items.split_off(n - tenth);
    let validation = items.split_off(n - 2 * tenth);
    Ok(DatasetSplit { train: items, validation, test, seed })
}

/// Renders sentences as `<token>\t<tag>` lines with a blank line between
/// sentences.
pub fn write_bio(sentences: &[BioSentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
    }
    out
}

/// Parses the format produced by [`write_bio`].
pub fn read_bio(content: &str) -> Result<Vec<BioSentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<Tag>| -> Result<()> {
        if !tokens.is_empty() {
            sentences.push(BioSentence::new(std::mem::take(tokens), std::mem::take(tags))?);
        }
        Ok(())
    };
    for (idx, line) in content.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            flush(&mut tokens, &mut tags)?;
            continue;
        }
        let (tok, tag) = line.rsplit_once('\t').ok_or_else(|| CorpusError::MalformedBio {
            position: idx + 1,
            reason: "expected `<token>\\t<tag>`".into(),
        })?;
        let tag = tag.parse::<Tag>().map_err(|reason| CorpusError::MalformedBio { position: idx + 1, reason })?;
        if tok.is_empty() {
            return Err(CorpusError::MalformedBio { position: idx + 1, reason: "empty token".into() });
        }
        tokens.push(tok.to_string());
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags)?;
    Ok(sentences)
}
