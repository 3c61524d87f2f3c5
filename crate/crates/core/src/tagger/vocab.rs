use std::collections::{BTreeSet, HashMap};

use crate::corpus::{EntitySchema, Tag};
use crate::derm::MASK_TOKEN;

use super::crf::{start_index, stop_index};
use super::tensor::Matrix;

pub const PAD_TOKEN: &str = "<PAD>";
pub const UNK_TOKEN: &str = "<UNK>";

/// Token → index map. Indices 0, 1 and 2 are the padding, unknown and mask
/// tokens; the rest follow in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const MASK: usize = 2;

    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let reserved = [PAD_TOKEN, UNK_TOKEN, MASK_TOKEN];
        let rest: BTreeSet<&str> = tokens.into_iter().filter(|t| !reserved.contains(t)).collect();
        Self::from_tokens(reserved.into_iter().chain(rest).map(String::from).collect())
            .expect("reserved tokens present")
    }

    /// Rebuilds a vocabulary from its index-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Option<Self> {
        if tokens.len() < 3
            || tokens[Self::PAD] != PAD_TOKEN
            || tokens[Self::UNK] != UNK_TOKEN
            || tokens[Self::MASK] != MASK_TOKEN
        {
            return None;
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return None;
        }
        Some(Self { tokens, index })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// Tag inventory for a schema: `O`, then `B-t`, `I-t` per type in schema
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    schema: EntitySchema,
}

impl TagSet {
    pub fn new(schema: EntitySchema) -> Self {
        Self { schema }
    }

    pub fn schema(&self) -> &EntitySchema {
        &self.schema
    }

    /// Number of real tags, `2 × |schema| + 1`.
    pub fn len(&self) -> usize {
        2 * self.schema.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, tag: &Tag) -> Option<usize> {
        match tag {
            Tag::O => Some(0),
            Tag::B(t) => self.schema.index_of(t).map(|k| 1 + 2 * k),
            Tag::I(t) => self.schema.index_of(t).map(|k| 2 + 2 * k),
        }
    }

    pub fn tag(&self, index: usize) -> Tag {
        if index == 0 {
            return Tag::O;
        }
        let k = (index - 1) / 2;
        let name = self.schema.types()[k].clone();
        if (index - 1).is_multiple_of(2) {
            Tag::B(name)
        } else {
            Tag::I(name)
        }
    }

    /// Additive mask over the `(n + 2)²` transition matrix: `-inf` wherever
    /// the move would produce ill-formed BIO, `0` elsewhere. `I-t` may only
    /// follow `B-t` or `I-t`; nothing enters START or leaves STOP.
    pub fn constraint_mask(&self) -> Matrix {
        let n = self.len();
        let (start, stop) = (start_index(n), stop_index(n));
        let mut mask = Matrix::zeros(n + 2, n + 2);
        for from in 0..n + 2 {
            for to in 0..n + 2 {
                let allowed = if to == start || from == stop || (from == start && to == stop) {
                    false
                } else if to < n && from != start {
                    match self.tag(to) {
                        Tag::I(t) => from < n && self.tag(from).entity_type() == Some(t.as_str()),
                        _ => true,
                    }
                } else if to < n {
                    !matches!(self.tag(to), Tag::I(_))
                } else {
                    true
                };
                if !allowed {
                    mask.set(from, to, f64::NEG_INFINITY);
                }
            }
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_reserved_tokens() {
        let v = Vocabulary::build(["乙", "甲", "乙", MASK_TOKEN]);
        assert_eq!(v.tokens(), [PAD_TOKEN, UNK_TOKEN, MASK_TOKEN, "乙", "甲"]);
        assert_eq!(v.id("未"), Vocabulary::UNK);
        assert_eq!(v.id(MASK_TOKEN), Vocabulary::MASK);
        assert_eq!(Vocabulary::from_tokens(v.tokens().to_vec()).unwrap(), v);
        assert!(Vocabulary::from_tokens(vec!["a".into()]).is_none());
    }

    #[test]
    fn tag_indexing() {
        let ts = TagSet::new(EntitySchema::default());
        assert_eq!(ts.len(), 15);
        for i in 0..ts.len() {
            assert_eq!(ts.index(&ts.tag(i)), Some(i));
        }
        assert_eq!(ts.tag(1), Tag::B("Disease".into()));
        assert_eq!(ts.tag(2), Tag::I("Disease".into()));
        assert_eq!(ts.index(&Tag::B("Food".into())), None);
    }

    #[test]
    fn mask_forbids_orphan_inside_tags() {
        let ts = TagSet::new(EntitySchema::new(["A", "B"]).unwrap());
        let m = ts.constraint_mask();
        let n = ts.len();
        let (o, ba, ia, bb, ib) = (0, 1, 2, 3, 4);
        let ok = |f: usize, t: usize| m.get(f, t) == 0.0;
        assert!(ok(ba, ia) && ok(ia, ia) && ok(o, ba) && ok(ib, bb) && ok(ia, o));
        assert!(!ok(o, ia) && !ok(bb, ia) && !ok(ib, ia) && !ok(start_index(n), ia));
        assert!(ok(start_index(n), ba) && ok(ia, stop_index(n)));
        assert!(!ok(start_index(n), stop_index(n)));
    }
}
