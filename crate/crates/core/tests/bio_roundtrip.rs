use emrkg_core::corpus::{
    check_well_formed, from_bio, parse_ann, read_bio, segment, split_dataset, to_bio, write_bio, BioSentence,
    EntitySchema, Tag, TypedSpan,
};
use proptest::prelude::*;

const LABELS: &[&str] = &["Disease", "Symptom", "Check"];

/// Non-overlapping spans over a text of `len` characters.
fn layout() -> impl Strategy<Value = (usize, Vec<(usize, usize, usize)>)> {
    proptest::collection::vec((0..6usize, 1..6usize, 0..LABELS.len()), 0..12).prop_map(|parts| {
        let mut spans = Vec::new();
        let mut pos = 0;
        for (gap, len, label) in parts {
            pos += gap;
            spans.push((label, pos, pos + len));
            pos += len;
        }
        (pos + 3, spans)
    })
}

fn text_for(len: usize, seed: &[u8]) -> String {
    let pool = ['肝', '癌', '痛', '。', '；', '，', '\n', 'a', '1'];
    (0..len).map(|i| pool[seed[i % seed.len()] as usize % pool.len()]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn spans_survive_standoff_and_bio((len, spans) in layout(), seed in proptest::collection::vec(any::<u8>(), 1..40), max_len in 5..60usize) {
        let schema = EntitySchema::new(LABELS.iter().copied()).unwrap();
        let mut chars: Vec<char> = text_for(len, &seed).chars().collect();
        for &(_, s, e) in &spans {
            for c in &mut chars[s..e] {
                if *c == '\n' {
                    *c = '肝';
                }
            }
        }
        let text: String = chars.iter().collect();
        let ann: String = spans
            .iter()
            .enumerate()
            .map(|(i, (l, s, e))| {
                let surface: String = chars[*s..*e].iter().collect();
                format!("T{}\t{} {s} {e}\t{surface}\n", i + 1, LABELS[*l].to_uppercase())
            })
            .collect();
        let doc = parse_ann("d", &ann, &text, &schema).unwrap();
        let segments = segment(&doc, max_len).unwrap();
        let bio = to_bio(&segments).unwrap();
        let mut back = Vec::new();
        for (seg, sent) in segments.iter().zip(&bio) {
            check_well_formed(&sent.tags).unwrap();
            for s in from_bio(sent).unwrap() {
                back.push((s.label, seg.offset + s.start, seg.offset + s.end));
            }
        }
        let expected: Vec<(String, usize, usize)> = spans.iter().map(|(l, s, e)| (LABELS[*l].to_string(), *s, *e)).collect();
        prop_assert_eq!(back, expected);
        prop_assert_eq!(read_bio(&write_bio(&bio)).unwrap(), bio);
    }

    #[test]
    fn tags_and_spans_are_inverse(spans in proptest::collection::vec((0..4usize, 1..5usize, 0..LABELS.len()), 0..8)) {
        let mut tags = Vec::new();
        let mut expected = Vec::new();
        for (gap, len, label) in spans {
            tags.extend(std::iter::repeat_n(Tag::O, gap));
            let start = tags.len();
            tags.push(Tag::B(LABELS[label].into()));
            tags.extend(std::iter::repeat_n(Tag::I(LABELS[label].into()), len - 1));
            expected.push(TypedSpan::new(LABELS[label], start, tags.len()));
        }
        if tags.is_empty() {
            tags.push(Tag::O);
        }
        let tokens = (0..tags.len()).map(|i| format!("t{i}")).collect();
        let sentence = BioSentence::new(tokens, tags).unwrap();
        prop_assert_eq!(from_bio(&sentence).unwrap(), expected);
    }

    #[test]
    fn split_is_a_partition(n in 10..300usize, seed in any::<u64>()) {
        let split = split_dataset((0..n).collect::<Vec<_>>(), seed).unwrap();
        let tenth = (n + 5) / 10;
        prop_assert_eq!(split.validation.len(), tenth);
        prop_assert_eq!(split.test.len(), tenth);
        let mut all: Vec<usize> = split.train.iter().chain(&split.validation).chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_dataset((0..n).collect::<Vec<_>>(), seed).unwrap(), split);
    }
}

#[test]
fn stray_inside_tag_is_rejected() {
    let tokens = vec!["肝".to_string(), "癌".to_string()];
    assert!(BioSentence::new(tokens.clone(), vec![Tag::O, Tag::I("Disease".into())]).is_err());
    assert!(BioSentence::new(tokens, vec![Tag::B("Symptom".into()), Tag::I("Disease".into())]).is_err());
    assert!(read_bio("肝\tI-Disease\n").is_err());
}
