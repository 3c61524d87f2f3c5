//! Entity-level precision, recall and F1.
//!
//! Matching is strict: a predicted entity counts as a true positive only when
//! type, start and end all agree with a gold entity. Overall scores are
//! micro-averaged over types.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{from_bio, BioSentence, CorpusError, EntitySchema, TypedSpan};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("gold has {gold} sentences but prediction has {predicted}")]
    SentenceCountMismatch { gold: usize, predicted: usize },
    #[error("sentence {index}: gold length {gold} differs from predicted length {predicted}")]
    LengthMismatch { index: usize, gold: usize, predicted: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { true_positives: tp, false_positives: fp, false_negatives: fn_ }
    }

    fn add(&mut self, other: Counts) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }
}

/// Per-type counts in report order plus their sum.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub per_type: Vec<(String, Counts)>,
    pub overall: Counts,
}

impl EvalCounts {
    fn entry(&mut self, label: &str) -> &mut Counts {
        let idx = match self.per_type.iter().position(|(l, _)| l == label) {
            Some(i) => i,
            None => {
                self.per_type.push((label.to_string(), Counts::default()));
                self.per_type.len() - 1
            }
        };
        &mut self.per_type[idx].1
    }
}

/// Counts strict matches between parallel gold and predicted sentences.
///
/// Rows follow `schema` order; labels outside the schema are appended in
/// lexicographic order.
pub fn count_matches(
    gold: &[BioSentence],
    predicted: &[BioSentence],
    schema: &EntitySchema,
) -> Result<EvalCounts, MetricsError> {
    if gold.len() != predicted.len() {
        return Err(MetricsError::SentenceCountMismatch { gold: gold.len(), predicted: predicted.len() });
    }
    let mut gold_set: BTreeSet<(usize, TypedSpan)> = BTreeSet::new();
    let mut pred_set: BTreeSet<(usize, TypedSpan)> = BTreeSet::new();
    for (i, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.len() != p.len() {
            return Err(MetricsError::LengthMismatch { index: i, gold: g.len(), predicted: p.len() });
        }
        gold_set.extend(from_bio(g)?.into_iter().map(|s| (i, s)));
        pred_set.extend(from_bio(p)?.into_iter().map(|s| (i, s)));
    }

    let mut counts = EvalCounts::default();
    for t in schema.types() {
        counts.entry(t);
    }
    let mut extra: BTreeSet<&str> = BTreeSet::new();
    for (_, s) in gold_set.iter().chain(&pred_set) {
        if !schema.contains(&s.label) {
            extra.insert(&s.label);
        }
    }
    for label in extra {
        counts.entry(label);
    }

    for item in &pred_set {
        if gold_set.contains(item) {
            counts.entry(&item.1.label).true_positives += 1;
        } else {
            counts.entry(&item.1.label).false_positives += 1;
        }
    }
    for item in gold_set.difference(&pred_set) {
        counts.entry(&item.1.label).false_negatives += 1;
    }
    let mut overall = Counts::default();
    for (_, c) in &counts.per_type {
        overall.add(*c);
    }
    counts.overall = overall;
    Ok(counts)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any ratio was 0/0 and reported as 0.
    pub undefined: bool,
}

impl Scores {
    pub fn from_counts(c: Counts) -> Self {
        let mut undefined = false;
        let mut ratio = |num: usize, den: usize| {
            if den == 0 {
                undefined = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(c.true_positives, c.true_positives + c.false_positives);
        let recall = ratio(c.true_positives, c.true_positives + c.false_negatives);
        let f1 = if precision + recall == 0.0 {
            undefined = true;
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1, undefined }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_type: Vec<(String, Scores)>,
    pub micro: Scores,
    pub counts: EvalCounts,
}

pub fn precision_recall_f1(counts: &EvalCounts) -> EvalReport {
    EvalReport {
        per_type: counts.per_type.iter().map(|(l, c)| (l.clone(), Scores::from_counts(*c))).collect(),
        micro: Scores::from_counts(counts.overall),
        counts: counts.clone(),
    }
}

const HEADER: [&str; 4] = ["Entity Type", "Precision", "Recall", "F1"];
const MICRO_ROW: &str = "Micro";

/// Formats a ratio as a percentage: whole numbers without decimals
/// (`100%`), everything else with two (`92.49%`).
pub fn format_percent(ratio: f64) -> String {
    let pct = ratio * 100.0;
    let rounded = (pct * 100.0).round() / 100.0;
    if rounded.fract() == 0.0 {
        format!("{rounded:.0}%")
    } else {
        format!("{rounded:.2}%")
    }
}

/// Renders an aligned text table with one row per entity type and a
/// micro-average row. A report without types renders only the header.
pub fn report_table(report: &EvalReport) -> String {
    let mut rows: Vec<[String; 4]> = vec![HEADER.map(String::from)];
    let fmt_row = |label: &str, s: &Scores| {
        [label.to_string(), format_percent(s.precision), format_percent(s.recall), format_percent(s.f1)]
    };
    for (label, s) in &report.per_type {
        rows.push(fmt_row(label, s));
    }
    if !report.per_type.is_empty() {
        rows.push(fmt_row(MICRO_ROW, &report.micro));
    }
    let mut widths = [0usize; 4];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in &rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            let pad = widths[i] - cell.chars().count();
            if i == 0 {
                let _ = write!(line, "{cell}{}", " ".repeat(pad));
            } else {
                let _ = write!(line, "  {}{cell}", " ".repeat(pad));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Reads back a table produced by [`report_table`] as
/// `(label, precision, recall, f1)` ratios.
pub fn parse_report_table(table: &str) -> Option<Vec<(String, f64, f64, f64)>> {
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next()?.split("  ").filter(|c| !c.is_empty()).collect();
    if header.iter().map(|c| c.trim()).ne(HEADER) {
        return None;
    }
    let pct = |cell: &str| -> Option<f64> { Some(cell.strip_suffix('%')?.parse::<f64>().ok()? / 100.0) };
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cells: Vec<&str> = l.split_whitespace().collect();
            let n = cells.len();
            if n < 4 {
                return None;
            }
            let label = cells[..n - 3].join(" ");
            Some((label, pct(cells[n - 3])?, pct(cells[n - 2])?, pct(cells[n - 1])?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tag;

    fn sent(tags: &[&str]) -> BioSentence {
        BioSentence::new(
            (0..tags.len()).map(|i| char::from_u32(0x4E00 + i as u32).unwrap().to_string()).collect(),
            tags.iter().map(|t| t.parse::<Tag>().unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_predictions_are_all_true_positives() {
        let g = vec![
            sent(&["B-Disease", "I-Disease", "O", "B-Symptom"]),
            sent(&["B-Check", "O", "B-Operation", "I-Operation"]),
        ];
        let c = count_matches(&g, &g, &EntitySchema::default()).unwrap();
        assert_eq!(c.overall, Counts::new(4, 0, 0));
    }

    #[test]
    fn type_mismatch_is_one_fp_and_one_fn() {
        let g = vec![sent(&["B-Disease", "I-Disease"])];
        let p = vec![sent(&["B-Symptom", "I-Symptom"])];
        let c = count_matches(&g, &p, &EntitySchema::default()).unwrap();
        assert_eq!(c.overall, Counts::new(0, 1, 1));
    }

    #[test]
    fn length_mismatch_errors() {
        let g = vec![sent(&["O", "O"])];
        let p = vec![sent(&["O"])];
        assert!(matches!(count_matches(&g, &p, &EntitySchema::default()), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(
            count_matches(&g, &[], &EntitySchema::default()),
            Err(MetricsError::SentenceCountMismatch { .. })
        ));
    }

    #[test]
    fn score_arithmetic() {
        let s = Scores::from_counts(Counts::new(3, 1, 0));
        assert_eq!((s.precision, s.recall), (0.75, 1.0));
        assert!((s.f1 - 6.0 / 7.0).abs() < 1e-15);
        assert!(!s.undefined);

        let s = Scores::from_counts(Counts::new(1, 1, 0));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);

        let s = Scores::from_counts(Counts::new(0, 0, 0));
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert!(s.undefined);
    }

    #[test]
    fn table_formatting() {
        assert_eq!(format_percent(1.0), "100%");
        assert_eq!(format_percent(0.9249), "92.49%");
        assert_eq!(format_percent(0.0), "0%");

        let counts =
            EvalCounts { per_type: vec![("Operation".into(), Counts::new(5, 0, 0))], overall: Counts::new(5, 0, 0) };
        let table = report_table(&precision_recall_f1(&counts));
        let row = table.lines().nth(1).unwrap();
        assert_eq!(row.split_whitespace().collect::<Vec<_>>(), ["Operation", "100%", "100%", "100%"]);

        let empty = report_table(&EvalReport::default());
        assert_eq!(empty.lines().count(), 1);
        assert!(empty.starts_with("Entity Type"));
    }

    #[test]
    fn table_parses_back() {
        let counts = EvalCounts {
            per_type: vec![("Disease".into(), Counts::new(37, 3, 4)), ("Body Check".into(), Counts::new(11, 7, 0))],
            overall: Counts::new(48, 10, 4),
        };
        let report = precision_recall_f1(&counts);
        let parsed = parse_report_table(&report_table(&report)).unwrap();
        assert_eq!(parsed.len(), 3);
        let expected: Vec<(&str, Scores)> =
            report.per_type.iter().map(|(l, s)| (l.as_str(), *s)).chain([(MICRO_ROW, report.micro)]).collect();
        for ((label, p, r, f), (el, es)) in parsed.iter().zip(expected) {
            assert_eq!(label, el);
            assert!((p - es.precision).abs() <= 5e-5);
            assert!((r - es.recall).abs() <= 5e-5);
            assert!((f - es.f1).abs() <= 5e-5);
        }
    }
}
