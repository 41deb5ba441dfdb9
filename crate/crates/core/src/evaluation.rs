//! Word error rate, alignment-derived precision/recall/F1/accuracy, and the
//! report emitted by evaluation runs.
//!
//! Each sample is one pre-segmented word. WER is computed at word
//! granularity. Precision and recall need TP/FP/FN counts, which come from a
//! codepoint-level alignment of prediction against reference:
//!
//! * TP = matched codepoints
//! * FP = substitutions + insertions (codepoints predicted wrongly or extra)
//! * FN = substitutions + deletions (reference codepoints missed)
//! * TN = 0 (undefined for open-vocabulary recognition)

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {references} references")]
    LengthMismatch {
        predictions: usize,
        references: usize,
    },
    #[error("references contain no words")]
    EmptyReference,
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance over Unicode scalar values.
pub fn char_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein(&a, &b)
}

/// Operation counts of one optimal alignment of a prediction against its
/// reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub matches: usize,
    pub substitutions: usize,
    /// Predicted codepoints with no reference counterpart.
    pub insertions: usize,
    /// Reference codepoints missing from the prediction.
    pub deletions: usize,
}

impl EditCounts {
    pub fn distance(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    fn add(&mut self, other: &EditCounts) {
        self.matches += other.matches;
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
    }
}

/// Backtraces the edit-distance table, preferring match, then substitution,
/// then deletion, then insertion.
pub fn edit_counts(prediction: &str, reference: &str) -> EditCounts {
    let p: Vec<char> = prediction.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    let cols = r.len() + 1;
    let mut d = vec![0usize; (p.len() + 1) * cols];
    for i in 0..=p.len() {
        d[i * cols] = i;
    }
    for j in 0..=r.len() {
        d[j] = j;
    }
    for i in 1..=p.len() {
        for j in 1..=r.len() {
            let sub = d[(i - 1) * cols + j - 1] + usize::from(p[i - 1] != r[j - 1]);
            d[i * cols + j] = sub
                .min(d[(i - 1) * cols + j] + 1)
                .min(d[i * cols + j - 1] + 1);
        }
    }

    let mut counts = EditCounts::default();
    let (mut i, mut j) = (p.len(), r.len());
    while i > 0 || j > 0 {
        let here = d[i * cols + j];
        if i > 0 && j > 0 && p[i - 1] == r[j - 1] && here == d[(i - 1) * cols + j - 1] {
            counts.matches += 1;
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && here == d[(i - 1) * cols + j - 1] + 1 {
            counts.substitutions += 1;
            i -= 1;
            j -= 1;
        } else if j > 0 && here == d[i * cols + j - 1] + 1 {
            counts.deletions += 1;
            j -= 1;
        } else {
            counts.insertions += 1;
            i -= 1;
        }
    }
    counts
}

fn check_lengths(predictions: &[String], references: &[String]) -> Result<()> {
    if predictions.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            references: references.len(),
        });
    }
    Ok(())
}

/// Word error rate: summed word-level edit distance over total reference
/// words. With one word per sample this is the fraction of samples whose
/// prediction differs from the reference.
pub fn wer(predictions: &[String], references: &[String]) -> Result<f64> {
    check_lengths(predictions, references)?;
    let mut distance = 0;
    let mut words = 0;
    for (p, r) in predictions.iter().zip(references) {
        let pw: Vec<&str> = p.split_whitespace().collect();
        let rw: Vec<&str> = r.split_whitespace().collect();
        distance += levenshtein(&pw, &rw);
        words += rw.len();
    }
    if words == 0 {
        return Err(EvalError::EmptyReference);
    }
    Ok(distance as f64 / words as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub prediction: String,
    pub reference: String,
    pub edit_distance: usize,
}

/// One row of results: WER, accuracy, precision, recall, F1 and matched
/// words, plus diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wer: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched_words: usize,
    pub total_words: usize,
    /// `matched_words / total_words`; reported next to `accuracy`, which is
    /// alignment-based and generally differs.
    pub matched_fraction: f64,
    /// Codepoint error rate, diagnostic only.
    pub cer: f64,
    #[serde(skip)]
    pub counts: EditCounts,
    #[serde(skip)]
    pub samples: Vec<SampleRecord>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn report(predictions: &[String], references: &[String]) -> Result<EvalReport> {
    check_lengths(predictions, references)?;
    if references.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let wer = wer(predictions, references)?;

    let mut total = EditCounts::default();
    let mut samples = Vec::with_capacity(predictions.len());
    let mut ref_chars = 0;
    for (index, (p, r)) in predictions.iter().zip(references).enumerate() {
        let c = edit_counts(p, r);
        total.add(&c);
        ref_chars += r.chars().count();
        samples.push(SampleRecord {
            index,
            prediction: p.clone(),
            reference: r.clone(),
            edit_distance: c.distance(),
        });
    }
    let tp = total.matches;
    let fp = total.substitutions + total.insertions;
    let fn_ = total.substitutions + total.deletions;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let matched_words = predictions.iter().zip(references).filter(|(p, r)| p == r).count();
    let total_words = references.len();

    Ok(EvalReport {
        wer,
        accuracy: ratio(tp, tp + fp + fn_),
        precision,
        recall,
        f1,
        matched_words,
        total_words,
        matched_fraction: ratio(matched_words, total_words),
        cer: ratio(total.distance(), ref_chars),
        counts: total,
        samples,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One JSON object per sample, newline-terminated.
    pub fn samples_jsonl(&self) -> String {
        self.samples
            .iter()
            .map(|s| serde_json::to_string(s).expect("record serializes") + "\n")
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn rec(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = rec(ra, rb) + usize::from(x != y);
                sub.min(rec(ra, b) + 1).min(rec(a, rb) + 1)
            }
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(char_distance("abc", "abc"), 0);
        assert_eq!(char_distance("", "ab"), 2);
        let (k, s2): (Vec<char>, Vec<char>) = ("kitten".chars().collect(), "sitting".chars().collect());
        assert_eq!(rec(&k, &s2), 3);
        assert_eq!(char_distance("kitten", "sitting"), 3);
    }

    #[test]
    fn counts_examples() {
        assert_eq!(
            edit_counts("abc", "abc"),
            EditCounts { matches: 3, ..Default::default() }
        );
        assert_eq!(
            edit_counts("ab", ""),
            EditCounts { insertions: 2, ..Default::default() }
        );
        assert_eq!(
            edit_counts("abd", "abc"),
            EditCounts { matches: 2, substitutions: 1, ..Default::default() }
        );
        assert_eq!(
            edit_counts("", "xyz"),
            EditCounts { deletions: 3, ..Default::default() }
        );
    }

    #[test]
    fn wer_examples() {
        let refs = s(&["ab", "cd", "ef", "gh"]);
        assert_eq!(wer(&refs, &refs).unwrap(), 0.0);
        assert_eq!(wer(&s(&["ab", "cx", "ef", "gh"]), &refs).unwrap(), 0.25);
        assert_eq!(wer(&s(&["", "cd", "ef", "gh"]), &refs).unwrap(), 0.25);
        assert!(matches!(
            wer(&s(&["a"]), &refs),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(wer(&s(&[""]), &s(&[" "])), Err(EvalError::EmptyReference)));
    }

    #[test]
    fn perfect_report() {
        let refs = s(&["ab", "cde"]);
        let r = report(&refs, &refs).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy, r.wer), (1.0, 1.0, 1.0, 1.0, 0.0));
        assert_eq!((r.matched_words, r.total_words), (2, 2));
    }

    #[test]
    fn tp8_fp2_fn2() {
        // "abcdefghij" vs "abcdefghxy": 8 matches, 2 substitutions
        let r = report(&s(&["abcdefghxy"]), &s(&["abcdefghij"])).unwrap();
        assert_eq!(r.counts, EditCounts { matches: 8, substitutions: 2, ..Default::default() });
        assert!((r.precision - 0.8).abs() < 1e-15);
        assert!((r.recall - 0.8).abs() < 1e-15);
        assert!((r.f1 - 0.8).abs() < 1e-15);
        assert!((r.accuracy - 8.0 / 12.0).abs() < 1e-15);
        assert_eq!(r.wer, 1.0);
        assert_eq!(r.samples[0].edit_distance, 2);
    }

    #[test]
    fn report_json_has_row_fields() {
        let r = report(&s(&["ab"]), &s(&["ab"])).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["wer", "accuracy", "precision", "recall", "f1", "matched_words", "total_words"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(r.samples_jsonl().lines().count(), 1);
    }

    fn short() -> impl Strategy<Value = String> {
        "[abc]{0,6}"
    }

    proptest! {
        #[test]
        fn metric_axioms(a in short(), b in short(), c in short()) {
            let d = char_distance;
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert_eq!(d(&a, &b) == 0, a == b);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        }

        #[test]
        fn counts_identities(p in short(), r in short()) {
            let c = edit_counts(&p, &r);
            prop_assert_eq!(c.matches + c.substitutions + c.deletions, r.chars().count());
            prop_assert_eq!(c.matches + c.substitutions + c.insertions, p.chars().count());
            prop_assert_eq!(c.distance(), char_distance(&p, &r));
        }

        #[test]
        fn report_bounds(pairs in proptest::collection::vec((short(), "[abc]{1,6}"), 1..8)) {
            let (p, r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
            let rep = report(&p, &r).unwrap();
            for m in [rep.precision, rep.recall, rep.f1, rep.accuracy] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
            prop_assert!(rep.wer >= 0.0 && rep.wer <= 1.0);
            prop_assert!(rep.matched_words <= rep.total_words);
            prop_assert_eq!(rep.matched_words == rep.total_words, rep.wer == 0.0);
        }
    }
}
