//! Connectionist temporal classification: alignment-summing loss with exact
//! gradients, the collapse function, best-path decoding and a brute-force
//! reference.
//!
//! Classes `0..C-1` are alphabet symbols and the blank is always class
//! `C-1`. Log-probabilities are laid out `[T, C]`, row per frame.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Tensor;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("target needs at least {required} frames, only {frames} available")]
    InfeasibleTarget { frames: usize, required: usize },
    #[error("brute force over {classes}^{frames} paths exceeds the 10^6 limit")]
    InstanceTooLarge { classes: usize, frames: usize },
    #[error("log-probabilities must be [T, C] with T >= 1 and C >= 1, got {0:?}")]
    BadShape(Vec<usize>),
    #[error("alphabet: {0}")]
    Alphabet(String),
    #[error("{text:?} has no alphabet symbol at codepoint {position}")]
    Unencodable { text: String, position: usize },
}

pub type Result<T> = std::result::Result<T, CtcError>;

/// What a class stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassUnit {
    /// One class per Unicode scalar value.
    #[default]
    Codepoint,
    /// One class per glyph label (possibly several codepoints).
    Grapheme,
}

/// Ordered symbol set; symbol `i` is class `i`, the blank is class `len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<String>,
    #[serde(default)]
    unit: ClassUnit,
}

impl Alphabet {
    pub fn new(symbols: Vec<String>, unit: ClassUnit) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &symbols {
            if s.is_empty() {
                return Err(CtcError::Alphabet("empty symbol".into()));
            }
            if unit == ClassUnit::Codepoint && s.chars().count() != 1 {
                return Err(CtcError::Alphabet(format!(
                    "codepoint alphabet symbol {s:?} is not a single codepoint"
                )));
            }
            if !seen.insert(s.as_str()) {
                return Err(CtcError::Alphabet(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self { symbols, unit })
    }

    /// Sorted codepoints of all the given texts.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        Self {
            symbols: set.into_iter().map(String::from).collect(),
            unit: ClassUnit::Codepoint,
        }
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn unit(&self) -> ClassUnit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Symbols plus blank.
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn blank(&self) -> usize {
        self.symbols.len()
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    /// Greedy longest-match segmentation of `text` into class indices.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let chars: Vec<char> = text.chars().collect();
        let longest = self
            .symbols
            .iter()
            .map(|s| s.chars().count())
            .max()
            .unwrap_or(0);
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let found = (1..=longest.min(chars.len() - pos)).rev().find_map(|len| {
                let piece: String = chars[pos..pos + len].iter().collect();
                self.index_of(&piece).map(|i| (i, len))
            });
            let (index, len) = found.ok_or_else(|| CtcError::Unencodable {
                text: text.to_string(),
                position: pos,
            })?;
            out.push(index);
            pos += len;
        }
        Ok(out)
    }

    /// Maps symbol indices back to text; the blank and unknown indices are
    /// skipped.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices
            .iter()
            .filter_map(|&i| self.symbols.get(i).map(String::as_str))
            .collect()
    }

    /// Codepoints of `text` not present in any symbol.
    pub fn missing_codepoints(&self, text: &str) -> BTreeSet<char> {
        let known: BTreeSet<char> = self.symbols.iter().flat_map(|s| s.chars()).collect();
        text.chars().filter(|c| !known.contains(c)).collect()
    }
}

/// Loss and its gradient w.r.t. the log-probabilities.
#[derive(Debug, Clone)]
pub struct CtcResult {
    pub loss: f64,
    pub grad_logp: Tensor,
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(frame_labels: &[usize], num_classes: usize) -> Result<Vec<usize>> {
    let blank = num_classes.saturating_sub(1);
    let mut out = Vec::new();
    let mut prev = None;
    for &l in frame_labels {
        if l >= num_classes {
            return Err(CtcError::IndexOutOfRange {
                index: l,
                classes: num_classes,
            });
        }
        if Some(l) != prev && l != blank {
            out.push(l);
        }
        prev = Some(l);
    }
    Ok(out)
}

/// Minimum number of frames a target needs: one per symbol plus one blank
/// between each pair of equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn dims(logp: &Tensor) -> Result<(usize, usize)> {
    match logp.shape() {
        &[t, c] if t >= 1 && c >= 1 => Ok((t, c)),
        s => Err(CtcError::BadShape(s.to_vec())),
    }
}

fn check_target(target: &[usize], classes: usize) -> Result<()> {
    let blank = classes - 1;
    match target.iter().find(|&&l| l >= blank) {
        Some(&index) => Err(CtcError::IndexOutOfRange {
            index,
            classes: blank,
        }),
        None => Ok(()),
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Negative log-likelihood of `target` under per-frame log-probabilities,
/// by the forward-backward recursion over the blank-interleaved target.
pub fn ctc_loss(logp: &Tensor, target: &[usize]) -> Result<CtcResult> {
    let (t_len, classes) = dims(logp)?;
    check_target(target, classes)?;
    let required = min_frames(target);
    if t_len < required {
        return Err(CtcError::InfeasibleTarget {
            frames: t_len,
            required,
        });
    }
    let blank = classes - 1;
    let lp = logp.values();
    let at = |t: usize, c: usize| lp[t * classes + c];

    let ext: Vec<usize> = std::iter::once(blank)
        .chain(target.iter().flat_map(|&l| [l, blank]))
        .collect();
    let s_len = ext.len();
    // s may come from s-2 when it is a symbol different from the one two back
    let can_skip: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2])
        .collect();

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = at(0, ext[0]);
    if s_len > 1 {
        alpha[1] = at(0, ext[1]);
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip[s] {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == ninf { ninf } else { acc + at(t, ext[s]) };
        }
    }

    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = at(t_len - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = at(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < s_len && can_skip[s + 2] {
                acc = log_add(acc, next[s + 2]);
            }
            cur[s] = if acc == ninf { ninf } else { acc + at(t, ext[s]) };
        }
    }

    let end = &alpha[last..];
    let log_p = if s_len > 1 {
        log_add(end[s_len - 1], end[s_len - 2])
    } else {
        end[0]
    };

    let mut grad = vec![0.0; t_len * classes];
    if log_p.is_finite() {
        for t in 0..t_len {
            for s in 0..s_len {
                let (a, b) = (alpha[t * s_len + s], beta[t * s_len + s]);
                if a == ninf || b == ninf {
                    continue;
                }
                grad[t * classes + ext[s]] -= (a + b - at(t, ext[s]) - log_p).exp();
            }
        }
    }

    Ok(CtcResult {
        loss: -log_p,
        grad_logp: Tensor::new(vec![t_len, classes], grad).expect("grad shape"),
    })
}

/// Reference loss by enumerating every length-`T` path.
pub fn ctc_brute_force(logp: &Tensor, target: &[usize]) -> Result<f64> {
    let (t_len, classes) = dims(logp)?;
    check_target(target, classes)?;
    let too_large = || CtcError::InstanceTooLarge {
        classes,
        frames: t_len,
    };
    let paths = u32::try_from(t_len)
        .ok()
        .and_then(|t| classes.checked_pow(t))
        .filter(|&n| n <= 1_000_000)
        .ok_or_else(too_large)?;

    let lp = logp.values();
    let mut path = vec![0usize; t_len];
    let mut total = 0.0;
    for _ in 0..paths {
        if collapse(&path, classes)? == target {
            let log_prob: f64 = path.iter().enumerate().map(|(t, &c)| lp[t * classes + c]).sum();
            total += log_prob.exp();
        }
        for digit in path.iter_mut().rev() {
            *digit += 1;
            if *digit < classes {
                break;
            }
            *digit = 0;
        }
    }
    Ok(-total.ln())
}

/// Per-frame argmax (lowest index wins ties), collapsed.
pub fn best_path(logp: &Tensor) -> Result<Vec<usize>> {
    let (_, classes) = dims(logp)?;
    let labels: Vec<usize> = logp
        .values()
        .chunks_exact(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect();
    collapse(&labels, classes)
}

/// Best-path decoding to text.
pub fn greedy_decode(logp: &Tensor, alphabet: &Alphabet) -> Result<String> {
    Ok(alphabet.decode(&best_path(logp)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: usize = 0;
    const B: usize = 1;
    const BLANK3: usize = 2;

    fn logp(rows: &[&[f64]]) -> Tensor {
        let c = rows[0].len();
        Tensor::new(
            vec![rows.len(), c],
            rows.iter().flat_map(|r| r.iter().map(|p| p.ln())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn collapse_rules() {
        assert_eq!(collapse(&[BLANK3], 3).unwrap(), Vec::<usize>::new());
        assert_eq!(collapse(&[A, A, BLANK3, B], 3).unwrap(), vec![A, B]);
        assert_eq!(collapse(&[A, BLANK3, A], 3).unwrap(), vec![A, A]);
        assert!(matches!(
            collapse(&[A, 3], 3),
            Err(CtcError::IndexOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn two_frame_uniform_example() {
        // paths aa, a-, -a collapse to "a": 3 * 0.25
        let lp = logp(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let expected = -(0.75f64).ln();
        assert!((expected - 0.287682).abs() < 1e-6);
        assert!((ctc_loss(&lp, &[0]).unwrap().loss - expected).abs() < 1e-12);
        assert!((ctc_brute_force(&lp, &[0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn single_frame_and_empty_target() {
        let lp = logp(&[&[0.2, 0.3, 0.5]]);
        assert!((ctc_loss(&lp, &[B]).unwrap().loss + 0.3f64.ln()).abs() < 1e-12);
        let lp = logp(&[&[0.2, 0.3, 0.5], &[0.1, 0.1, 0.8], &[0.6, 0.3, 0.1]]);
        let expect = -(0.5f64.ln() + 0.8f64.ln() + 0.1f64.ln());
        assert!((ctc_loss(&lp, &[]).unwrap().loss - expect).abs() < 1e-12);
    }

    #[test]
    fn infeasible_targets() {
        let lp = logp(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!(matches!(
            ctc_loss(&lp, &[0, 0]),
            Err(CtcError::InfeasibleTarget {
                frames: 2,
                required: 3
            })
        ));
        assert_eq!(ctc_brute_force(&lp, &[0, 0]).unwrap(), f64::INFINITY);
        assert!(matches!(
            ctc_loss(&lp, &[1]),
            Err(CtcError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn brute_force_size_guard() {
        let lp = Tensor::new(vec![10, 4], vec![-(4f64).ln(); 40]).unwrap();
        assert!(matches!(
            ctc_brute_force(&lp, &[0]),
            Err(CtcError::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn certain_path_has_zero_loss() {
        let lp = logp(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        let r = ctc_loss(&lp, &[A, A]).unwrap();
        assert_eq!(r.loss, 0.0);
        // gradient entries at impossible classes are exactly zero
        assert!(r.grad_logp.values().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn appending_certain_blank_frame_keeps_loss() {
        let lp = logp(&[&[0.3, 0.3, 0.4], &[0.5, 0.2, 0.3], &[0.1, 0.6, 0.3]]);
        let longer = logp(&[
            &[0.3, 0.3, 0.4],
            &[0.5, 0.2, 0.3],
            &[0.1, 0.6, 0.3],
            &[0.0, 0.0, 1.0],
        ]);
        let a = ctc_loss(&lp, &[A, B]).unwrap().loss;
        let b = ctc_loss(&longer, &[A, B]).unwrap().loss;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn greedy_decoding() {
        let alpha = Alphabet::new(vec!["a".into(), "b".into()], ClassUnit::Codepoint).unwrap();
        let lp = logp(&[
            &[0.6, 0.1, 0.3],
            &[0.6, 0.1, 0.3],
            &[0.1, 0.1, 0.8],
            &[0.1, 0.7, 0.2],
        ]);
        assert_eq!(greedy_decode(&lp, &alpha).unwrap(), "ab");
        let blanks = logp(&[&[0.1, 0.1, 0.8], &[0.2, 0.2, 0.6]]);
        assert_eq!(greedy_decode(&blanks, &alpha).unwrap(), "");
        // tie between a and b goes to a
        let tie = logp(&[&[0.4, 0.4, 0.2]]);
        assert_eq!(greedy_decode(&tie, &alpha).unwrap(), "a");
    }

    #[test]
    fn alphabet_encoding() {
        let cp = Alphabet::from_texts(["cab", "bad"]);
        assert_eq!(cp.symbols(), &["a", "b", "c", "d"]);
        assert_eq!(cp.encode("dab").unwrap(), vec![3, 0, 1]);
        assert!(matches!(
            cp.encode("ax"),
            Err(CtcError::Unencodable { position: 1, .. })
        ));
        assert_eq!(cp.missing_codepoints("axy").len(), 2);

        let gr = Alphabet::new(
            vec!["a".into(), "b".into(), "ab".into()],
            ClassUnit::Grapheme,
        )
        .unwrap();
        assert_eq!(gr.encode("abb").unwrap(), vec![2, 1]);
        assert_eq!(gr.decode(&[2, 1]), "abb");
        assert!(Alphabet::new(vec!["a".into(), "a".into()], ClassUnit::Grapheme).is_err());
        assert!(Alphabet::new(vec!["ab".into()], ClassUnit::Codepoint).is_err());
    }

    proptest! {
        #[test]
        fn inserting_blank_never_changes_collapse(
            path in proptest::collection::vec(0usize..4, 1..10),
            at in 0usize..10,
        ) {
            let at = at.min(path.len());
            let mut with_blank = path.clone();
            with_blank.insert(at, 3);
            // a blank between two frames separates them; only inserting
            // between equal neighbours could matter and that splits a repeat
            // which the collapse of the original merged.
            let orig = collapse(&path, 4).unwrap();
            let new = collapse(&with_blank, 4).unwrap();
            if at == 0 || at == path.len() || path[at - 1] != path[at] {
                prop_assert_eq!(orig, new);
            }
        }

        #[test]
        fn decode_is_invariant_under_monotone_rescaling(
            raw in proptest::collection::vec(0.01f64..1.0, 12),
            scale in 0.1f64..5.0,
        ) {
            let lp = Tensor::new(vec![4, 3], raw.iter().map(|p| p.ln()).collect()).unwrap();
            let scaled = Tensor::new(vec![4, 3], raw.iter().map(|p| scale * p.ln() - 1.0).collect()).unwrap();
            prop_assert_eq!(best_path(&lp).unwrap(), best_path(&scaled).unwrap());
        }
    }
}
