//! ROUGE-N, ROUGE-L and phrase-containment accuracy.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::scalar::{ratio, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RougeScores<S> {
    pub precision: S,
    pub recall: S,
    pub f1: S,
}

impl<S: Scalar> RougeScores<S> {
    pub fn from_pr(precision: S, recall: S) -> Self {
        let sum = precision + recall;
        let f1 = if sum == S::zero() { S::zero() } else { S::of(2.0) * precision * recall / sum };
        Self { precision, recall, f1 }
    }

    fn from_counts(overlap: usize, candidate_len: usize, reference_len: usize) -> Self {
        Self::from_pr(ratio(overlap, candidate_len), ratio(overlap, reference_len))
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap between `reference` and `candidate`.
///
/// # Panics
/// If `n` is 0.
pub fn rouge_n<S: Scalar>(reference: &str, candidate: &str, n: usize) -> RougeScores<S> {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let r = tokenize(reference);
    let c = tokenize(candidate);
    let rc = ngram_counts(&r, n);
    let cc = ngram_counts(&c, n);
    let overlap = cc.iter().map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0))).sum();
    RougeScores::from_counts(overlap, c.len().saturating_sub(n - 1), r.len().saturating_sub(n - 1))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// Token-level longest common subsequence, F1 with equal weight.
pub fn rouge_l<S: Scalar>(reference: &str, candidate: &str) -> RougeScores<S> {
    let r = tokenize(reference);
    let c = tokenize(candidate);
    RougeScores::from_counts(lcs_len(&r, &c), c.len(), r.len())
}

/// Every phrase occurs in `answer`, ignoring case.
pub fn is_correct(answer: &str, required_phrases: &[String]) -> bool {
    let answer = answer.to_lowercase();
    required_phrases.iter().all(|p| answer.contains(&p.to_lowercase()))
}

/// Share of `(answer, required_phrases)` pairs judged correct; `None` for an
/// empty input.
pub fn accuracy<S: Scalar>(graded: &[(&str, &[String])]) -> Option<S> {
    if graded.is_empty() {
        return None;
    }
    let correct = graded.iter().filter(|(a, p)| is_correct(a, p)).count();
    Some(ratio(correct, graded.len()))
}
