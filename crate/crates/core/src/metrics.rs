//! ROUGE-1/2/L and speed/memory summaries.
//!
//! ROUGE here is F1 over clipped counts, with whitespace tokenization and
//! lowercase folding; no stemming or stopword removal.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::Token;

/// Declared in every report that carries ROUGE numbers.
pub const ROUGE_VARIANT: &str = "f1, clipped counts, whitespace tokens, lowercase, no stemming";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, hyp: usize, reference: usize) -> Self {
        if hyp == 0 || reference == 0 {
            return Self::default();
        }
        let precision = overlap as f64 / hyp as f64;
        let recall = overlap as f64 / reference as f64;
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1 }
    }
}

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts<T: Eq + std::hash::Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N over any token type.
pub fn rouge_n<T: Eq + std::hash::Hash>(reference: &[T], hypothesis: &[T], n: usize) -> Result<RougeScore> {
    if n == 0 {
        return Err(Error::InvalidInput("ROUGE-N needs n ≥ 1".into()));
    }
    let r = ngram_counts(reference, n);
    let h = ngram_counts(hypothesis, n);
    let overlap = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    Ok(RougeScore::from_counts(overlap, h.values().sum(), r.values().sum()))
}

/// Longest common subsequence length by dynamic programming.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(reference, hypothesis), hypothesis.len(), reference.len())
}

/// ROUGE-1, ROUGE-2 and ROUGE-L of two raw texts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
}

pub fn rouge_texts(reference: &str, hypothesis: &str) -> RougeTriple {
    let (r, h) = (tokenize(reference), tokenize(hypothesis));
    RougeTriple {
        rouge1: rouge_n(&r, &h, 1).expect("n = 1"),
        rouge2: rouge_n(&r, &h, 2).expect("n = 2"),
        rouge_l: rouge_l(&r, &h),
    }
}

/// Outputs and costs of one decoding run over a prompt set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub prompts: Vec<Vec<Token>>,
    pub outputs: Vec<Vec<Token>>,
    pub target_forwards: u64,
    pub wall_ns: u64,
    pub cache_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub baseline_target_forwards: u64,
    pub method_target_forwards: u64,
    pub wall_ns_baseline: u64,
    pub wall_ns_method: u64,
    pub speedup_forwards: f64,
    pub speedup_wall: f64,
    pub memory_reduction: f64,
    pub outputs_match: bool,
}

/// Compares a method run against its baseline on the same prompts.
pub fn summarize_runs(baseline: &RunRecord, method: &RunRecord) -> Result<SpeedReport> {
    if baseline.prompts != method.prompts {
        return Err(Error::InvalidInput("runs decoded different prompt sets".into()));
    }
    if method.target_forwards == 0 || baseline.cache_bytes == 0 {
        return Err(Error::InvalidInput("runs need nonzero forwards and cache bytes".into()));
    }
    let ratio = |a: u64, b: u64| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    Ok(SpeedReport {
        baseline_target_forwards: baseline.target_forwards,
        method_target_forwards: method.target_forwards,
        wall_ns_baseline: baseline.wall_ns,
        wall_ns_method: method.wall_ns,
        speedup_forwards: ratio(baseline.target_forwards, method.target_forwards),
        speedup_wall: ratio(baseline.wall_ns, method.wall_ns),
        memory_reduction: 1.0 - method.cache_bytes as f64 / baseline.cache_bytes as f64,
        outputs_match: baseline.outputs == method.outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn unigram_half() {
        let s = rouge_n(&toks("a b c d"), &toks("a b e f"), 1).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn lcs_three_of_four() {
        let s = rouge_l(&toks("a b c d"), &toks("a c b d"));
        assert_eq!(s.f1, 0.75);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(rouge_l(&toks("a b"), &toks("")), RougeScore::default());
        assert_eq!(rouge_n(&toks("a"), &toks("a"), 2).unwrap(), RougeScore::default());
        assert_eq!(rouge_n(&toks("a b"), &toks("c d"), 1).unwrap().f1, 0.0);
        assert!(rouge_n(&toks("a"), &toks("a"), 0).is_err());
    }

    #[test]
    fn clipping_and_case() {
        let s = rouge_n(&toks("The cat"), &toks("the the the"), 1).unwrap();
        assert_eq!(s.precision, 1.0 / 3.0);
        assert_eq!(s.recall, 0.5);
    }

    #[test]
    fn speed_report() {
        let base = RunRecord {
            prompts: vec![vec![1]],
            outputs: vec![vec![2]],
            target_forwards: 10,
            wall_ns: 100,
            cache_bytes: 400,
        };
        let same = summarize_runs(&base, &base).unwrap();
        assert_eq!((same.speedup_forwards, same.memory_reduction), (1.0, 0.0));
        let half = RunRecord { target_forwards: 5, cache_bytes: 300, ..base.clone() };
        let r = summarize_runs(&base, &half).unwrap();
        assert_eq!((r.speedup_forwards, r.memory_reduction), (2.0, 0.25));
        assert!(r.outputs_match);
        let other = RunRecord { prompts: vec![vec![9]], ..base.clone() };
        assert!(summarize_runs(&base, &other).is_err());
    }
}
