use edgelab::metrics::{lcs_len, rouge_l, rouge_n, rouge_texts, summarize_runs, RunRecord};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, 0..14)
}

/// A subsequence of `b` is common to `a` and `b` iff `a` contains it in order.
fn is_subsequence(needle: &[u8], hay: &[u8]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

proptest! {
    #[test]
    fn rouge_scores_are_bounded_and_f1_is_symmetric(a in words(), b in words(), n in 1usize..4) {
        let ab = rouge_n(&a, &b, n).unwrap();
        let ba = rouge_n(&b, &a, n).unwrap();
        prop_assert_eq!(ab.f1, ba.f1);
        prop_assert_eq!(ab.precision, ba.recall);
        for v in [ab.precision, ab.recall, ab.f1, rouge_l(&a, &b).f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn identical_sequences_score_one(a in prop::collection::vec(0u8..6, 2..14)) {
        prop_assert_eq!(rouge_n(&a, &a, 2).unwrap().f1, 1.0);
        prop_assert_eq!(rouge_l(&a, &a).f1, 1.0);
    }

    #[test]
    fn lcs_is_a_common_subsequence_of_maximal_length(a in words(), b in prop::collection::vec(0u8..6, 0..10)) {
        let l = lcs_len(&a, &b);
        prop_assert_eq!(l, lcs_len(&b, &a));
        prop_assert!(l <= a.len().min(b.len()));
        let best = (0u32..1 << b.len())
            .map(|mask| b.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &x)| x).collect::<Vec<_>>())
            .filter(|s| is_subsequence(s, &a))
            .map(|s| s.len())
            .max()
            .unwrap();
        prop_assert_eq!(l, best);
    }
}

#[test]
fn text_scoring_lowercases_and_splits_on_whitespace() {
    let r = rouge_texts("The cat sat on the mat", "the  CAT\tsat on a mat");
    assert_eq!(r.rouge1.precision, 5.0 / 6.0);
    assert_eq!(r.rouge2.f1, 3.0 / 5.0);
    assert_eq!(r.rouge_l.f1, 5.0 / 6.0);
    let empty = rouge_texts("", "anything");
    assert_eq!((empty.rouge1.f1, empty.rouge_l.f1), (0.0, 0.0));
    assert!(rouge_n(&[1], &[1], 0).is_err());
}

#[test]
fn run_summaries_compare_against_the_baseline() {
    let prompts = vec![vec![1, 2], vec![3]];
    let base = RunRecord {
        prompts: prompts.clone(),
        outputs: vec![vec![4], vec![5]],
        target_forwards: 30,
        wall_ns: 900,
        cache_bytes: 4096,
    };
    let fast = RunRecord { target_forwards: 12, wall_ns: 450, cache_bytes: 1024, ..base.clone() };
    let s = summarize_runs(&base, &fast).unwrap();
    assert_eq!((s.speedup_forwards, s.speedup_wall, s.memory_reduction), (2.5, 2.0, 0.75));
    assert!(s.outputs_match);

    let diverged = RunRecord { outputs: vec![vec![4], vec![6]], ..fast.clone() };
    assert!(!summarize_runs(&base, &diverged).unwrap().outputs_match);
    assert!(summarize_runs(&base, &RunRecord { prompts: vec![vec![9]], ..fast.clone() }).is_err());
    assert!(summarize_runs(&base, &RunRecord { target_forwards: 0, ..fast }).is_err());
}
