use edgelab::train::{
    entity_density_reward, entity_weighted_ce, generation_loss, key_info_reward, log_sigmoid, mpo_joint_loss,
    mpo_pair_filter, mpo_preference_loss, mpo_quality_loss, reposition_images, reward_shift_update,
    select_by_difficulty, total_reward, DifficultyScore, DiscardReason, InterleavedDoc, Layout, Lexicon, MpoWeights,
    PairDecision, PairSim, PrefSample, RolloutRecord, DEFAULT_CONTRAST_MAX, DEFAULT_GT_MAX,
};
use proptest::prelude::*;

proptest! {
    #[test]
    fn preference_loss_falls_as_the_margin_grows(m in -50.0f64..50.0, d in 0.01f64..10.0, beta in 0.01f64..2.0) {
        let at = |x: f64| mpo_preference_loss(&[PrefSample::from_ratios(x, 0.0)], beta).unwrap();
        prop_assert!(at(m + d) <= at(m));
        prop_assert!(at(m) > 0.0);
    }

    #[test]
    fn log_sigmoid_matches_the_naive_form_where_that_is_safe(x in -30.0f64..30.0) {
        let naive = (1.0 / (1.0 + (-x).exp())).ln();
        prop_assert!((log_sigmoid(x) - naive).abs() <= 1e-12 * naive.abs().max(1.0));
    }

    #[test]
    fn selection_partitions_the_input(counts in prop::collection::vec(0u32..=8, 0..40), lo in 0u32..=8, span in 0u32..=8) {
        let hi = (lo + span).min(8);
        let recs: Vec<_> = counts.iter().enumerate()
            .map(|(i, &c)| RolloutRecord { id: format!("r{i}"), n_rollouts: 8, n_correct: c })
            .collect();
        for score in [DifficultyScore::Correct, DifficultyScore::Incorrect] {
            let s = select_by_difficulty(&recs, lo, hi, score).unwrap();
            prop_assert_eq!(s.selected.len() + s.excluded.len(), recs.len());
            let mut merged: Vec<_> = s.selected.iter().chain(&s.excluded).cloned().collect();
            merged.sort_by_key(|r| r.id[1..].parse::<usize>().unwrap());
            prop_assert_eq!(&merged, &recs);
            for r in &s.selected {
                let v = if score == DifficultyScore::Correct { r.n_correct } else { 8 - r.n_correct };
                prop_assert!((lo..=hi).contains(&v));
            }
        }
    }
}

#[test]
fn losses_stay_finite_at_extreme_margins() {
    for beta in [0.1, 1.0] {
        let big = mpo_preference_loss(&[PrefSample::from_ratios(1e4, -1e4)], beta).unwrap();
        let small = mpo_preference_loss(&[PrefSample::from_ratios(-1e4, 1e4)], beta).unwrap();
        assert!((0.0..1e-12).contains(&big));
        assert!((small - beta * 2e4).abs() <= 1e-9 * small);
        let q = mpo_quality_loss(&[PrefSample::from_ratios(1e4, 1e4)], beta, 0.5).unwrap();
        assert!(q.is_finite());
    }
    assert!(mpo_preference_loss(&[PrefSample::from_ratios(f64::NAN, 0.0)], 1.0).is_err());
    assert!(mpo_preference_loss(&[], 1.0).is_err());
}

#[test]
fn joint_loss_is_the_weighted_sum() {
    let batch = [
        PrefSample { lp_theta_c: -1.0, lp_ref_c: -1.5, lp_theta_r: -2.0, lp_ref_r: -1.0 },
        PrefSample::from_ratios(0.3, 0.1),
    ];
    let w = MpoWeights { w_p: 0.8, w_q: 0.2, w_g: 1.0, beta: 0.5, delta: 0.1 };
    let toks = [-0.5, -1.25, -0.25];
    let j = mpo_joint_loss(&batch, &w, &toks).unwrap();
    assert_eq!(j.preference, mpo_preference_loss(&batch, 0.5).unwrap());
    assert_eq!(j.quality, mpo_quality_loss(&batch, 0.5, 0.1).unwrap());
    assert_eq!(j.generation, 2.0);
    assert_eq!(j.total, 0.8 * j.preference + 0.2 * j.quality + j.generation);
    assert!(mpo_joint_loss(&batch, &MpoWeights { w_p: -1.0, ..w }, &toks).is_err());
    assert!(mpo_joint_loss(&batch, &MpoWeights { beta: 0.0, ..w }, &toks).is_err());
    assert!(generation_loss(&[]).is_err());
}

#[test]
fn entity_weights_scale_their_tokens() {
    let lp = vec![vec![-1.0, -2.0], vec![-0.5]];
    assert_eq!(entity_weighted_ce(&lp, &[vec![1.0, 1.0], vec![1.0]]).unwrap(), 3.5 / 2.0);
    assert_eq!(entity_weighted_ce(&lp, &[vec![1.0, 3.0], vec![2.0]]).unwrap(), 8.0 / 2.0);
    assert!(entity_weighted_ce(&lp, &[vec![1.0, 0.5], vec![1.0]]).is_err());
    assert!(entity_weighted_ce(&lp, &[vec![1.0], vec![1.0]]).is_err());
}

#[test]
fn reward_shift_is_an_exponential_average() {
    let mut d = 0.0;
    for _ in 0..200 {
        d = reward_shift_update(d, 2.0, 0.9).unwrap();
    }
    assert!((d - 2.0).abs() < 1e-8);
    assert_eq!(reward_shift_update(1.0, 3.0, 0.0).unwrap(), 3.0);
    assert!(reward_shift_update(0.0, 1.0, 1.0).is_err());
}

#[test]
fn caption_rewards_from_the_demo_lexicon() {
    let lex = Lexicon::demo();
    let s = lex.analyze("Two red dog, near a House.");
    assert_eq!(s.tokens, ["two", "red", "dog", "near", "a", "house"]);
    assert_eq!(entity_density_reward(&s).unwrap(), 2.0 / 6.0);
    assert!(s.has_color && s.has_number);
    assert_eq!(key_info_reward(&s, 0.5, 0.25), 0.75);
    let plain = lex.analyze("something plain");
    assert_eq!(key_info_reward(&plain, 0.5, 0.25), 0.0);
    assert!(lex.analyze("3 boats").has_number);
    assert!(entity_density_reward(&lex.analyze("  ")).is_err());
    assert_eq!(total_reward(0.5, 1.0, 2.0, [1.0, 0.5, 0.25]), 1.5);
}

#[test]
fn pair_filter_thresholds_are_inclusive_keeps() {
    let f = |a, b| {
        mpo_pair_filter(&PairSim { sim_chosen_rejected: a, sim_rejected_gt: b }, DEFAULT_CONTRAST_MAX, DEFAULT_GT_MAX)
            .unwrap()
    };
    assert_eq!(f(DEFAULT_CONTRAST_MAX, DEFAULT_GT_MAX), PairDecision::Keep);
    assert_eq!(f(0.91, 0.95), PairDecision::Discard(DiscardReason::InsufficientContrast));
    assert_eq!(f(0.5, 0.81), PairDecision::Discard(DiscardReason::RejectedTooCorrect));
}

#[test]
fn repositioning_keeps_images_and_text() {
    let text = "intro <img>a.png</img> middle <img>b.png</img> end";
    let doc = InterleavedDoc::parse(text).unwrap();
    let mut moved = 0;
    for seed in 0..200 {
        let out = reposition_images(&doc, 0.3, seed).unwrap();
        assert_eq!(out.segments, doc.segments);
        assert_eq!(reposition_images(&doc, 0.3, seed).unwrap(), out);
        if out.layout == Layout::Leading {
            moved += 1;
            assert_eq!(InterleavedDoc::parse(&out.serialize()).unwrap(), out);
        } else {
            assert_eq!(out.serialize(), text);
        }
    }
    assert!((30..=90).contains(&moved), "{moved}");
}
