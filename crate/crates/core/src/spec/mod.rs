//! Lossless chain speculative decoding with greedy verification.
//!
//! Each round the draft proposes `k` tokens, the target scores
//! `pending ++ draft` in one forward pass, the longest matching prefix is
//! accepted and the target's own next token is appended. Block efficiency is
//! emitted tokens per target forward.

mod decode;
mod draft;

pub use decode::{
    block_efficiency, decode_speculative, decode_speculative_traced, verify, write_trace, RoundTrace, SpecStats,
};
pub use draft::{propose, random_head, zero_head, DraftConfig, DraftKind, FeatureHead, DEFAULT_DRAFT_LEN};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{greedy_decode, ModelConfig, TinyLM};

    fn target() -> TinyLM {
        TinyLM::init(ModelConfig::new(48, 16, 2, 4, 2), 11).unwrap()
    }

    #[test]
    fn self_draft_attains_k_plus_one() {
        let t = target();
        let d = DraftConfig::independent(t.clone(), 4);
        t.reset_forward_count();
        let (out, s) = decode_speculative(&t, &d, &[1, 2, 3], 15).unwrap();
        assert_eq!(out, greedy_decode(&t, &[1, 2, 3], 15).unwrap());
        assert_eq!((s.rounds, s.accepted, s.proposed, s.emitted), (3, 12, 12, 15));
        assert_eq!(block_efficiency(&s).unwrap(), 5.0);
    }

    #[test]
    fn forward_count_equals_rounds() {
        let t = target();
        let d = DraftConfig::feature_reuse(random_head(&t, 3), 3);
        t.reset_forward_count();
        let (_, s) = decode_speculative(&t, &d, &[5, 6], 20).unwrap();
        assert_eq!(t.forward_count(), s.rounds);
        assert_eq!(s.emitted, s.accepted + s.rounds);
    }

    #[test]
    fn zero_head_proposes_constant() {
        let t = target();
        let d = DraftConfig::feature_reuse(zero_head(&t), 3);
        let p = propose(&d, &t, &[4, 9], None, 3).unwrap();
        assert_eq!(p, vec![0, 0, 0]);
        assert!(propose(&d, &t, &[], None, 3).is_err());
    }

    #[test]
    fn verify_examples() {
        let t = target();
        let g = greedy_decode(&t, &[7, 8], 3).unwrap();
        let cont = &g[2..];
        assert_eq!(verify(&t, &[7, 8], cont).unwrap(), (3, greedy_decode(&t, &[7, 8], 4).unwrap()[5]));
        let bad = [cont[0], cont[1], (cont[2] + 1) % 48];
        assert_eq!(verify(&t, &[7, 8], &bad).unwrap(), (2, cont[2]));
        assert!(verify(&t, &[7], &[]).is_err());
    }

    #[test]
    fn efficiency_needs_rounds() {
        assert!(block_efficiency(&SpecStats::default()).is_err());
        let s = SpecStats { rounds: 4, emitted: 15, ..Default::default() };
        assert_eq!(block_efficiency(&s).unwrap(), 3.75);
    }
}
