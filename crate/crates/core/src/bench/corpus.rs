//! Synthetic corpora: needle retrieval, copy prompts and dialogues.
//!
//! Needle prompts target the probe vocabulary: filler ids `0..46`, a query
//! marker `46`, key ids `48..56` and value ids `56..64`. A prompt is
//!
//! ```text
//! filler[..pos] ++ [K1 K2 V1 V2] ++ filler[pos..] ++ [Q Q K1 K2]
//! ```
//!
//! where the haystack holds `context_len` filler tokens. The value tokens are
//! the answer span and never occur elsewhere.

use std::ops::Range;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LayerSlot, ModelConfig, SlotId, TinyLM, Token, Weight};
use crate::tensor::{keyed_rng, Matrix};

pub const PROBE_VOCAB: usize = 64;
pub const FILLER: Range<Token> = 0..46;
pub const QUERY_MARK: Token = 46;
pub const KEYS: Range<Token> = 48..56;
pub const VALUES: Range<Token> = 56..64;
pub const NEEDLE_LEN: usize = 4;
pub const QUERY_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedleInstance {
    pub prompt: Vec<Token>,
    /// Positions of the value tokens.
    pub answer_span: Range<usize>,
    pub needle_pos: usize,
}

impl NeedleInstance {
    pub fn answer(&self) -> &[Token] {
        &self.prompt[self.answer_span.clone()]
    }
}

/// Deterministic needle prompt; see the module docs for the layout.
pub fn gen_needle(context_len: usize, needle_pos: usize, seed: u64) -> Result<NeedleInstance> {
    if needle_pos >= context_len {
        return Err(Error::InvalidInput(format!("needle_pos {needle_pos} must be below context_len {context_len}")));
    }
    let mut rng = keyed_rng(seed, "needle");
    let keys: Vec<Token> = KEYS.collect();
    let values: Vec<Token> = VALUES.collect();
    let k: Vec<Token> = keys.choose_multiple(&mut rng, 2).copied().collect();
    let v: Vec<Token> = values.choose_multiple(&mut rng, 2).copied().collect();
    let filler: Vec<Token> = (0..context_len).map(|_| rng.random_range(FILLER)).collect();
    let mut prompt = Vec::with_capacity(context_len + NEEDLE_LEN + QUERY_LEN);
    prompt.extend_from_slice(&filler[..needle_pos]);
    prompt.extend_from_slice(&[k[0], k[1], v[0], v[1]]);
    prompt.extend_from_slice(&filler[needle_pos..]);
    prompt.extend_from_slice(&[QUERY_MARK, QUERY_MARK, k[0], k[1]]);
    Ok(NeedleInstance { prompt, answer_span: needle_pos + 2..needle_pos + 4, needle_pos })
}

pub fn probe_config() -> ModelConfig {
    ModelConfig { ffn_mult: 1, rope_theta: 1.0e6, ..ModelConfig::new(PROBE_VOCAB, 32, 2, 2, 1) }
}

/// Content-addressed retrieval model for needle experiments.
///
/// Untrained weights attend almost uniformly, so eviction policies have
/// nothing to find. The probe instead reads one "cue" embedding coordinate
/// into the query and one "signature" coordinate into the key, both on the
/// slowest rotary pair, so key tokens in the query strongly attend to the
/// value tokens wherever they sit. Output and MLP projections are zero, which
/// keeps the residual stream (and thus the attention pattern) identical
/// across layers.
pub fn probe_model(seed: u64) -> Result<TinyLM> {
    const CUE: usize = 0;
    const SIG: usize = 1;
    const MARK: f32 = 2.0;
    const GAIN: f32 = 4.0;
    let cfg = probe_config();
    let mut model = TinyLM::init(cfg.clone(), seed)?;
    let (d, hd) = (cfg.d_model, cfg.head_dim);

    let mut rng = keyed_rng(seed, "probe.embed");
    let mut embed = Matrix::randn(cfg.vocab_size, d, 1.0, &mut rng);
    for t in 0..cfg.vocab_size as Token {
        embed.set(t as usize, CUE, if KEYS.contains(&t) { MARK } else { 0.0 });
        embed.set(t as usize, SIG, if VALUES.contains(&t) { MARK } else { 0.0 });
    }
    model.set_weight(SlotId::TokEmbed, Weight::Dense(embed))?;

    let slow = hd - 2;
    for l in 0..cfg.n_layers {
        let mut wq = Matrix::zeros(cfg.q_dim(), d);
        for h in 0..cfg.n_heads {
            wq.set(h * hd + slow, CUE, GAIN);
        }
        let mut wk = Matrix::zeros(cfg.kv_dim(), d);
        for h in 0..cfg.n_kv_heads {
            wk.set(h * hd + slow, SIG, GAIN);
        }
        model.set_weight(SlotId::Layer(l, LayerSlot::Wq), Weight::Dense(wq))?;
        model.set_weight(SlotId::Layer(l, LayerSlot::Wk), Weight::Dense(wk))?;
        model.set_weight(SlotId::Layer(l, LayerSlot::Wo), Weight::Dense(Matrix::zeros(d, cfg.q_dim())))?;
        model.set_weight(SlotId::Layer(l, LayerSlot::WDown), Weight::Dense(Matrix::zeros(d, cfg.ffn_dim())))?;
    }
    Ok(model)
}

/// `len` uniform tokens below `vocab`.
pub fn copy_prompt(len: usize, vocab: usize, seed: u64) -> Vec<Token> {
    let mut rng = keyed_rng(seed, "copy");
    (0..len).map(|_| rng.random_range(0..vocab as Token)).collect()
}

pub const DEMO_ENTITIES: [&str; 8] = ["car", "dog", "river", "house", "phone", "tree", "boat", "bird"];
const COLORS: [&str; 5] = ["red", "blue", "green", "white", "black"];
const VERBS: [&str; 4] = ["saw", "moved", "found", "painted"];
const FRAME: [&str; 6] = ["a:", "b:", "the", "near", "we", "."];

/// Two-speaker dialogue of `turns` lines over `lexicon` entities.
pub fn gen_dialogue(turns: usize, lexicon: &[String], seed: u64) -> String {
    let mut rng = keyed_rng(seed, "dialogue");
    let pick = |rng: &mut rand_chacha::ChaCha8Rng, xs: &[&str]| xs[rng.random_range(0..xs.len())].to_string();
    (0..turns)
        .map(|t| {
            let speaker = if t % 2 == 0 { "A:" } else { "B:" };
            let e1 = &lexicon[rng.random_range(0..lexicon.len())];
            let e2 = &lexicon[rng.random_range(0..lexicon.len())];
            format!("{speaker} we {} the {} {e1} near the {e2} .", pick(&mut rng, &VERBS), pick(&mut rng, &COLORS))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Maps whitespace words to token ids: fixed frame words first, then the
/// lexicon, ids wrapping at `vocab`.
pub fn tokenize_dialogue(text: &str, lexicon: &[String], vocab: usize) -> Vec<Token> {
    let mut words: Vec<String> = FRAME.iter().chain(&VERBS).chain(&COLORS).map(|s| s.to_string()).collect();
    words.extend(lexicon.iter().map(|s| s.to_lowercase()));
    text.split_whitespace()
        .map(|w| {
            let w = w.to_lowercase();
            let id = words.iter().position(|x| *x == w).unwrap_or(words.len());
            (id % vocab) as Token
        })
        .collect()
}

pub fn demo_lexicon() -> Vec<String> {
    DEMO_ENTITIES.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kv::{EvictionPolicy, KvCache};

    #[test]
    fn needle_is_deterministic_and_unique() {
        let a = gen_needle(64, 10, 3).unwrap();
        assert_eq!(a, gen_needle(64, 10, 3).unwrap());
        assert_eq!(a.prompt.len(), 64 + NEEDLE_LEN + QUERY_LEN);
        for &t in a.answer() {
            assert_eq!(a.prompt.iter().filter(|&&x| x == t).count(), 1);
        }
        assert!(gen_needle(64, 0, 1).is_ok());
        assert!(gen_needle(64, 63, 1).is_ok());
        assert!(gen_needle(64, 64, 1).is_err());
    }

    #[test]
    fn probe_query_attends_to_values() {
        let m = probe_model(0).unwrap();
        let inst = gen_needle(200, 77, 5).unwrap();
        let out = m.forward(&inst.prompt, None, true).unwrap();
        for layer in out.attn_rows.unwrap() {
            let last = layer.rows.last().unwrap();
            let mass: f32 = inst.answer_span.clone().map(|i| last[i]).sum();
            assert!(mass > 0.9, "answer mass {mass}");
        }
    }

    #[test]
    fn probe_retrieval_survives_obs_window() {
        let m = probe_model(1).unwrap();
        let inst = gen_needle(300, 40, 2).unwrap();
        let mut cache = KvCache::for_model(m.config());
        m.forward(&inst.prompt, Some(&mut cache), false).unwrap();
        let n = inst.prompt.len();
        cache.evict(&EvictionPolicy::ObsWindow { obs: 16, pool_kernel: 5 }, n / 2).unwrap();
        for lc in cache.layers() {
            assert!(inst.answer_span.clone().all(|p| lc.positions().contains(&p)));
        }
    }

    #[test]
    fn dialogue_tokens_in_vocab() {
        let lex = demo_lexicon();
        let text = gen_dialogue(4, &lex, 1);
        assert_eq!(text.lines().count(), 4);
        assert!(tokenize_dialogue(&text, &lex, 16).iter().all(|&t| t < 16));
    }
}
