use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KvCache;
use crate::lm::{TinyLM, Token, INIT_STD};
use crate::tensor::{argmax, keyed_rng, silu, Matrix};

/// Two-layer map `[h_prev ; embed(last)] -> d_model`:
/// `h = W2 · silu(W1 · [h_prev ; e])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHead {
    /// `d × 2d`.
    pub w1: Matrix,
    /// `d × d`.
    pub w2: Matrix,
}

impl FeatureHead {
    pub fn zeros(d_model: usize) -> Self {
        Self { w1: Matrix::zeros(d_model, 2 * d_model), w2: Matrix::zeros(d_model, d_model) }
    }

    /// Untrained head with `Normal(0, std)` weights.
    pub fn random(d_model: usize, std: f32, seed: u64) -> Self {
        Self {
            w1: Matrix::randn(d_model, 2 * d_model, std, &mut keyed_rng(seed, "feature_head.w1")),
            w2: Matrix::randn(d_model, d_model, std, &mut keyed_rng(seed, "feature_head.w2")),
        }
    }

    /// Externally trained weights.
    pub fn from_weights(w1: Matrix, w2: Matrix) -> Result<Self> {
        let d = w2.rows;
        if w2.cols != d || w1.shape() != (d, 2 * d) {
            return Err(Error::Shape(format!("feature head needs {d}x{} and {d}x{d}", 2 * d)));
        }
        Ok(Self { w1, w2 })
    }

    pub fn d_model(&self) -> usize {
        self.w2.rows
    }

    pub fn step(&self, h_prev: &[f32], embed: &[f32]) -> Vec<f32> {
        let input: Vec<f32> = h_prev.iter().chain(embed).copied().collect();
        let mid: Vec<f32> = self.w1.matvec(&input).into_iter().map(silu).collect();
        self.w2.matvec(&mid)
    }
}

#[derive(Debug, Clone)]
pub enum DraftKind {
    /// A separate (usually smaller) model sharing the target's vocabulary.
    Independent(Box<TinyLM>),
    /// Autoregression over the target's top-layer features, decoded through
    /// the target's embeddings and output head.
    FeatureReuse(FeatureHead),
}

#[derive(Debug, Clone)]
pub struct DraftConfig {
    pub kind: DraftKind,
    /// Draft length per round.
    pub k: usize,
}

pub const DEFAULT_DRAFT_LEN: usize = 4;

impl DraftConfig {
    pub fn independent(model: TinyLM, k: usize) -> Self {
        Self { kind: DraftKind::Independent(Box::new(model)), k }
    }

    pub fn feature_reuse(head: FeatureHead, k: usize) -> Self {
        Self { kind: DraftKind::FeatureReuse(head), k }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            DraftKind::Independent(_) => "independent",
            DraftKind::FeatureReuse(_) => "feature_reuse",
        }
    }

    pub fn validate(&self, target: &TinyLM) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("draft length k must be ≥ 1".into()));
        }
        match &self.kind {
            DraftKind::Independent(m) if m.config().vocab_size != target.config().vocab_size => {
                Err(Error::Config(format!(
                    "draft vocabulary {} differs from target {}",
                    m.config().vocab_size,
                    target.config().vocab_size
                )))
            }
            DraftKind::FeatureReuse(h) if h.d_model() != target.config().d_model => Err(Error::Config(format!(
                "feature head width {} differs from target d_model {}",
                h.d_model(),
                target.config().d_model
            ))),
            _ => Ok(()),
        }
    }
}

/// Stateless proposal: `k` greedy draft tokens continuing `context`.
///
/// `last_hidden` is the target's top-layer feature preceding the last context
/// token (zeros when unknown); only the feature-reuse draft reads it.
pub fn propose(
    draft: &DraftConfig,
    target: &TinyLM,
    context: &[Token],
    last_hidden: Option<&[f32]>,
    k: usize,
) -> Result<Vec<Token>> {
    Drafter::new(draft, target).propose(context, last_hidden, k)
}

/// Draft state carried across rounds of one decode loop.
pub(crate) struct Drafter<'a> {
    draft: &'a DraftConfig,
    target: &'a TinyLM,
    cache: Option<KvCache>,
    fed: Vec<Token>,
}

impl<'a> Drafter<'a> {
    pub(crate) fn new(draft: &'a DraftConfig, target: &'a TinyLM) -> Self {
        let cache = match &draft.kind {
            DraftKind::Independent(m) => Some(KvCache::for_model(m.config()).with_row_window(0)),
            DraftKind::FeatureReuse(_) => None,
        };
        Self { draft, target, cache, fed: Vec::new() }
    }

    pub(crate) fn propose(&mut self, context: &[Token], last_hidden: Option<&[f32]>, k: usize) -> Result<Vec<Token>> {
        if context.is_empty() {
            return Err(Error::InvalidInput("draft context must be nonempty".into()));
        }
        match &self.draft.kind {
            DraftKind::Independent(model) => {
                let cache = self.cache.as_mut().expect("independent drafts keep a cache");
                // Reuse the cached prefix shared with the new context, but
                // always refeed the last token to get its logits.
                let common = self.fed.iter().zip(context).take_while(|(a, b)| a == b).count().min(context.len() - 1);
                cache.truncate_from(common);
                self.fed.truncate(common);
                let mut logits = model.forward(&context[common..], Some(cache), false)?.logits;
                self.fed.extend_from_slice(&context[common..]);
                let mut out = Vec::with_capacity(k);
                while out.len() < k {
                    let t = argmax(logits.row(logits.rows - 1)) as Token;
                    out.push(t);
                    if out.len() < k {
                        logits = model.forward(&[t], Some(cache), false)?.logits;
                        self.fed.push(t);
                    }
                }
                Ok(out)
            }
            DraftKind::FeatureReuse(head) => {
                let d = self.target.config().d_model;
                let embed = self.target.tok_embed().matrix();
                let mut h = match last_hidden {
                    Some(h) if h.len() == d => h.to_vec(),
                    Some(h) => return Err(Error::Shape(format!("hidden state has {} entries, expected {d}", h.len()))),
                    None => vec![0.0; d],
                };
                let mut last = *context.last().expect("nonempty");
                if last as usize >= embed.rows {
                    return Err(Error::TokenOutOfRange { token: last, vocab: embed.rows });
                }
                let mut out = Vec::with_capacity(k);
                for _ in 0..k {
                    h = head.step(&h, embed.row(last as usize));
                    last = argmax(&self.target.lm_head_logits(&h)) as Token;
                    out.push(last);
                }
                Ok(out)
            }
        }
    }
}

/// Zero-initialized feature head over a target of width `d_model`, for tests
/// and demos that need a deterministic constant draft.
pub fn zero_head(target: &TinyLM) -> FeatureHead {
    FeatureHead::zeros(target.config().d_model)
}

/// Random feature head with the model's init scale.
pub fn random_head(target: &TinyLM, seed: u64) -> FeatureHead {
    FeatureHead::random(target.config().d_model, INIT_STD, seed)
}
