use std::io::Write;

use serde::{Deserialize, Serialize};

use super::draft::{DraftConfig, Drafter};
use crate::error::{Error, Result};
use crate::kv::KvCache;
use crate::lm::{TinyLM, Token};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpecStats {
    /// Target forward passes (one per verification round).
    pub rounds: u64,
    pub proposed: u64,
    pub accepted: u64,
    /// Accepted tokens plus one correction or bonus token per round.
    pub emitted: u64,
}

/// One line of the per-round trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u64,
    pub proposed: u64,
    pub accepted: u64,
    pub emitted: u64,
}

/// Emitted tokens per target forward pass.
pub fn block_efficiency(stats: &SpecStats) -> Result<f64> {
    if stats.rounds == 0 {
        return Err(Error::InvalidInput("block efficiency needs at least one round".into()));
    }
    Ok(stats.emitted as f64 / stats.rounds as f64)
}

/// Longest accepted prefix of `draft` given target predictions, plus the token
/// the target emits after it.
fn accept(draft: &[Token], preds: &[Token]) -> (usize, Token) {
    let a = draft.iter().zip(preds).take_while(|(d, p)| d == p).count();
    (a, preds[a])
}

/// Checks `draft` against the target's greedy choices after `context`, using
/// one batched forward over `context ++ draft`.
pub fn verify(target: &TinyLM, context: &[Token], draft: &[Token]) -> Result<(usize, Token)> {
    if draft.is_empty() {
        return Err(Error::InvalidInput("draft must be nonempty".into()));
    }
    if context.is_empty() {
        return Err(Error::InvalidInput("context must be nonempty".into()));
    }
    let seq: Vec<Token> = context.iter().chain(draft).copied().collect();
    let preds = target.forward(&seq, None, false)?.argmax_rows();
    Ok(accept(draft, &preds[context.len() - 1..]))
}

/// Verification against a live cache: feeds `pending ++ draft`, rolls back the
/// rejected suffix and returns `(accepted, next, hidden)` where `hidden` is
/// the top-layer feature that predicted `next`.
fn verify_cached(
    target: &TinyLM,
    cache: &mut KvCache,
    pending: &[Token],
    draft: &[Token],
) -> Result<(usize, Token, Vec<f32>)> {
    let start = cache.next_position();
    let seq: Vec<Token> = pending.iter().chain(draft).copied().collect();
    let out = target.forward(&seq, Some(cache), false)?;
    let preds = out.argmax_rows();
    let base = pending.len() - 1;
    let (a, next) = accept(draft, &preds[base..]);
    cache.truncate_from(start + pending.len() + a);
    Ok((a, next, row(&out.final_hidden, base + a)))
}

fn row(m: &Matrix, r: usize) -> Vec<f32> {
    m.row(r).to_vec()
}

/// Lossless speculative decoding: the output always equals
/// `greedy_decode(target, prompt, max_new)`.
pub fn decode_speculative(
    target: &TinyLM,
    draft: &DraftConfig,
    prompt: &[Token],
    max_new: usize,
) -> Result<(Vec<Token>, SpecStats)> {
    decode_speculative_traced(target, draft, prompt, max_new).map(|(t, s, _)| (t, s))
}

/// [`decode_speculative`] plus one trace record per round.
pub fn decode_speculative_traced(
    target: &TinyLM,
    draft: &DraftConfig,
    prompt: &[Token],
    max_new: usize,
) -> Result<(Vec<Token>, SpecStats, Vec<RoundTrace>)> {
    if prompt.is_empty() {
        return Err(Error::InvalidInput("prompt must be nonempty".into()));
    }
    if max_new == 0 {
        return Err(Error::InvalidInput("max_new must be ≥ 1".into()));
    }
    draft.validate(target)?;
    let mut drafter = Drafter::new(draft, target);
    let mut cache = KvCache::for_model(target.config()).with_row_window(0);
    let mut out = prompt.to_vec();
    let mut pending = prompt.to_vec();
    let mut hidden: Option<Vec<f32>> = None;
    let mut stats = SpecStats::default();
    let mut trace = Vec::new();

    while (stats.emitted as usize) < max_new {
        let remaining = max_new - stats.emitted as usize;
        // Never propose past what the caller asked for.
        let k = draft.k.min(remaining - 1);
        let proposal = if k > 0 { drafter.propose(&out, hidden.as_deref(), k)? } else { Vec::new() };
        let (a, next, h) = verify_cached(target, &mut cache, &pending, &proposal)?;
        out.extend_from_slice(&proposal[..a]);
        out.push(next);
        stats.rounds += 1;
        stats.proposed += k as u64;
        stats.accepted += a as u64;
        stats.emitted += a as u64 + 1;
        trace.push(RoundTrace { round: stats.rounds, proposed: k as u64, accepted: a as u64, emitted: a as u64 + 1 });
        hidden = Some(h);
        pending = vec![next];
    }
    Ok((out, stats, trace))
}

pub fn write_trace<W: Write>(mut out: W, trace: &[RoundTrace]) -> Result<()> {
    for r in trace {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
