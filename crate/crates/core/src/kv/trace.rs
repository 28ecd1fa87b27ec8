//! JSON-lines attention traces for offline policy replay.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::cache::KvCache;
use super::policy::{EvictionPolicy, EvictionReport};
use crate::error::{Error, Result};
use crate::lm::LayerAttention;

/// One head-averaged attention row: the query at `step` over the cached keys
/// at `positions` (the last of which is `step` itself).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub layer: usize,
    pub step: usize,
    pub positions: Vec<usize>,
    pub row: Vec<f64>,
}

/// Trace records from the attention captured by a forward pass.
pub fn from_capture(layers: &[LayerAttention]) -> Vec<TraceRecord> {
    let mut out = Vec::new();
    for (layer, la) in layers.iter().enumerate() {
        for (row, positions) in la.rows.iter().zip(&la.key_positions) {
            let Some(&step) = positions.last() else { continue };
            out.push(TraceRecord {
                layer,
                step,
                positions: positions.clone(),
                row: row.iter().map(|&p| p as f64).collect(),
            });
        }
    }
    out
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Rebuilds per-layer score state from a trace (no eviction during replay)
/// and applies one-shot eviction at the end.
pub fn replay(
    records: &[TraceRecord],
    policy: &EvictionPolicy,
    budget: usize,
    row_window: usize,
) -> Result<(KvCache, EvictionReport)> {
    let n_layers = records.iter().map(|r| r.layer + 1).max().unwrap_or(0);
    let mut cache = KvCache::score_only(n_layers).with_row_window(row_window);
    let mut sorted: Vec<&TraceRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.layer, r.step));
    for r in sorted {
        if r.positions.last() != Some(&r.step) || r.positions.len() != r.row.len() {
            return Err(Error::Format(format!("trace record layer {} step {} is inconsistent", r.layer, r.step)));
        }
        let cached = cache.layer(r.layer).positions();
        if cached != &r.positions[..r.positions.len() - 1] {
            return Err(Error::Format(format!(
                "trace record layer {} step {} does not extend the replayed cache",
                r.layer, r.step
            )));
        }
        cache.append(r.layer, &[], &[], r.step, Some(&r.row))?;
    }
    let report = cache.evict(policy, budget)?;
    Ok((cache, report))
}
