use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::lm::ModelConfig;

use super::policy::{EvictionPolicy, EvictionReport, LayerEviction};

/// Default number of recent attention rows kept per layer for
/// observation-window scoring.
pub const DEFAULT_ROW_WINDOW: usize = 16;

/// Keys, values and scoring state for one layer.
///
/// Entries are stored in position order. `acc[j]` is the attention mass entry
/// `j` has received from every query observed so far; `rows` holds the most
/// recent attention rows as `(query position, row)` pairs.
#[derive(Debug, Clone, Default)]
pub struct LayerCache {
    keys: Vec<f32>,
    values: Vec<f32>,
    positions: Vec<usize>,
    acc: Vec<f64>,
    rows: VecDeque<(usize, Vec<f64>)>,
}

impl LayerCache {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn accumulated(&self) -> &[f64] {
        &self.acc
    }

    /// Stored attention rows, oldest first.
    pub fn recent_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(|(_, r)| r.as_slice())
    }

    pub fn max_position(&self) -> Option<usize> {
        self.positions.last().copied()
    }

    pub(crate) fn key(&self, entry: usize, width: usize) -> &[f32] {
        &self.keys[entry * width..(entry + 1) * width]
    }

    pub(crate) fn value(&self, entry: usize, width: usize) -> &[f32] {
        &self.values[entry * width..(entry + 1) * width]
    }

    fn retain(&mut self, kept: &[usize], width: usize) {
        let mut keys = Vec::with_capacity(kept.len() * width);
        let mut values = Vec::with_capacity(kept.len() * width);
        for &i in kept {
            keys.extend_from_slice(&self.keys[i * width..(i + 1) * width]);
            values.extend_from_slice(&self.values[i * width..(i + 1) * width]);
        }
        self.keys = keys;
        self.values = values;
        self.positions = kept.iter().map(|&i| self.positions[i]).collect();
        self.acc = kept.iter().map(|&i| self.acc[i]).collect();
        for (_, row) in self.rows.iter_mut() {
            *row = kept.iter().filter(|&&i| i < row.len()).map(|&i| row[i]).collect();
        }
    }
}

#[derive(Debug, Clone)]
struct AutoEvict {
    policy: EvictionPolicy,
    budget: usize,
}

/// Per-layer key/value store with optional continuous eviction.
///
/// Keys are stored after rotary embedding at their absolute position;
/// eviction never re-indexes the surviving positions.
#[derive(Debug, Clone)]
pub struct KvCache {
    n_kv_heads: usize,
    head_dim: usize,
    layers: Vec<LayerCache>,
    row_window: usize,
    next_position: usize,
    auto: Option<AutoEvict>,
    evicted: Vec<usize>,
}

impl KvCache {
    pub fn new(n_layers: usize, n_kv_heads: usize, head_dim: usize) -> Self {
        Self {
            n_kv_heads,
            head_dim,
            layers: vec![LayerCache::default(); n_layers],
            row_window: DEFAULT_ROW_WINDOW,
            next_position: 0,
            auto: None,
            evicted: vec![0; n_layers],
        }
    }

    pub fn for_model(config: &ModelConfig) -> Self {
        Self::new(config.n_layers, config.n_kv_heads, config.head_dim)
    }

    /// A cache holding only positions and scores, for offline policy replay.
    pub fn score_only(n_layers: usize) -> Self {
        Self::new(n_layers, 0, 0)
    }

    /// Keep the last `n` attention rows per layer (default 16).
    pub fn with_row_window(mut self, n: usize) -> Self {
        self.row_window = n;
        for layer in &mut self.layers {
            while layer.rows.len() > n {
                layer.rows.pop_front();
            }
        }
        self
    }

    /// Evict continuously: whenever a layer exceeds `budget` after an
    /// observed query, it is shrunk back to `budget` under `policy`.
    pub fn with_continuous_eviction(mut self, policy: EvictionPolicy, budget: usize) -> Result<Self> {
        policy.check_budget(budget)?;
        policy.check_row_window(self.row_window)?;
        self.auto = Some(AutoEvict { policy, budget });
        Ok(self)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_kv_heads(&self) -> usize {
        self.n_kv_heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn row_window(&self) -> usize {
        self.row_window
    }

    pub fn layer(&self, l: usize) -> &LayerCache {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[LayerCache] {
        &self.layers
    }

    /// Position the next appended token receives by default.
    pub fn next_position(&self) -> usize {
        self.next_position
    }

    /// Entries dropped so far by continuous eviction, per layer.
    pub fn evicted_counts(&self) -> &[usize] {
        &self.evicted
    }

    pub fn total_kept(&self) -> usize {
        self.layers.iter().map(LayerCache::len).sum()
    }

    pub(crate) fn entry_width(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    /// Appends one entry to `layer`. When `attn_row` is given it must cover
    /// every kept entry plus the new one; its mass is added to the
    /// accumulated scores and the row enters the recent-row window. A cache
    /// with continuous eviction then shrinks the layer back to its budget.
    pub fn append(
        &mut self,
        layer: usize,
        k: &[f32],
        v: &[f32],
        position: usize,
        attn_row: Option<&[f64]>,
    ) -> Result<()> {
        self.check_layer(layer)?;
        let width = self.entry_width();
        if k.len() != width || v.len() != width {
            return Err(Error::Shape(format!("key/value length must be {width}, got {}/{}", k.len(), v.len())));
        }
        let lc = &self.layers[layer];
        if let Some(max) = lc.max_position() {
            if position <= max {
                return Err(Error::NonMonotonePosition { position, max });
            }
        }
        if let Some(row) = attn_row {
            if row.len() != lc.len() + 1 {
                return Err(Error::Shape(format!(
                    "attention row has {} entries, cache holds {} + 1",
                    row.len(),
                    lc.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidInput("attention row must be finite and nonnegative".into()));
            }
        }
        self.push_unchecked(layer, k, v, position);
        if let Some(row) = attn_row {
            self.observe(layer, position, row.to_vec());
        }
        self.enforce_budget(layer)
    }

    pub(crate) fn push_unchecked(&mut self, layer: usize, k: &[f32], v: &[f32], position: usize) {
        let lc = &mut self.layers[layer];
        lc.keys.extend_from_slice(k);
        lc.values.extend_from_slice(v);
        lc.positions.push(position);
        lc.acc.push(0.0);
        self.next_position = self.next_position.max(position + 1);
    }

    pub(crate) fn observe(&mut self, layer: usize, query_position: usize, row: Vec<f64>) {
        let window = self.row_window;
        let lc = &mut self.layers[layer];
        for (a, r) in lc.acc.iter_mut().zip(&row) {
            *a += r;
        }
        if window > 0 {
            if lc.rows.len() == window {
                lc.rows.pop_front();
            }
            lc.rows.push_back((query_position, row));
        }
    }

    /// Applies continuous eviction to `layer` if configured and over budget.
    pub(crate) fn enforce_budget(&mut self, layer: usize) -> Result<()> {
        let Some(auto) = self.auto.clone() else { return Ok(()) };
        if self.layers[layer].len() > auto.budget {
            let ev = self.evict_layer(layer, &auto.policy, auto.budget)?;
            self.evicted[layer] += ev.evicted_count;
        }
        Ok(())
    }

    /// One-shot eviction of every layer down to `budget`.
    pub fn evict(&mut self, policy: &EvictionPolicy, budget: usize) -> Result<EvictionReport> {
        policy.check_budget(budget)?;
        policy.check_row_window(self.row_window)?;
        let layers = (0..self.layers.len()).map(|l| self.evict_layer(l, policy, budget)).collect::<Result<Vec<_>>>()?;
        Ok(EvictionReport { layers })
    }

    pub(crate) fn evict_layer(
        &mut self,
        layer: usize,
        policy: &EvictionPolicy,
        budget: usize,
    ) -> Result<LayerEviction> {
        let before = self.layers[layer].len();
        let kept = policy.select(&self.layers[layer], layer, budget)?;
        let width = self.entry_width();
        if kept.len() < before {
            self.layers[layer].retain(&kept, width);
        }
        Ok(LayerEviction::new(kept, before, budget))
    }

    /// Drops every entry at or after `position` (speculative rollback).
    /// Attention mass already accumulated from dropped queries is not undone.
    pub fn truncate_from(&mut self, position: usize) {
        let width = self.entry_width();
        for lc in &mut self.layers {
            let keep = lc.positions.partition_point(|&p| p < position);
            lc.keys.truncate(keep * width);
            lc.values.truncate(keep * width);
            lc.positions.truncate(keep);
            lc.acc.truncate(keep);
            lc.rows.retain(|(q, _)| *q < position);
        }
        self.next_position = self.next_position.min(position);
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.layers.len() {
            return Err(Error::InvalidInput(format!("layer {layer} out of range ({} layers)", self.layers.len())));
        }
        Ok(())
    }
}

/// Bytes held by keys and values: `Σ kept · n_kv_heads · head_dim · 2 · bytes_per_element`.
pub fn cache_bytes(cache: &KvCache, bytes_per_element: u64) -> u64 {
    cache.total_kept() as u64 * cache.entry_width() as u64 * 2 * bytes_per_element
}
