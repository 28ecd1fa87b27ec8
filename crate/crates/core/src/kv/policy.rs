//! Eviction policies and their scoring.
//!
//! Every policy splits the cache into a mandatory set (always kept) and
//! candidates ranked by a per-entry score. Free slots go to the highest
//! scores; equal scores prefer the more recent entry.

use num_rational::Ratio;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cache::LayerCache;
use crate::error::{Error, Result};
use crate::tensor::keyed_rng;

/// Weights and windows of the configurable hybrid policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridWeights {
    pub lambda_sink: f64,
    pub lambda_recent: f64,
    pub lambda_acc: f64,
    pub lambda_win: f64,
    /// Leading entries flagged by the sink indicator.
    #[serde(default = "default_sinks")]
    pub sinks: usize,
    pub obs: usize,
    pub pool_kernel: usize,
}

fn default_sinks() -> usize {
    4
}

impl Default for HybridWeights {
    fn default() -> Self {
        Self {
            lambda_sink: 0.1,
            lambda_recent: 0.1,
            lambda_acc: 0.3,
            lambda_win: 0.5,
            sinks: 4,
            obs: 16,
            pool_kernel: 5,
        }
    }
}

impl HybridWeights {
    fn lambdas(&self) -> [f64; 4] {
        [self.lambda_sink, self.lambda_recent, self.lambda_acc, self.lambda_win]
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.lambdas();
        if l.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("hybrid weights must be finite and nonnegative".into()));
        }
        if l.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("hybrid weights are all zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvictionPolicy {
    /// Keep the first `sinks` entries and the most recent ones.
    AttentionSink {
        sinks: usize,
        window: usize,
    },
    /// Keep the `recent` newest entries, then rank by accumulated attention.
    HeavyHitter {
        recent: usize,
    },
    /// Keep the last `obs` entries, then rank by their pooled attention.
    ObsWindow {
        obs: usize,
        pool_kernel: usize,
    },
    Hybrid(HybridWeights),
    /// Keep the newest entry and a uniformly random subset of the rest.
    Random {
        seed: u64,
    },
}

impl EvictionPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            EvictionPolicy::AttentionSink { .. } => "attention_sink",
            EvictionPolicy::HeavyHitter { .. } => "heavy_hitter",
            EvictionPolicy::ObsWindow { .. } => "obs_window",
            EvictionPolicy::Hybrid(_) => "hybrid",
            EvictionPolicy::Random { .. } => "random",
        }
    }

    /// Whether candidates are ranked by observed attention.
    pub fn is_score_based(&self) -> bool {
        matches!(
            self,
            EvictionPolicy::HeavyHitter { .. } | EvictionPolicy::ObsWindow { .. } | EvictionPolicy::Hybrid(_)
        )
    }

    pub fn validate(&self) -> Result<()> {
        let odd = |k: usize| {
            if k % 2 == 1 {
                Ok(())
            } else {
                Err(Error::Config(format!("pool_kernel must be odd, got {k}")))
            }
        };
        let positive = |name: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be at least 1")))
            }
        };
        match self {
            EvictionPolicy::AttentionSink { window, .. } => positive("window", *window),
            EvictionPolicy::HeavyHitter { recent } => positive("recent", *recent),
            EvictionPolicy::ObsWindow { obs, pool_kernel } => {
                positive("obs", *obs)?;
                odd(*pool_kernel)
            }
            EvictionPolicy::Hybrid(w) => {
                w.validate()?;
                positive("obs", w.obs)?;
                odd(w.pool_kernel)
            }
            EvictionPolicy::Random { .. } => Ok(()),
        }
    }

    /// Smallest budget the policy accepts.
    pub fn floor(&self) -> usize {
        match self {
            EvictionPolicy::AttentionSink { sinks, window } => sinks + window,
            EvictionPolicy::HeavyHitter { recent } => *recent,
            EvictionPolicy::ObsWindow { obs, .. } => *obs,
            EvictionPolicy::Hybrid(w) => w.obs,
            EvictionPolicy::Random { .. } => 1,
        }
    }

    pub fn check_budget(&self, budget: usize) -> Result<()> {
        self.validate()?;
        if budget == 0 || budget < self.floor() {
            return Err(Error::Config(format!(
                "budget {budget} is below the {} policy floor of {}",
                self.name(),
                self.floor().max(1)
            )));
        }
        Ok(())
    }

    pub(crate) fn check_row_window(&self, row_window: usize) -> Result<()> {
        let obs = match self {
            EvictionPolicy::ObsWindow { obs, .. } => *obs,
            EvictionPolicy::Hybrid(w) => w.obs,
            _ => return Ok(()),
        };
        if obs > row_window {
            return Err(Error::Config(format!(
                "observation window {obs} exceeds the cache's stored rows ({row_window})"
            )));
        }
        Ok(())
    }

    /// Indices (into the layer's current order) that survive eviction.
    pub(crate) fn select(&self, layer: &LayerCache, layer_idx: usize, budget: usize) -> Result<Vec<usize>> {
        let n = layer.len();
        if n <= budget {
            return Ok((0..n).collect());
        }
        let (mandatory, scores) = match self {
            EvictionPolicy::AttentionSink { sinks, window } => {
                let mandatory = (0..n).map(|i| i < *sinks || i + window >= n).collect();
                (mandatory, (0..n).map(|i| i as f64).collect())
            }
            EvictionPolicy::HeavyHitter { recent } => (recent_mask(n, *recent), layer.accumulated().to_vec()),
            EvictionPolicy::ObsWindow { obs, pool_kernel } => {
                let rows: Vec<&[f64]> = layer.recent_rows().collect();
                (recent_mask(n, *obs), window_scores(&rows, n, *obs, *pool_kernel))
            }
            EvictionPolicy::Hybrid(w) => {
                let mandatory = recent_mask(n, w.obs);
                let rows: Vec<&[f64]> = layer.recent_rows().collect();
                let win = window_scores(&rows, n, w.obs, w.pool_kernel);
                let cand: Vec<usize> = (0..n).filter(|&i| !mandatory[i]).collect();
                let pick = |v: &dyn Fn(usize) -> f64| cand.iter().map(|&i| v(i)).collect::<Vec<f64>>();
                let comps = HybridComponents {
                    sink: pick(&|i| if i < w.sinks { 1.0 } else { 0.0 }),
                    recency: pick(&|i| i as f64),
                    acc: pick(&|i| layer.accumulated()[i]),
                    window: pick(&|i| win[i]),
                };
                let cand_scores = score_hybrid(&comps, w)?;
                let mut scores = vec![f64::NEG_INFINITY; n];
                for (&i, s) in cand.iter().zip(cand_scores) {
                    scores[i] = s;
                }
                (mandatory, scores)
            }
            EvictionPolicy::Random { seed } => {
                let key = format!("evict/{layer_idx}/{n}/{}", layer.max_position().unwrap_or(0));
                let mut rng = keyed_rng(*seed, &key);
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                let mut scores = vec![0.0; n];
                for (rank, i) in order.into_iter().enumerate() {
                    scores[i] = rank as f64;
                }
                (recent_mask(n, 1), scores)
            }
        };
        Ok(fill_budget(&mandatory, &scores, budget))
    }
}

fn recent_mask(n: usize, recent: usize) -> Vec<bool> {
    (0..n).map(|i| i + recent >= n).collect()
}

/// Mandatory entries plus the best-scoring candidates, ascending.
fn fill_budget(mandatory: &[bool], scores: &[f64], budget: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = (0..mandatory.len()).filter(|&i| mandatory[i]).collect();
    let slots = budget.saturating_sub(kept.len());
    let mut cand: Vec<usize> = (0..mandatory.len()).filter(|&i| !mandatory[i]).collect();
    cand.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(b.cmp(&a)));
    kept.extend(cand.into_iter().take(slots));
    kept.sort_unstable();
    kept
}

/// Observation-window scores for the `n - obs` prefix entries: attention
/// summed over the last `obs` rows, then mean-pooled with an odd kernel
/// clipped at the prefix edges. Window entries score 0.
pub fn window_scores(rows: &[&[f64]], n: usize, obs: usize, pool_kernel: usize) -> Vec<f64> {
    let prefix = n.saturating_sub(obs);
    let mut raw = vec![0.0; prefix];
    for row in rows.iter().rev().take(obs) {
        for (j, r) in raw.iter_mut().enumerate() {
            if let Some(v) = row.get(j) {
                *r += v;
            }
        }
    }
    let half = pool_kernel / 2;
    let mut out = vec![0.0; n];
    for (j, o) in out.iter_mut().enumerate().take(prefix) {
        let lo = j.saturating_sub(half);
        let hi = (j + half).min(prefix - 1);
        *o = raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
    }
    out
}

/// Per-candidate inputs to [`score_hybrid`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HybridComponents {
    pub sink: Vec<f64>,
    pub recency: Vec<f64>,
    pub acc: Vec<f64>,
    pub window: Vec<f64>,
}

fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// `λ_sink·s + λ_recent·r + λ_acc·a + λ_win·w`, each component min-max
/// normalized to `[0, 1]` first (constant components become 0).
pub fn score_hybrid(components: &HybridComponents, weights: &HybridWeights) -> Result<Vec<f64>> {
    weights.validate()?;
    let n = components.sink.len();
    let c = [&components.sink, &components.recency, &components.acc, &components.window];
    if c.iter().any(|v| v.len() != n) {
        return Err(Error::Shape("hybrid components differ in length".into()));
    }
    let normed: Vec<Vec<f64>> = c.iter().map(|v| min_max(v)).collect();
    let l = weights.lambdas();
    Ok((0..n).map(|i| (0..4).map(|k| l[k] * normed[k][i]).sum()).collect())
}

/// Outcome of evicting one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEviction {
    pub kept_indices: Vec<usize>,
    pub evicted_count: usize,
    pub budget: usize,
    pub eviction_ratio: f64,
}

impl LayerEviction {
    pub(crate) fn new(kept_indices: Vec<usize>, before: usize, budget: usize) -> Self {
        let evicted_count = before - kept_indices.len();
        let eviction_ratio = if before == 0 { 0.0 } else { evicted_count as f64 / before as f64 };
        Self { kept_indices, evicted_count, budget, eviction_ratio }
    }

    pub fn kept(&self) -> usize {
        self.kept_indices.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvictionReport {
    pub layers: Vec<LayerEviction>,
}

impl EvictionReport {
    /// Evicted over pre-eviction entries across all layers, as an exact ratio.
    pub fn eviction_fraction(&self) -> Result<Ratio<u64>> {
        let evicted: u64 = self.layers.iter().map(|l| l.evicted_count as u64).sum();
        let total: u64 = self.layers.iter().map(|l| (l.evicted_count + l.kept()) as u64).sum();
        if total == 0 {
            return Err(Error::InvalidInput("eviction ratio of an empty cache is undefined".into()));
        }
        Ok(Ratio::new(evicted, total))
    }

    pub fn eviction_ratio(&self) -> Result<f64> {
        let r = self.eviction_fraction()?;
        Ok(*r.numer() as f64 / *r.denom() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kv::KvCache;

    fn cache_with_rows(rows: &[Vec<f64>]) -> KvCache {
        let mut c = KvCache::score_only(1);
        for (p, r) in rows.iter().enumerate() {
            c.append(0, &[], &[], p, Some(r)).unwrap();
        }
        c
    }

    fn plain_cache(n: usize) -> KvCache {
        let mut c = KvCache::score_only(1);
        for p in 0..n {
            c.append(0, &[], &[], p, None).unwrap();
        }
        c
    }

    fn example_rows() -> Vec<Vec<f64>> {
        vec![vec![1.0], vec![0.5, 0.5], vec![0.2, 0.3, 0.5]]
    }

    #[test]
    fn attention_sink_keeps_sinks_and_window() {
        let mut c = plain_cache(12);
        c.evict(&EvictionPolicy::AttentionSink { sinks: 4, window: 4 }, 8).unwrap();
        assert_eq!(c.layer(0).positions(), &[0, 1, 2, 3, 8, 9, 10, 11]);
    }

    #[test]
    fn heavy_hitter_keeps_top_accumulated() {
        let mut c = cache_with_rows(&example_rows());
        c.evict(&EvictionPolicy::HeavyHitter { recent: 1 }, 2).unwrap();
        assert_eq!(c.layer(0).positions(), &[0, 2]);
    }

    #[test]
    fn obs_window_ranks_last_row() {
        let mut c = cache_with_rows(&example_rows());
        c.evict(&EvictionPolicy::ObsWindow { obs: 1, pool_kernel: 1 }, 2).unwrap();
        assert_eq!(c.layer(0).positions(), &[1, 2]);
    }

    #[test]
    fn budget_below_floor_is_config_error() {
        let mut c = plain_cache(12);
        let err = c.evict(&EvictionPolicy::AttentionSink { sinks: 4, window: 4 }, 7);
        assert!(matches!(err, Err(Error::Config(_))));
        assert_eq!(c.layer(0).len(), 12);
    }

    #[test]
    fn hybrid_tie_prefers_recent() {
        let w = HybridWeights {
            lambda_sink: 0.0,
            lambda_recent: 0.0,
            lambda_acc: 0.5,
            lambda_win: 0.5,
            ..Default::default()
        };
        let comps = HybridComponents {
            sink: vec![0.0, 0.0],
            recency: vec![0.0, 1.0],
            acc: vec![1.0, 0.0],
            window: vec![0.0, 1.0],
        };
        let s = score_hybrid(&comps, &w).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
        assert_eq!(fill_budget(&[false, false], &s, 1), vec![1]);
    }

    #[test]
    fn hybrid_rejects_bad_input() {
        let zero = HybridWeights {
            lambda_sink: 0.0,
            lambda_recent: 0.0,
            lambda_acc: 0.0,
            lambda_win: 0.0,
            ..Default::default()
        };
        assert!(score_hybrid(&HybridComponents::default(), &zero).is_err());
        let comps = HybridComponents { sink: vec![0.0], ..Default::default() };
        assert!(score_hybrid(&comps, &HybridWeights::default()).is_err());
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(EvictionPolicy::ObsWindow { obs: 2, pool_kernel: 4 }.validate().is_err());
    }

    #[test]
    fn ratio_arithmetic() {
        let mut c = plain_cache(12);
        let r = c.evict(&EvictionPolicy::HeavyHitter { recent: 1 }, 8).unwrap();
        assert!((r.eviction_ratio().unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let mut c = plain_cache(4);
        let r = c.evict(&EvictionPolicy::HeavyHitter { recent: 1 }, 8).unwrap();
        assert_eq!(r.eviction_ratio().unwrap(), 0.0);
        let mut empty = KvCache::score_only(2);
        let r = empty.evict(&EvictionPolicy::HeavyHitter { recent: 1 }, 8).unwrap();
        assert!(r.eviction_ratio().is_err());
    }

    #[test]
    fn random_keeps_newest_and_is_seeded() {
        let p = EvictionPolicy::Random { seed: 7 };
        let mut a = plain_cache(20);
        let mut b = plain_cache(20);
        a.evict(&p, 5).unwrap();
        b.evict(&p, 5).unwrap();
        assert_eq!(a.layer(0).positions(), b.layer(0).positions());
        assert_eq!(a.layer(0).positions().last(), Some(&19));
        assert_eq!(a.layer(0).len(), 5);
    }
}
