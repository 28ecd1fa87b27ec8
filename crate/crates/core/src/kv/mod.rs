//! Budgeted KV cache and eviction policies.

mod cache;
mod policy;
pub mod trace;

pub use cache::{cache_bytes, KvCache, LayerCache, DEFAULT_ROW_WINDOW};
pub use policy::{
    score_hybrid, window_scores, EvictionPolicy, EvictionReport, HybridComponents, HybridWeights, LayerEviction,
};
