//! Desk-scale laboratory for mobile LLM acceleration techniques.
//!
//! Everything runs on [`lm::TinyLM`], a seeded decoder-only transformer small
//! enough to verify exhaustively:
//!
//! - [`kv`]: budgeted KV cache with attention-sink, heavy-hitter,
//!   observation-window, hybrid and random eviction policies.
//! - [`spec`]: lossless chain speculative decoding with block-efficiency stats.
//! - [`quant`]: 2/3/4/8-bit weight quantization, sparsity, bits-per-weight
//!   accounting, mixed-precision assignment and Top-1 overlap.
//! - [`adapters`]: 1+N LoRA registry over a frozen base and quantization-aware
//!   low-rank fitting on a frozen quantized linear map.
//! - [`train`]: preference/quality/generation losses, caption rewards,
//!   difficulty selection, pair filtering and image repositioning.
//! - [`metrics`]: ROUGE-1/2/L and speed/memory summaries.
//! - [`bench`]: experiment configs, synthetic corpora and report pipelines
//!   behind the `edgelab` CLI.

// Float checks are written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapters;
pub mod bench;
pub mod error;
pub mod kv;
pub mod lm;
pub mod metrics;
pub mod quant;
pub mod spec;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use lm::{ForwardOptions, ForwardOutput, ModelConfig, TinyLM};
