//! 1+N LoRA adapters over a frozen base and quantization-aware low-rank fitting.

mod lora;
mod qalft;
mod registry;

pub use lora::{create_adapter, lora_delta, merge, merge_model, LoraAdapter, LoraPair};
pub use qalft::{planted_rank1, qalft_fit, relative_error, QalftConfig, QalftFit, QalftProblem};
pub use registry::{hex, AdapterRegistry, ManifestEntry, RegistryManifest};
