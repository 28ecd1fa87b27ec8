//! Seeded toy transformer used as the substrate for every experiment.

mod config;
mod forward;
pub mod io;
mod model;
pub mod pixel_shuffle;
pub mod rope;

pub use config::ModelConfig;
pub use forward::{greedy_decode, AttnCapture, ForwardOptions, ForwardOutput, LayerAttention, Token};
pub use model::{LayerSlot, LayerWeights, SlotId, SlotRef, TinyLM, Weight, INIT_STD};
