//! Weight quantization, sparsity, bits-per-weight accounting and Top-1 overlap.

mod overlap;
pub mod pack;
mod plan;
mod sparse;
mod tensor;

pub use overlap::{top1_overlap, Predictor};
pub use plan::{assign_precision, model_bpw, plan_overlap, ptq_model, PrecisionPlan, SlotPlan};
pub use sparse::{sparsify, SparsitySpec};
pub use tensor::{
    dequantize, fake_quant, quantize, quantize_masked, Granularity, QuantSpec, QuantTensor, Scheme, BIT_MENU,
};
