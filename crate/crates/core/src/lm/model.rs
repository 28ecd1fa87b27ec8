use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::quant::QuantTensor;
use crate::tensor::{keyed_rng, Matrix};

/// Standard deviation used for every initialized weight.
pub const INIT_STD: f32 = 0.02;

/// Per-layer parameter slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerSlot {
    AttnNorm,
    Wq,
    Wk,
    Wv,
    Wo,
    MlpNorm,
    WGate,
    WUp,
    WDown,
}

impl LayerSlot {
    pub const ALL: [LayerSlot; 9] = [
        LayerSlot::AttnNorm,
        LayerSlot::Wq,
        LayerSlot::Wk,
        LayerSlot::Wv,
        LayerSlot::Wo,
        LayerSlot::MlpNorm,
        LayerSlot::WGate,
        LayerSlot::WUp,
        LayerSlot::WDown,
    ];

    /// The seven projection matrices, in the order used by [`LayerWeights::linear`].
    pub const LINEAR: [LayerSlot; 7] = [
        LayerSlot::Wq,
        LayerSlot::Wk,
        LayerSlot::Wv,
        LayerSlot::Wo,
        LayerSlot::WGate,
        LayerSlot::WUp,
        LayerSlot::WDown,
    ];

    fn as_str(self) -> &'static str {
        match self {
            LayerSlot::AttnNorm => "attn_norm",
            LayerSlot::Wq => "wq",
            LayerSlot::Wk => "wk",
            LayerSlot::Wv => "wv",
            LayerSlot::Wo => "wo",
            LayerSlot::MlpNorm => "mlp_norm",
            LayerSlot::WGate => "w_gate",
            LayerSlot::WUp => "w_up",
            LayerSlot::WDown => "w_down",
        }
    }

    fn linear_index(self) -> Option<usize> {
        Self::LINEAR.iter().position(|&s| s == self)
    }
}

/// Name of a parameter slot: `tok_embed`, `lm_head`, `final_norm` or
/// `layers.{i}.{attn_norm|wq|wk|wv|wo|mlp_norm|w_gate|w_up|w_down}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotId {
    TokEmbed,
    LmHead,
    FinalNorm,
    Layer(usize, LayerSlot),
}

impl SlotId {
    pub fn is_norm(self) -> bool {
        matches!(self, SlotId::FinalNorm | SlotId::Layer(_, LayerSlot::AttnNorm) | SlotId::Layer(_, LayerSlot::MlpNorm))
    }

    /// Slots that can carry a LoRA delta (projections applied as `W·x`).
    pub fn is_adaptable(self) -> bool {
        match self {
            SlotId::LmHead => true,
            SlotId::Layer(_, s) => s.linear_index().is_some(),
            _ => false,
        }
    }
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotId::TokEmbed => f.write_str("tok_embed"),
            SlotId::LmHead => f.write_str("lm_head"),
            SlotId::FinalNorm => f.write_str("final_norm"),
            SlotId::Layer(i, s) => write!(f, "layers.{i}.{}", s.as_str()),
        }
    }
}

impl FromStr for SlotId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tok_embed" => return Ok(SlotId::TokEmbed),
            "lm_head" => return Ok(SlotId::LmHead),
            "final_norm" => return Ok(SlotId::FinalNorm),
            _ => {}
        }
        let unknown = || Error::InvalidInput(format!("unknown parameter slot `{s}`"));
        let rest = s.strip_prefix("layers.").ok_or_else(unknown)?;
        let (idx, name) = rest.split_once('.').ok_or_else(unknown)?;
        let idx: usize = idx.parse().map_err(|_| unknown())?;
        let slot = LayerSlot::ALL.iter().find(|l| l.as_str() == name).ok_or_else(unknown)?;
        Ok(SlotId::Layer(idx, *slot))
    }
}

impl serde::Serialize for SlotId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for SlotId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A stored weight: dense float, or quantized codes with their dequantized view.
#[derive(Debug, Clone)]
pub enum Weight {
    Dense(Matrix),
    Quantized { qt: QuantTensor, dense: Matrix },
}

impl Weight {
    pub fn quantized(qt: QuantTensor) -> Self {
        let dense = qt.dequantize();
        Weight::Quantized { qt, dense }
    }

    /// The float matrix used by the forward pass.
    pub fn matrix(&self) -> &Matrix {
        match self {
            Weight::Dense(m) => m,
            Weight::Quantized { dense, .. } => dense,
        }
    }

    pub fn quant(&self) -> Option<&QuantTensor> {
        match self {
            Weight::Quantized { qt, .. } => Some(qt),
            Weight::Dense(_) => None,
        }
    }

    fn hash_into(&self, h: &mut Sha256) {
        match self {
            Weight::Dense(m) => {
                h.update([0u8]);
                h.update(m.to_le_bytes());
            }
            Weight::Quantized { qt, .. } => {
                h.update([1u8]);
                qt.hash_into(h);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Weight,
    pub wk: Weight,
    pub wv: Weight,
    pub wo: Weight,
    pub mlp_norm: Vec<f32>,
    pub w_gate: Weight,
    pub w_up: Weight,
    pub w_down: Weight,
}

impl LayerWeights {
    pub fn linear(&self, slot: LayerSlot) -> Option<&Weight> {
        Some(match slot {
            LayerSlot::Wq => &self.wq,
            LayerSlot::Wk => &self.wk,
            LayerSlot::Wv => &self.wv,
            LayerSlot::Wo => &self.wo,
            LayerSlot::WGate => &self.w_gate,
            LayerSlot::WUp => &self.w_up,
            LayerSlot::WDown => &self.w_down,
            LayerSlot::AttnNorm | LayerSlot::MlpNorm => return None,
        })
    }

    fn linear_mut(&mut self, slot: LayerSlot) -> Option<&mut Weight> {
        Some(match slot {
            LayerSlot::Wq => &mut self.wq,
            LayerSlot::Wk => &mut self.wk,
            LayerSlot::Wv => &mut self.wv,
            LayerSlot::Wo => &mut self.wo,
            LayerSlot::WGate => &mut self.w_gate,
            LayerSlot::WUp => &mut self.w_up,
            LayerSlot::WDown => &mut self.w_down,
            LayerSlot::AttnNorm | LayerSlot::MlpNorm => return None,
        })
    }
}

/// Seeded decoder-only transformer: GQA attention with rotary positions,
/// SiLU-gated MLP, RMS norms and (by default) tied input/output embeddings.
///
/// Weights are immutable once built; forward passes only mutate the cache the
/// caller hands in. The only interior state is a forward-call counter used to
/// instrument speculative decoding.
#[derive(Debug)]
pub struct TinyLM {
    pub(crate) config: ModelConfig,
    pub(crate) tok_embed: Weight,
    pub(crate) lm_head: Option<Weight>,
    pub(crate) final_norm: Vec<f32>,
    pub(crate) layers: Vec<LayerWeights>,
    pub(crate) inv_freq: Vec<f64>,
    forward_calls: AtomicU64,
}

impl Clone for TinyLM {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            tok_embed: self.tok_embed.clone(),
            lm_head: self.lm_head.clone(),
            final_norm: self.final_norm.clone(),
            layers: self.layers.clone(),
            inv_freq: self.inv_freq.clone(),
            forward_calls: AtomicU64::new(0),
        }
    }
}

/// A named parameter together with its storage.
pub enum SlotRef<'a> {
    Norm(&'a [f32]),
    Weight(&'a Weight),
}

impl TinyLM {
    /// Builds a model with every weight drawn from `Normal(0, 0.02)` on a PRNG
    /// stream keyed by `(seed, slot name)`; norm scales start at 1.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dense = |slot: SlotId, rows: usize, cols: usize| {
            let mut rng = keyed_rng(seed, &slot.to_string());
            Weight::Dense(Matrix::randn(rows, cols, INIT_STD, &mut rng))
        };
        let d = config.d_model;
        let layers = (0..config.n_layers)
            .map(|i| LayerWeights {
                attn_norm: vec![1.0; d],
                wq: dense(SlotId::Layer(i, LayerSlot::Wq), config.q_dim(), d),
                wk: dense(SlotId::Layer(i, LayerSlot::Wk), config.kv_dim(), d),
                wv: dense(SlotId::Layer(i, LayerSlot::Wv), config.kv_dim(), d),
                wo: dense(SlotId::Layer(i, LayerSlot::Wo), d, config.q_dim()),
                mlp_norm: vec![1.0; d],
                w_gate: dense(SlotId::Layer(i, LayerSlot::WGate), config.ffn_dim(), d),
                w_up: dense(SlotId::Layer(i, LayerSlot::WUp), config.ffn_dim(), d),
                w_down: dense(SlotId::Layer(i, LayerSlot::WDown), d, config.ffn_dim()),
            })
            .collect();
        let tok_embed = dense(SlotId::TokEmbed, config.vocab_size, d);
        let lm_head = (!config.tie_embeddings).then(|| dense(SlotId::LmHead, config.vocab_size, d));
        Ok(Self::assemble(config, tok_embed, lm_head, vec![1.0; d], layers))
    }

    pub(crate) fn assemble(
        config: ModelConfig,
        tok_embed: Weight,
        lm_head: Option<Weight>,
        final_norm: Vec<f32>,
        layers: Vec<LayerWeights>,
    ) -> Self {
        let half = config.head_dim / 2;
        let inv_freq = (0..half).map(|i| config.rope_theta.powf(-2.0 * i as f64 / config.head_dim as f64)).collect();
        Self { config, tok_embed, lm_head, final_norm, layers, inv_freq, forward_calls: AtomicU64::new(0) }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn tok_embed(&self) -> &Weight {
        &self.tok_embed
    }

    /// Output projection rows (one per vocabulary entry). With tied embeddings
    /// this is the token-embedding table itself.
    pub fn output_weight(&self) -> &Weight {
        self.lm_head.as_ref().unwrap_or(&self.tok_embed)
    }

    pub fn final_norm(&self) -> &[f32] {
        &self.final_norm
    }

    /// Number of `forward` calls made on this instance.
    pub fn forward_count(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    pub fn reset_forward_count(&self) {
        self.forward_calls.store(0, Ordering::Relaxed);
    }

    pub(crate) fn count_forward(&self) {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
    }

    /// Every slot name this model defines, in canonical order.
    pub fn slot_ids(&self) -> Vec<SlotId> {
        let mut ids = vec![SlotId::TokEmbed];
        if self.lm_head.is_some() {
            ids.push(SlotId::LmHead);
        }
        ids.push(SlotId::FinalNorm);
        for i in 0..self.layers.len() {
            ids.extend(LayerSlot::ALL.iter().map(|&s| SlotId::Layer(i, s)));
        }
        ids
    }

    /// Slots holding 2-D weight matrices (everything except norm scales).
    pub fn matrix_slots(&self) -> Vec<SlotId> {
        self.slot_ids().into_iter().filter(|s| !s.is_norm()).collect()
    }

    pub fn slot(&self, id: SlotId) -> Option<SlotRef<'_>> {
        match id {
            SlotId::TokEmbed => Some(SlotRef::Weight(&self.tok_embed)),
            SlotId::LmHead => self.lm_head.as_ref().map(SlotRef::Weight),
            SlotId::FinalNorm => Some(SlotRef::Norm(&self.final_norm)),
            SlotId::Layer(i, s) => {
                let layer = self.layers.get(i)?;
                Some(match s {
                    LayerSlot::AttnNorm => SlotRef::Norm(&layer.attn_norm),
                    LayerSlot::MlpNorm => SlotRef::Norm(&layer.mlp_norm),
                    _ => SlotRef::Weight(layer.linear(s)?),
                })
            }
        }
    }

    pub fn weight(&self, id: SlotId) -> Option<&Weight> {
        match self.slot(id)? {
            SlotRef::Weight(w) => Some(w),
            SlotRef::Norm(_) => None,
        }
    }

    /// Replaces a matrix slot, keeping its shape.
    pub fn set_weight(&mut self, id: SlotId, weight: Weight) -> Result<()> {
        let current = self.weight(id).ok_or_else(|| Error::InvalidInput(format!("no matrix slot `{id}`")))?;
        if current.matrix().shape() != weight.matrix().shape() {
            return Err(Error::Shape(format!(
                "slot `{id}` is {:?}, replacement is {:?}",
                current.matrix().shape(),
                weight.matrix().shape()
            )));
        }
        let target = match id {
            SlotId::TokEmbed => &mut self.tok_embed,
            SlotId::LmHead => self.lm_head.as_mut().expect("checked above"),
            SlotId::Layer(i, s) => self.layers[i].linear_mut(s).expect("checked above"),
            SlotId::FinalNorm => unreachable!("norm slots have no weight"),
        };
        *target = weight;
        Ok(())
    }

    pub fn set_norm(&mut self, id: SlotId, scale: Vec<f32>) -> Result<()> {
        if scale.len() != self.config.d_model {
            return Err(Error::Shape(format!("norm `{id}` needs {} scales", self.config.d_model)));
        }
        let target = match id {
            SlotId::FinalNorm => &mut self.final_norm,
            SlotId::Layer(i, LayerSlot::AttnNorm) if i < self.layers.len() => &mut self.layers[i].attn_norm,
            SlotId::Layer(i, LayerSlot::MlpNorm) if i < self.layers.len() => &mut self.layers[i].mlp_norm,
            _ => return Err(Error::InvalidInput(format!("`{id}` is not a norm slot"))),
        };
        *target = scale;
        Ok(())
    }

    /// SHA-256 over every slot (name, then values; quantized slots hash their
    /// codes, scales, zero-points and mask).
    pub fn weights_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for id in self.slot_ids() {
            h.update(id.to_string().as_bytes());
            match self.slot(id).expect("listed slot exists") {
                SlotRef::Norm(v) => v.iter().for_each(|x| h.update(x.to_le_bytes())),
                SlotRef::Weight(w) => w.hash_into(&mut h),
            }
        }
        h.finalize().into()
    }

    /// Total number of scalar weights in matrix slots.
    pub fn matrix_weight_count(&self) -> usize {
        self.matrix_slots().iter().map(|&s| self.weight(s).expect("matrix slot").matrix().len()).sum()
    }
}
