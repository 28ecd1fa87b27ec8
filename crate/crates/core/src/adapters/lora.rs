use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{SlotId, TinyLM, Weight, INIT_STD};
use crate::tensor::{dot, keyed_rng, Matrix};

/// Low-rank factors for one slot: `A` is `r × in`, `B` is `out × r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraPair {
    pub a: Matrix,
    pub b: Matrix,
}

impl LoraPair {
    /// `B·A` as an `out × in` matrix, accumulated in `f64`.
    pub fn product(&self) -> Vec<f64> {
        let (out, inp, r) = (self.b.rows, self.a.cols, self.a.rows);
        let mut prod = vec![0.0f64; out * inp];
        for i in 0..out {
            for k in 0..r {
                let bik = self.b.get(i, k) as f64;
                if bik == 0.0 {
                    continue;
                }
                for (p, &a) in prod[i * inp..(i + 1) * inp].iter_mut().zip(self.a.row(k)) {
                    *p += bik * a as f64;
                }
            }
        }
        prod
    }
}

/// A named set of LoRA pairs sharing one rank and scaling factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub name: String,
    pub rank: usize,
    pub alpha: f64,
    slots: BTreeMap<SlotId, LoraPair>,
}

impl LoraAdapter {
    /// Builds an adapter from explicit pairs, checking that they share `rank`.
    pub fn from_pairs(
        name: impl Into<String>,
        rank: usize,
        alpha: f64,
        slots: BTreeMap<SlotId, LoraPair>,
    ) -> Result<Self> {
        if rank == 0 || !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("adapter needs rank ≥ 1 and alpha > 0 (got {rank}, {alpha})")));
        }
        for (id, p) in &slots {
            if p.a.rows != rank || p.b.cols != rank {
                return Err(Error::Shape(format!("pair for `{id}` is not rank {rank}")));
            }
        }
        Ok(Self { name: name.into(), rank, alpha, slots })
    }

    /// `alpha / r`.
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&SlotId, &LoraPair)> {
        self.slots.iter()
    }

    pub fn pair(&self, slot: SlotId) -> Option<&LoraPair> {
        self.slots.get(&slot)
    }

    pub fn pair_mut(&mut self, slot: SlotId) -> Option<&mut LoraPair> {
        self.slots.get_mut(&slot)
    }

    pub fn target_slots(&self) -> Vec<SlotId> {
        self.slots.keys().copied().collect()
    }

    /// Checks every pair against the matching slot of `model`.
    pub fn check_fits(&self, model: &TinyLM) -> Result<()> {
        for (id, p) in &self.slots {
            let w = model
                .weight(*id)
                .filter(|_| id.is_adaptable())
                .ok_or_else(|| Error::InvalidInput(format!("adapter `{}` targets unknown slot `{id}`", self.name)))?;
            let (out, inp) = w.matrix().shape();
            if p.a.cols != inp || p.b.rows != out {
                return Err(Error::Shape(format!("pair for `{id}` does not fit {out}x{inp}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: LoraAdapter = serde_json::from_str(s)?;
        Self::from_pairs(a.name, a.rank, a.alpha, a.slots)
    }
}

/// Fresh adapter over `targets`: `A ~ Normal(0, 0.02)` on a stream keyed by
/// `(seed, slot)`, `B = 0`, so it leaves the model's outputs unchanged.
pub fn create_adapter(
    model: &TinyLM,
    name: &str,
    targets: &[SlotId],
    rank: usize,
    alpha: f64,
    seed: u64,
) -> Result<LoraAdapter> {
    if targets.is_empty() {
        return Err(Error::InvalidInput("adapter needs at least one target slot".into()));
    }
    let mut slots = BTreeMap::new();
    for &id in targets {
        let w = model
            .weight(id)
            .filter(|_| id.is_adaptable())
            .ok_or_else(|| Error::InvalidInput(format!("unknown or non-adaptable slot `{id}`")))?;
        let (out, inp) = w.matrix().shape();
        if rank > out.min(inp) {
            return Err(Error::InvalidInput(format!("rank {rank} exceeds min({out}, {inp}) for `{id}`")));
        }
        let mut rng = keyed_rng(seed, &format!("lora.{id}"));
        slots.insert(id, LoraPair { a: Matrix::randn(rank, inp, INIT_STD, &mut rng), b: Matrix::zeros(out, rank) });
    }
    LoraAdapter::from_pairs(name, rank, alpha, slots)
}

/// `W + (alpha/r)·B·A` for the adapter's pair on `slot`. Entries whose delta
/// is exactly zero keep the base bits.
pub fn merge(base: &Weight, adapter: &LoraAdapter, slot: SlotId) -> Result<Matrix> {
    let pair = adapter
        .pair(slot)
        .ok_or_else(|| Error::InvalidInput(format!("adapter `{}` has no pair for `{slot}`", adapter.name)))?;
    let w = base.matrix();
    if pair.a.cols != w.cols || pair.b.rows != w.rows {
        return Err(Error::Shape(format!("pair for `{slot}` does not fit {}x{}", w.rows, w.cols)));
    }
    let scale = adapter.scale();
    let mut out = w.clone();
    for (o, d) in out.data.iter_mut().zip(pair.product()) {
        if d != 0.0 {
            *o = (*o as f64 + scale * d) as f32;
        }
    }
    Ok(out)
}

/// A dense copy of `model` with every adapter slot merged in.
pub fn merge_model(model: &TinyLM, adapter: &LoraAdapter) -> Result<TinyLM> {
    adapter.check_fits(model)?;
    let mut merged = model.clone();
    for id in adapter.target_slots() {
        let w = merge(model.weight(id).expect("checked"), adapter, id)?;
        merged.set_weight(id, Weight::Dense(w))?;
    }
    Ok(merged)
}

/// `(alpha/r)·B·(A·x)` for one pair, without forming `B·A`.
pub fn lora_delta(pair: &LoraPair, scale: f64, x: &[f32]) -> Vec<f64> {
    let ax = pair.a.matvec(x);
    (0..pair.b.rows).map(|r| scale * dot(pair.b.row(r), &ax)).collect()
}
