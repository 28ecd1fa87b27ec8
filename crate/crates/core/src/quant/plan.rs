//! Per-slot precision plans, post-training quantization of a model, and
//! greedy sensitivity-driven bit-width assignment.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::overlap::{top1_overlap, Predictor};
use super::sparse::{sparsify, SparsitySpec};
use super::tensor::{quantize_masked, ratio_f64, QuantSpec, BIT_MENU};
use crate::error::{Error, Result};
use crate::lm::{SlotId, TinyLM, Token, Weight};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPlan {
    pub spec: QuantSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<SparsitySpec>,
}

impl SlotPlan {
    /// Stored bits for a `rows × cols` weight under this plan.
    pub fn bit_count(&self, rows: usize, cols: usize) -> u64 {
        let n = rows * cols;
        let kept = self.sparsity.map_or(n, |s| s.kept(n));
        let mask = self.sparsity.map_or(0, |s| s.mask_bits(n));
        kept as u64 * self.spec.bits as u64 + self.spec.overhead_bits(rows, cols) + mask
    }
}

/// Quantization settings for every matrix slot of a model (norm scales stay
/// in float and are not part of the plan).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPlan {
    pub slots: BTreeMap<String, SlotPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpw_budget: Option<f64>,
}

impl PrecisionPlan {
    /// The same spec on every matrix slot of `model`.
    pub fn uniform(model: &TinyLM, spec: QuantSpec) -> Self {
        let slots =
            model.matrix_slots().into_iter().map(|id| (id.to_string(), SlotPlan { spec, sparsity: None })).collect();
        Self { slots, bpw_budget: None }
    }

    pub fn with_sparsity(mut self, sparsity: SparsitySpec) -> Self {
        for p in self.slots.values_mut() {
            p.sparsity = Some(sparsity);
        }
        self
    }

    /// Resolves the plan against `model`: every matrix slot exactly once, no
    /// unknown names.
    pub fn resolve(&self, model: &TinyLM) -> Result<Vec<(SlotId, &SlotPlan)>> {
        let slots = model.matrix_slots();
        for name in self.slots.keys() {
            let id: SlotId = name.parse()?;
            if !slots.contains(&id) {
                return Err(Error::InvalidInput(format!(
                    "plan names `{name}`, which is not a matrix slot of this model"
                )));
            }
        }
        slots
            .into_iter()
            .map(|id| {
                let plan = self
                    .slots
                    .get(&id.to_string())
                    .ok_or_else(|| Error::InvalidInput(format!("plan does not cover slot `{id}`")))?;
                plan.spec.validate()?;
                if let Some(s) = &plan.sparsity {
                    s.validate()?;
                }
                Ok((id, plan))
            })
            .collect()
    }

    /// Exact bits-per-weight the plan yields on `model`.
    pub fn bpw_ratio(&self, model: &TinyLM) -> Result<Ratio<u64>> {
        let mut bits = 0u64;
        let mut weights = 0u64;
        for (id, plan) in self.resolve(model)? {
            let (r, c) = model.weight(id).expect("resolved").matrix().shape();
            bits += plan.bit_count(r, c);
            weights += (r * c) as u64;
        }
        Ok(Ratio::new(bits, weights))
    }

    pub fn bpw(&self, model: &TinyLM) -> Result<f64> {
        Ok(ratio_f64(self.bpw_ratio(model)?))
    }

    /// Bit width per slot name.
    pub fn bit_map(&self) -> BTreeMap<String, u8> {
        self.slots.iter().map(|(k, v)| (k.clone(), v.spec.bits)).collect()
    }
}

fn quantize_slot(weight: &Weight, plan: &SlotPlan) -> Result<Weight> {
    let m = weight.matrix();
    let qt = match &plan.sparsity {
        Some(s) => {
            let (sparse, mask) = sparsify(m, s)?;
            quantize_masked(&sparse, &plan.spec, Some(mask), Some(*s))?
        }
        None => quantize_masked(m, &plan.spec, None, None)?,
    };
    Ok(Weight::quantized(qt.frozen()))
}

/// Post-training quantization: every matrix slot replaced per the plan with a
/// frozen encoding. The returned model dequantizes on use.
pub fn ptq_model(model: &TinyLM, plan: &PrecisionPlan) -> Result<TinyLM> {
    let resolved = plan.resolve(model)?;
    let mut out = model.clone();
    for (id, p) in resolved {
        out.set_weight(id, quantize_slot(model.weight(id).expect("resolved"), p)?)?;
    }
    Ok(out)
}

/// Stored bits per matrix weight of a model (dense slots count 32 bits).
pub fn model_bpw(model: &TinyLM) -> f64 {
    let (mut bits, mut n) = (0u64, 0u64);
    for id in model.matrix_slots() {
        let w = model.weight(id).expect("matrix slot");
        let len = w.matrix().len() as u64;
        bits += w.quant().map_or(32 * len, |q| q.bit_count());
        n += len;
    }
    ratio_f64(Ratio::new(bits, n))
}

fn lower(bits: u8) -> Option<u8> {
    let i = BIT_MENU.iter().position(|&b| b == bits)?;
    i.checked_sub(1).map(|j| BIT_MENU[j])
}

fn higher(bits: u8) -> Option<u8> {
    let i = BIT_MENU.iter().position(|&b| b == bits)?;
    BIT_MENU.get(i + 1).copied()
}

/// Reference argmax predictions of the float model, reused for every candidate.
struct Reference {
    preds: Vec<Vec<Token>>,
}

struct Search<'a> {
    model: TinyLM,
    ids: Vec<SlotId>,
    bits: Vec<u8>,
    shapes: Vec<(usize, usize)>,
    variants: Vec<BTreeMap<u8, Weight>>,
    template: QuantSpec,
    calib: &'a [Vec<Token>],
    reference: Reference,
    weights: u64,
}

impl Search<'_> {
    fn total_bits(&self) -> u64 {
        self.bits
            .iter()
            .zip(&self.shapes)
            .map(|(&b, &(r, c))| SlotPlan { spec: self.template.with_bits(b), sparsity: None }.bit_count(r, c))
            .sum()
    }

    fn bpw_with(&self, slot: usize, bits: u8) -> f64 {
        let (r, c) = self.shapes[slot];
        let cur = SlotPlan { spec: self.template.with_bits(self.bits[slot]), sparsity: None }.bit_count(r, c);
        let new = SlotPlan { spec: self.template.with_bits(bits), sparsity: None }.bit_count(r, c);
        ratio_f64(Ratio::new(self.total_bits() - cur + new, self.weights))
    }

    fn overlap(&self) -> Result<f64> {
        let mut agree = 0usize;
        let mut total = 0usize;
        for (seq, reference) in self.calib.iter().zip(&self.reference.preds) {
            let preds = self.model.predict(seq)?;
            agree += preds.iter().zip(reference).filter(|(a, b)| a == b).count();
            total += preds.len();
        }
        Ok(agree as f64 / total as f64)
    }

    fn set(&mut self, slot: usize, bits: u8) -> Result<()> {
        self.bits[slot] = bits;
        self.model.set_weight(self.ids[slot], self.variants[slot][&bits].clone())
    }

    /// Overlap after moving `slot` to `bits`, restoring the current state.
    fn trial(&mut self, slot: usize, bits: u8) -> Result<f64> {
        let old = self.bits[slot];
        self.set(slot, bits)?;
        let score = self.overlap();
        self.set(slot, old)?;
        score
    }

    /// Best (overlap, slot, bits) among moves produced by `step` that pass `ok`.
    fn best_move(
        &mut self,
        step: fn(u8) -> Option<u8>,
        ok: impl Fn(&Self, usize, u8) -> bool,
    ) -> Result<Option<(usize, u8)>> {
        let mut best: Option<(f64, usize, u8)> = None;
        for slot in 0..self.ids.len() {
            let Some(bits) = step(self.bits[slot]) else { continue };
            if !ok(self, slot, bits) {
                continue;
            }
            let score = self.trial(slot, bits)?;
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, slot, bits));
            }
        }
        Ok(best.map(|(_, s, b)| (s, b)))
    }
}

/// Greedy mixed-precision assignment under a bits-per-weight budget.
///
/// Starts with every matrix slot at 8 bits and repeatedly lowers the slot
/// whose demotion costs the least Top-1 overlap (vs. the float model on
/// `calibration`) until the budget holds. A final pass promotes slots while
/// the budget still allows, so no single-step promotion of the result fits.
/// `template` fixes scheme and granularity; only the bit width varies.
pub fn assign_precision(
    model: &TinyLM,
    calibration: &[Vec<Token>],
    bpw_budget: f64,
    template: QuantSpec,
) -> Result<PrecisionPlan> {
    if calibration.iter().all(|s| s.is_empty()) {
        return Err(Error::InvalidInput("calibration set has no scoreable positions".into()));
    }
    let floor = PrecisionPlan::uniform(model, template.with_bits(2)).bpw(model)?;
    if !(bpw_budget >= floor) {
        return Err(Error::Config(format!("budget {bpw_budget} is below the all-2-bit minimum {floor}")));
    }
    let ids = model.matrix_slots();
    let shapes: Vec<(usize, usize)> =
        ids.iter().map(|&id| model.weight(id).expect("matrix").matrix().shape()).collect();
    let mut variants = Vec::with_capacity(ids.len());
    for &id in &ids {
        let w = model.weight(id).expect("matrix");
        let mut per_bits = BTreeMap::new();
        for &b in &BIT_MENU {
            per_bits.insert(b, quantize_slot(w, &SlotPlan { spec: template.with_bits(b), sparsity: None })?);
        }
        variants.push(per_bits);
    }
    let calib: Vec<Vec<Token>> = calibration.iter().filter(|s| !s.is_empty()).cloned().collect();
    let reference = Reference { preds: calib.iter().map(|s| model.predict(s)).collect::<Result<_>>()? };
    let weights = shapes.iter().map(|&(r, c)| (r * c) as u64).sum();
    let mut search = Search {
        model: model.clone(),
        bits: vec![8; ids.len()],
        ids,
        shapes,
        variants,
        template,
        calib: &calib,
        reference,
        weights,
    };
    for slot in 0..search.ids.len() {
        search.set(slot, 8)?;
    }
    let bpw = |s: &Search<'_>| ratio_f64(Ratio::new(s.total_bits(), s.weights));
    while bpw(&search) > bpw_budget {
        let (slot, bits) = search.best_move(lower, |_, _, _| true)?.expect("budget above the all-2-bit floor");
        search.set(slot, bits)?;
    }
    while let Some((slot, bits)) = search.best_move(higher, |s, slot, bits| s.bpw_with(slot, bits) <= bpw_budget)? {
        search.set(slot, bits)?;
    }
    let slots = search
        .ids
        .iter()
        .zip(&search.bits)
        .map(|(id, &b)| (id.to_string(), SlotPlan { spec: template.with_bits(b), sparsity: None }))
        .collect();
    Ok(PrecisionPlan { slots, bpw_budget: Some(bpw_budget) })
}

/// Overlap of `candidate` against `reference` on `sequences` (teacher forced).
pub fn plan_overlap(reference: &TinyLM, plan: &PrecisionPlan, sequences: &[Vec<Token>]) -> Result<f64> {
    let q = ptq_model(reference, plan)?;
    top1_overlap(reference, &q, sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;
    use crate::quant::{Granularity, Scheme};

    fn tiny() -> TinyLM {
        TinyLM::init(ModelConfig { ffn_mult: 2, ..ModelConfig::new(32, 16, 1, 2, 1) }, 11).unwrap()
    }

    fn per_row(bits: u8) -> QuantSpec {
        QuantSpec::new(bits, Scheme::Symmetric, Granularity::PerRow)
    }

    #[test]
    fn plan_bits_match_quantized_model() {
        let m = tiny();
        let plan = PrecisionPlan::uniform(&m, per_row(4)).with_sparsity(SparsitySpec::Structured { n: 2, m: 4 });
        let q = ptq_model(&m, &plan).unwrap();
        assert_eq!(plan.bpw(&m).unwrap(), model_bpw(&q));
    }

    #[test]
    fn missing_or_unknown_slot_rejected() {
        let m = tiny();
        let mut plan = PrecisionPlan::uniform(&m, per_row(8));
        plan.slots.remove("layers.0.wq");
        assert!(ptq_model(&m, &plan).is_err());
        let mut plan = PrecisionPlan::uniform(&m, per_row(8));
        plan.slots.insert("layers.7.wq".into(), SlotPlan { spec: per_row(8), sparsity: None });
        assert!(ptq_model(&m, &plan).is_err());
    }

    #[test]
    fn ptq_is_deterministic() {
        let m = tiny();
        let plan = PrecisionPlan::uniform(&m, per_row(3));
        assert_eq!(ptq_model(&m, &plan).unwrap().weights_hash(), ptq_model(&m, &plan).unwrap().weights_hash());
    }

    #[test]
    fn extreme_budgets() {
        let m = tiny();
        let calib = vec![vec![1, 2, 3, 4, 5, 6]];
        let hi = PrecisionPlan::uniform(&m, per_row(8)).bpw(&m).unwrap();
        let lo = PrecisionPlan::uniform(&m, per_row(2)).bpw(&m).unwrap();
        let p = assign_precision(&m, &calib, hi, per_row(8)).unwrap();
        assert!(p.bit_map().values().all(|&b| b == 8));
        let p = assign_precision(&m, &calib, lo, per_row(8)).unwrap();
        assert!(p.bit_map().values().all(|&b| b == 2));
        assert!(assign_precision(&m, &calib, lo - 0.01, per_row(8)).is_err());
    }
}
