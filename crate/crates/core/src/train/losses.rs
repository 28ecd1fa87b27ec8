use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln σ(x)` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    -(x.max(0.0) - x + (-x.abs()).exp().ln_1p())
}

/// Sequence log-probabilities of a chosen and a rejected response under the
/// policy (`theta`) and the frozen reference (`ref`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefSample {
    pub lp_theta_c: f64,
    pub lp_ref_c: f64,
    pub lp_theta_r: f64,
    pub lp_ref_r: f64,
}

impl PrefSample {
    /// Builds a sample from its two log-ratios (reference log-probs at zero).
    pub fn from_ratios(chosen: f64, rejected: f64) -> Self {
        Self { lp_theta_c: chosen, lp_ref_c: 0.0, lp_theta_r: rejected, lp_ref_r: 0.0 }
    }

    pub fn chosen_ratio(&self) -> f64 {
        self.lp_theta_c - self.lp_ref_c
    }

    pub fn rejected_ratio(&self) -> f64 {
        self.lp_theta_r - self.lp_ref_r
    }

    fn check(&self) -> Result<()> {
        if [self.lp_theta_c, self.lp_ref_c, self.lp_theta_r, self.lp_ref_r].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("log-probabilities must be finite".into()))
        }
    }
}

fn batch_mean(batch: &[PrefSample], f: impl Fn(&PrefSample) -> f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty preference batch".into()));
    }
    let mut sum = 0.0;
    for s in batch {
        s.check()?;
        sum += f(s);
    }
    Ok(sum / batch.len() as f64)
}

/// Mean over samples of `−ln σ(β·(chosen_ratio − rejected_ratio))`.
pub fn mpo_preference_loss(batch: &[PrefSample], beta: f64) -> Result<f64> {
    batch_mean(batch, |s| -log_sigmoid(beta * (s.chosen_ratio() - s.rejected_ratio())))
}

/// Mean over samples of `−ln σ(β·chosen_ratio − δ) − ln σ(−(β·rejected_ratio − δ))`.
pub fn mpo_quality_loss(batch: &[PrefSample], beta: f64, delta: f64) -> Result<f64> {
    batch_mean(batch, |s| quality_terms(s, beta, delta).iter().sum())
}

/// The chosen and rejected terms of the quality loss for one sample.
pub fn quality_terms(s: &PrefSample, beta: f64, delta: f64) -> [f64; 2] {
    [-log_sigmoid(beta * s.chosen_ratio() - delta), -log_sigmoid(-(beta * s.rejected_ratio() - delta))]
}

/// Negative sum of per-token log-probabilities.
pub fn generation_loss(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::InvalidInput("generation loss needs at least one token".into()));
    }
    Ok(-token_logprobs.iter().sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpoWeights {
    pub w_p: f64,
    pub w_q: f64,
    pub w_g: f64,
    pub beta: f64,
    pub delta: f64,
}

impl Default for MpoWeights {
    fn default() -> Self {
        Self { w_p: 1.0, w_q: 1.0, w_g: 1.0, beta: 0.1, delta: 0.0 }
    }
}

impl MpoWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_p, self.w_q, self.w_g];
        if w.iter().any(|v| !(*v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("loss weights must be nonnegative with a positive sum".into()));
        }
        if !(self.beta > 0.0) || !self.delta.is_finite() {
            return Err(Error::Config("beta must be positive and delta finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLoss {
    pub total: f64,
    pub preference: f64,
    pub quality: f64,
    pub generation: f64,
}

/// `w_p·L_p + w_q·L_q + w_g·L_g` with each term reported.
pub fn mpo_joint_loss(batch: &[PrefSample], weights: &MpoWeights, token_logprobs: &[f64]) -> Result<JointLoss> {
    weights.validate()?;
    let preference = mpo_preference_loss(batch, weights.beta)?;
    let quality = mpo_quality_loss(batch, weights.beta, weights.delta)?;
    let generation = generation_loss(token_logprobs)?;
    Ok(JointLoss {
        total: weights.w_p * preference + weights.w_q * quality + weights.w_g * generation,
        preference,
        quality,
        generation,
    })
}

/// Exponential moving average `m·δ_prev + (1 − m)·reward`.
pub fn reward_shift_update(delta_prev: f64, new_reward: f64, momentum: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidInput(format!("momentum {momentum} outside [0, 1)")));
    }
    if !delta_prev.is_finite() || !new_reward.is_finite() {
        return Err(Error::InvalidInput("reward shift inputs must be finite".into()));
    }
    Ok(momentum * delta_prev + (1.0 - momentum) * new_reward)
}

/// `−(1/N)·Σ_i Σ_t α_{i,t}·logprob_{i,t}`; weights below 1 are rejected.
pub fn entity_weighted_ce(token_logprobs: &[Vec<f64>], alphas: &[Vec<f64>]) -> Result<f64> {
    if token_logprobs.is_empty() || token_logprobs.len() != alphas.len() {
        return Err(Error::InvalidInput("need one weight list per nonempty sequence batch".into()));
    }
    let mut sum = 0.0;
    for (lp, al) in token_logprobs.iter().zip(alphas) {
        if lp.len() != al.len() {
            return Err(Error::InvalidInput(format!("sequence has {} log-probs but {} weights", lp.len(), al.len())));
        }
        if let Some(a) = al.iter().find(|&&a| !(a >= 1.0)) {
            return Err(Error::InvalidInput(format!("entity weight {a} below 1")));
        }
        // One running sum in token order, so α ≡ 1 reproduces the generation loss bit for bit.
        for (l, a) in lp.iter().zip(al) {
            sum += a * l;
        }
    }
    Ok(-sum / token_logprobs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sigmoid_is_stable() {
        assert_eq!(log_sigmoid(0.0), -std::f64::consts::LN_2);
        assert!(log_sigmoid(1e4).abs() < 1e-300);
        assert!((log_sigmoid(-1e4) + 1e4).abs() < 1e-9);
    }

    #[test]
    fn reward_shift() {
        assert_eq!(reward_shift_update(3.0, 2.0, 0.0).unwrap(), 2.0);
        assert!((reward_shift_update(1.0, 0.0, 0.9).unwrap() - 0.9).abs() < 1e-15);
        assert!(reward_shift_update(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn entity_ce_arithmetic() {
        assert_eq!(entity_weighted_ce(&[vec![-1.0, -1.0]], &[vec![2.0, 1.0]]).unwrap(), 3.0);
        assert!(entity_weighted_ce(&[vec![-1.0]], &[vec![0.5]]).is_err());
        assert!(entity_weighted_ce(&[vec![-1.0]], &[vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn generation_loss_cases() {
        assert_eq!(generation_loss(&[-0.5, -1.5]).unwrap(), 2.0);
        assert_eq!(generation_loss(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(generation_loss(&[]).is_err());
    }
}
