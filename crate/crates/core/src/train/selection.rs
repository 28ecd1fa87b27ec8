use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub id: String,
    pub n_rollouts: u32,
    pub n_correct: u32,
}

/// Which count the difficulty score reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyScore {
    /// Score is the number of correct rollouts.
    #[default]
    Correct,
    /// Score is the number of incorrect rollouts.
    Incorrect,
}

pub const DEFAULT_ROLLOUTS: u32 = 8;
pub const DEFAULT_WINDOW: (u32, u32) = (1, 4);

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Selection {
    pub selected: Vec<RolloutRecord>,
    pub excluded: Vec<RolloutRecord>,
}

/// Keeps records whose score lies in `[lo, hi]`; the rest are excluded.
pub fn select_by_difficulty(records: &[RolloutRecord], lo: u32, hi: u32, score: DifficultyScore) -> Result<Selection> {
    if lo > hi {
        return Err(Error::InvalidInput(format!("bad difficulty window [{lo}, {hi}]")));
    }
    let mut out = Selection::default();
    for r in records {
        if r.n_rollouts == 0 || r.n_correct > r.n_rollouts {
            return Err(Error::InvalidInput(format!("record `{}` has {}/{} correct", r.id, r.n_correct, r.n_rollouts)));
        }
        if hi > r.n_rollouts {
            return Err(Error::InvalidInput(format!("window [{lo}, {hi}] exceeds {} rollouts", r.n_rollouts)));
        }
        let s = match score {
            DifficultyScore::Correct => r.n_correct,
            DifficultyScore::Incorrect => r.n_rollouts - r.n_correct,
        };
        if (lo..=hi).contains(&s) {
            out.selected.push(r.clone());
        } else {
            out.excluded.push(r.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSim {
    pub sim_chosen_rejected: f64,
    pub sim_rejected_gt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscardReason {
    InsufficientContrast,
    RejectedTooCorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDecision {
    Keep,
    Discard(DiscardReason),
}

pub const DEFAULT_CONTRAST_MAX: f64 = 0.9;
pub const DEFAULT_GT_MAX: f64 = 0.8;

/// Drops preference pairs whose chosen and rejected answers are too alike, or
/// whose rejected answer is too close to the ground truth.
pub fn mpo_pair_filter(sim: &PairSim, contrast_max: f64, gt_max: f64) -> Result<PairDecision> {
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    if ![sim.sim_chosen_rejected, sim.sim_rejected_gt, contrast_max, gt_max].into_iter().all(unit) {
        return Err(Error::InvalidInput("similarities and thresholds must lie in [0, 1]".into()));
    }
    Ok(if sim.sim_chosen_rejected > contrast_max {
        PairDecision::Discard(DiscardReason::InsufficientContrast)
    } else if sim.sim_rejected_gt > gt_max {
        PairDecision::Discard(DiscardReason::RejectedTooCorrect)
    } else {
        PairDecision::Keep
    })
}
