//! Forward values of the training objectives, caption rewards, data selection
//! rules and the interleaved-document transform.

pub mod interleave;
mod losses;
mod rewards;
mod selection;

pub use interleave::{reposition_images, InterleavedDoc, Layout, Segment};
pub use losses::{
    entity_weighted_ce, generation_loss, log_sigmoid, mpo_joint_loss, mpo_preference_loss, mpo_quality_loss,
    quality_terms, reward_shift_update, JointLoss, MpoWeights, PrefSample,
};
pub use rewards::{entity_density_reward, key_info_reward, total_reward, CaptionStats, Lexicon};
pub use selection::{
    mpo_pair_filter, select_by_difficulty, DifficultyScore, DiscardReason, PairDecision, PairSim, RolloutRecord,
    DEFAULT_CONTRAST_MAX, DEFAULT_GT_MAX, DEFAULT_ROLLOUTS, DEFAULT_WINDOW,
};
