//! Recurrent compression policy and the REINFORCE search loop.

mod compress;
mod policy;
mod reinforce;

pub use compress::{
    compress, compress_with_policy, history_csv, sample_episode, teacher_states, train_val, CompressConfig,
    CompressResult, Sampled, HISTORY_HEADER,
};
pub use policy::{policy_forward, GruCell, Policy};
pub use reinforce::{baseline_update, reinforce_update, reward, Baseline, Episode, RewardParams, EXPONENT_CLAMP};
