//! Array-indexing probe for chat-completion models.
//!
//! Each trial shows the model a random array over a four-symbol alphabet and
//! asks for the value at one index. Accuracy is aggregated per array length;
//! a model that ignores position scores about 0.25.

mod responder;
mod runner;
mod score;
mod task;

pub use responder::{
    ConstantResponder, HttpResponder, PerfectResponder, RandomResponder, Responder, ResponderError, TrialContext,
};
pub use runner::{run_trials, RunOptions};
pub use score::{score, score_lengths, LengthScore};
pub use task::{build_prompt, parse_answer, plan_trials, IndexingTaskSpec, IndexingTrial, PlannedTrial};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// SplitMix64 of `a + (b + 1) * golden`; a pure mix used for every derived seed.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_add(b.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
