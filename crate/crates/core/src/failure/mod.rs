//! Failure modes of RoPE attention scores: analytic probabilities, exact
//! enumerations and Monte-Carlo estimates.
//!
//! | mode | what fails |
//! |------|------------|
//! | position inversion | a far key outscores a near one |
//! | position aliasing | two distances round to the same score |
//! | token inversion | two keys swap order relative to a baseline distance |
//! | token aliasing | two keys round to the same score at one distance |
//! | attention invariance | swapping two keys leaves every rounded score unchanged |

mod aliasing;
mod inversion;
mod run;
mod sweep;
mod token;

use serde::{Deserialize, Serialize};

use crate::error::ProbeError;
use crate::precision::DTypeFormat;
use crate::rope::{RopeConfig, ThresholdMode};

pub use aliasing::{
    count_attention_invariance_pairs, count_pos_aliasing_pairs, enumerate_attention_invariance, enumerate_pos_aliasing,
    expected_aliasing_pairs, pos_aliasing_any_prob, pos_aliasing_prob_analytic, AmplitudeProfile,
};
pub use inversion::{
    count_position_inversions, pos_inversion_empirical, pos_inversion_lower_bound, pos_inversion_monte_carlo,
    pos_inversion_prob_analytic, smallest_context_for_inversion,
};
pub use run::{run_failure, FailureRequest};
pub use sweep::{sweep, SmallestContext, SweepCell, SweepGrid, SweepOutput, SweepRow};
pub use token::{
    enumerate_token_aliasing, prime_difference_spectrum, token_aliasing_prob_analytic, token_inversion_empirical,
    token_inversion_prime_fraction, token_inversion_prime_prob, PositionSet, SigmaVariant,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureMode {
    #[serde(rename = "pos-inv")]
    PositionInversion,
    #[serde(rename = "pos-alias")]
    PositionAliasing,
    #[serde(rename = "tok-inv")]
    TokenInversion,
    #[serde(rename = "tok-alias")]
    TokenAliasing,
    #[serde(rename = "invariance")]
    AttentionInvariance,
}

impl FailureMode {
    pub const ALL: [FailureMode; 5] = [
        FailureMode::PositionInversion,
        FailureMode::PositionAliasing,
        FailureMode::TokenInversion,
        FailureMode::TokenAliasing,
        FailureMode::AttentionInvariance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureMode::PositionInversion => "pos-inv",
            FailureMode::PositionAliasing => "pos-alias",
            FailureMode::TokenInversion => "tok-inv",
            FailureMode::TokenAliasing => "tok-alias",
            FailureMode::AttentionInvariance => "invariance",
        }
    }

    /// Modes comparing two keys need a second spectrum.
    pub fn needs_second_key(self) -> bool {
        matches!(self, FailureMode::TokenAliasing | FailureMode::AttentionInvariance)
    }
}

impl std::fmt::Display for FailureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FailureMode {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self, ProbeError> {
        FailureMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ProbeError::input(format!("unknown failure mode `{s}`")))
    }
}

/// Monte-Carlo estimate with a 95% normal-approximation half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub half_width: f64,
}

impl McEstimate {
    pub(crate) fn from_hits(hits: u64, samples: u64) -> Self {
        let n = samples as f64;
        let p = hits as f64 / n;
        McEstimate { estimate: p, half_width: 1.959963984540054 * (p * (1.0 - p) / n).sqrt() }
    }

    pub fn contains(&self, x: f64) -> bool {
        (x - self.estimate).abs() <= self.half_width
    }
}

/// Mean and standard deviation of a binomial pair count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCount {
    pub mean: f64,
    pub std: f64,
}

/// Result of analysing one failure mode for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub mode: FailureMode,
    /// Context limit equals the analysed length `M`.
    pub config: RopeConfig,
    pub threshold_mode: Option<ThresholdMode>,
    pub dtype: Option<DTypeFormat>,
    pub analytic_prob: Option<f64>,
    /// Token inversion only: the probability with the alternative sigma.
    pub analytic_prob_alt: Option<f64>,
    /// Position inversion only: the spectrum-free lower bound.
    pub lower_bound: Option<f64>,
    /// Exact fraction from full enumeration.
    pub empirical_prob: Option<f64>,
    pub mc_estimate: Option<McEstimate>,
    pub count: Option<u64>,
    pub expected_count: Option<ExpectedCount>,
    pub samples: u64,
    pub seed: u64,
}

impl FailureReport {
    pub(crate) fn new(mode: FailureMode, config: RopeConfig) -> Self {
        FailureReport {
            mode,
            config,
            threshold_mode: None,
            dtype: None,
            analytic_prob: None,
            analytic_prob_alt: None,
            lower_bound: None,
            empirical_prob: None,
            mc_estimate: None,
            count: None,
            expected_count: None,
            samples: 0,
            seed: 0,
        }
    }
}

/// Unordered position pairs `(m1, m2)`, `m1 < m2`, sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairList {
    pub pairs: Vec<(u64, u64)>,
    pub total_pairs_scanned: u64,
}

pub(crate) fn pair_total(len: u64) -> u64 {
    len * len.saturating_sub(1) / 2
}
