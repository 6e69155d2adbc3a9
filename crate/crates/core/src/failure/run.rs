use serde::{Deserialize, Serialize};

use super::aliasing::{count_attention_invariance_pairs, count_pos_aliasing_pairs};
use super::inversion::count_position_inversions;
use super::token::enumerate_token_aliasing;
use super::{
    expected_aliasing_pairs, pair_total, pos_aliasing_prob_analytic, pos_inversion_lower_bound,
    pos_inversion_monte_carlo, pos_inversion_prob_analytic, prime_difference_spectrum, token_aliasing_prob_analytic,
    token_inversion_empirical, token_inversion_prime_prob, AmplitudeProfile, FailureMode, FailureReport, SigmaVariant,
};
use crate::error::{ProbeError, Result};
use crate::precision::DTypeFormat;
use crate::rope::{series_unchecked, Spectrum, ThresholdMode};

/// Parameters of one failure analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRequest {
    pub mode: FailureMode,
    /// Context length `M`; positions `[0, M)` are analysed.
    pub context: u64,
    pub dtype: DTypeFormat,
    pub threshold_mode: ThresholdMode,
    pub seed: u64,
    /// Monte-Carlo pairs for position inversion; 0 skips the estimate.
    pub mc_samples: u64,
    /// Reference distance for token inversion.
    pub baseline: usize,
}

impl FailureRequest {
    /// BF16, theory threshold, seed 0, no Monte-Carlo, baseline distance 1.
    pub fn new(mode: FailureMode, context: u64) -> Self {
        FailureRequest {
            mode,
            context,
            dtype: DTypeFormat::bf16(),
            threshold_mode: ThresholdMode::Theory,
            seed: 0,
            mc_samples: 0,
            baseline: 1,
        }
    }
}

/// Runs every analysis available for `req.mode` on `key` (and `other`, the
/// second key, for two-key modes). Without `other`, token inversion compares
/// `key` against its prime token.
pub fn run_failure(req: &FailureRequest, key: &Spectrum, other: Option<&Spectrum>) -> Result<FailureReport> {
    let m = req.context;
    if m < 2 {
        return Err(ProbeError::range("failure analysis needs M >= 2"));
    }
    let config = key.config().with_context_limit(m)?;
    if let Some(o) = other {
        if o.half_dim() != key.half_dim() || o.config().base() != key.config().base() {
            return Err(ProbeError::input("both keys must share head dimension and base"));
        }
    }
    let second = || other.ok_or_else(|| ProbeError::input(format!("mode {} needs a second key spectrum", req.mode)));
    let (h, base) = (key.half_dim(), key.config().base());
    let pairs = pair_total(m) as f64;

    let mut r = FailureReport::new(req.mode, config.clone());
    r.threshold_mode = Some(req.threshold_mode);
    r.seed = req.seed;
    let series = series_unchecked(key, 0, m);
    match req.mode {
        FailureMode::PositionInversion => {
            r.lower_bound = Some(pos_inversion_lower_bound(h, base, m)?);
            r.analytic_prob = Some(pos_inversion_prob_analytic(key, m, req.threshold_mode)?);
            let (inverted, total) = count_position_inversions(&series);
            r.count = Some(inverted);
            r.empirical_prob = Some(inverted as f64 / total as f64);
            if req.mc_samples > 0 {
                r.mc_estimate = Some(pos_inversion_monte_carlo(key, m, req.mc_samples, req.seed)?);
                r.samples = req.mc_samples;
            }
        }
        FailureMode::PositionAliasing => {
            r.dtype = Some(req.dtype.clone());
            let p = pos_aliasing_prob_analytic(AmplitudeProfile::Measured(key), m, &req.dtype, req.threshold_mode)?;
            r.analytic_prob = Some(p);
            r.expected_count = Some(expected_aliasing_pairs(p, m));
            let count = count_pos_aliasing_pairs(&series, &req.dtype);
            r.count = Some(count);
            r.empirical_prob = Some(count as f64 / pairs);
        }
        FailureMode::TokenInversion => {
            r.analytic_prob = Some(token_inversion_prime_prob(key, m, req.threshold_mode, SigmaVariant::Pipeline)?);
            r.analytic_prob_alt =
                Some(token_inversion_prime_prob(key, m, req.threshold_mode, SigmaVariant::FullAngle)?);
            let count = match other {
                Some(o) => token_inversion_empirical(&series, &series_unchecked(o, 0, m), req.baseline)?.count(),
                None => {
                    let d = prime_difference_spectrum(key)?;
                    series_unchecked(&d, 0, m).into_iter().filter(|&v| v > 0.0).count() as u64
                }
            };
            r.count = Some(count);
            r.empirical_prob = Some(count as f64 / m as f64);
        }
        FailureMode::TokenAliasing => {
            r.dtype = Some(req.dtype.clone());
            let lam = config.lambda(m, req.threshold_mode)?.min(h as f64);
            if lam > 0.0 {
                r.analytic_prob = Some(token_aliasing_prob_analytic(h, lam, &req.dtype)?);
            }
            let set = enumerate_token_aliasing(&series, &series_unchecked(second()?, 0, m), &req.dtype)?;
            r.count = Some(set.count());
            r.empirical_prob = Some(set.frequency());
        }
        FailureMode::AttentionInvariance => {
            r.dtype = Some(req.dtype.clone());
            let count = count_attention_invariance_pairs(&series, &series_unchecked(second()?, 0, m), &req.dtype)?;
            r.count = Some(count);
            r.empirical_prob = Some(count as f64 / pairs);
        }
    }
    Ok(r)
}
