use std::collections::HashMap;
use std::hash::Hash;

use super::{pair_total, ExpectedCount, PairList};
use crate::error::{ProbeError, Result};
use crate::precision::{effective_epsilon, rounded_key, DTypeFormat, EpsilonContext};
use crate::rope::{lambda_threshold, Spectrum, ThresholdMode};
use crate::stats::moments_with_lambda;

/// Amplitudes feeding the position-aliasing estimate.
#[derive(Debug, Clone, Copy)]
pub enum AmplitudeProfile<'a> {
    /// Variance summed over the discrete high-frequency components.
    Measured(&'a Spectrum),
    /// Every `a_n = amplitude`, with the index range not capped at `h`:
    /// `sigma^2 = amplitude^2 * |{n >= 0 : n < lambda}| / 2`. With the raw
    /// threshold this reproduces the tabulated single-pair probabilities.
    Uniform { amplitude: f64, half_dim: usize, base: f64 },
}

impl AmplitudeProfile<'_> {
    /// `(sigma, sum a_n, head_dim)` at context length `m`.
    fn moments(&self, m: u64, mode: ThresholdMode) -> Result<(f64, f64, usize)> {
        match *self {
            AmplitudeProfile::Measured(s) => {
                s.ensure_non_degenerate()?;
                let lam = lambda_threshold(s.half_dim(), s.config().base(), m, mode)?;
                let approx = moments_with_lambda(s, lam, (0, m));
                Ok((approx.sigma, s.amplitude_sum(), s.config().head_dim()))
            }
            AmplitudeProfile::Uniform { amplitude, half_dim, base } => {
                if !(amplitude > 0.0 && amplitude.is_finite()) {
                    return Err(ProbeError::degenerate(format!("uniform amplitude must be positive, got {amplitude}")));
                }
                if half_dim == 0 {
                    return Err(ProbeError::input("half dimension must be >= 1"));
                }
                let lam = lambda_threshold(half_dim, base, m, mode)?;
                let below = lam.max(0.0).ceil();
                let sigma = amplitude * (below / 2.0).sqrt();
                Ok((sigma, amplitude * half_dim as f64, 2 * half_dim))
            }
        }
    }
}

/// Per-pair probability `Pr(|S(m1) - S(m2)| < eps) = 2 Phi(eps / (sqrt2 sigma)) - 1`,
/// evaluated as `erf(eps / (2 sigma))` to keep precision for tiny `eps`.
pub fn pos_aliasing_prob_analytic(
    profile: AmplitudeProfile<'_>,
    m: u64,
    dtype: &DTypeFormat,
    mode: ThresholdMode,
) -> Result<f64> {
    let (sigma, sum, head_dim) = profile.moments(m, mode)?;
    if !(sigma > 0.0) {
        return Err(ProbeError::degenerate("position-aliasing variance is zero"));
    }
    let eps = effective_epsilon(&EpsilonContext::from_head_dim(head_dim, dtype.clone(), sum)?);
    Ok(libm::erf(eps / (2.0 * sigma)))
}

/// Probability that a distance has at least one aliasing partner among the
/// other `M - 1`: `1 - (1 - p)^(M - 1)`.
pub fn pos_aliasing_any_prob(per_pair: f64, m: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&per_pair) {
        return Err(ProbeError::input(format!("probability must lie in [0, 1], got {per_pair}")));
    }
    if m < 2 {
        return Err(ProbeError::range("aliasing needs M >= 2"));
    }
    if per_pair == 1.0 {
        return Ok(1.0);
    }
    Ok(-((m - 1) as f64 * (-per_pair).ln_1p()).exp_m1())
}

/// Binomial mean and std of the aliasing pair count among `C(M, 2)` pairs.
pub fn expected_aliasing_pairs(per_pair: f64, m: u64) -> ExpectedCount {
    let n = pair_total(m) as f64;
    ExpectedCount { mean: n * per_pair, std: (n * per_pair * (1.0 - per_pair)).sqrt() }
}

fn group_positions<K: Hash + Eq>(keys: impl Iterator<Item = K>) -> Vec<Vec<u64>> {
    let mut groups: HashMap<K, Vec<u64>> = HashMap::new();
    for (i, k) in keys.enumerate() {
        groups.entry(k).or_default().push(i as u64);
    }
    groups.into_values().filter(|g| g.len() > 1).collect()
}

fn pairs_from_groups(groups: Vec<Vec<u64>>, len: usize) -> PairList {
    let mut pairs = Vec::new();
    for g in groups {
        for (i, &a) in g.iter().enumerate() {
            pairs.extend(g[i + 1..].iter().map(|&b| (a, b)));
        }
    }
    pairs.sort_unstable();
    PairList { pairs, total_pairs_scanned: pair_total(len as u64) }
}

fn count_from_groups(groups: Vec<Vec<u64>>) -> u64 {
    groups.iter().map(|g| pair_total(g.len() as u64)).sum()
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(ProbeError::input(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// All pairs of positions whose scores round to the same value.
pub fn enumerate_pos_aliasing(series: &[f64], dtype: &DTypeFormat) -> PairList {
    let groups = group_positions(series.iter().map(|&x| rounded_key(x, dtype)));
    pairs_from_groups(groups, series.len())
}

/// Size of [`enumerate_pos_aliasing`] without materialising the pairs.
pub fn count_pos_aliasing_pairs(series: &[f64], dtype: &DTypeFormat) -> u64 {
    count_from_groups(group_positions(series.iter().map(|&x| rounded_key(x, dtype))))
}

fn joint_keys<'a>(a: &'a [f64], b: &'a [f64], dtype: &'a DTypeFormat) -> impl Iterator<Item = (u64, u64)> + 'a {
    a.iter().zip(b).map(move |(&x, &y)| (rounded_key(x, dtype), rounded_key(y, dtype)))
}

/// Pairs aliased in both series at once: swapping the two keys at those
/// positions leaves every rounded score unchanged.
pub fn enumerate_attention_invariance(series1: &[f64], series2: &[f64], dtype: &DTypeFormat) -> Result<PairList> {
    check_lengths(series1, series2)?;
    Ok(pairs_from_groups(group_positions(joint_keys(series1, series2, dtype)), series1.len()))
}

pub fn count_attention_invariance_pairs(series1: &[f64], series2: &[f64], dtype: &DTypeFormat) -> Result<u64> {
    check_lengths(series1, series2)?;
    Ok(count_from_groups(group_positions(joint_keys(series1, series2, dtype))))
}
