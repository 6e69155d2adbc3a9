use std::f64::consts::LN_2;

use rand::Rng;

use super::{FailureMode, FailureReport, McEstimate};
use crate::error::{ProbeError, Result};
use crate::rope::{lambda_threshold, series_unchecked, Spectrum, ThresholdMode};
use crate::sampling::stream_rng;
use crate::stats::{is_high, normal_cdf};
use crate::sum::CompensatedSum;

fn check_base(half_dim: usize, base: f64) -> Result<()> {
    if half_dim == 0 {
        return Err(ProbeError::input("half dimension must be >= 1"));
    }
    if !(base > 1.0 && base.is_finite()) {
        return Err(ProbeError::input(format!("RoPE base must be finite and exceed 1, got {base}")));
    }
    Ok(())
}

/// Spectrum-free lower bound `Phi(-ln2 * sqrt(h / (ln B * (ln M - ln2 / 2))))`
/// on the position-inversion probability. Natural logarithms throughout.
pub fn pos_inversion_lower_bound(half_dim: usize, base: f64, m: u64) -> Result<f64> {
    check_base(half_dim, base)?;
    if m < 2 {
        return Err(ProbeError::range("position inversion needs M >= 2"));
    }
    let denom = base.ln() * ((m as f64).ln() - 0.5 * LN_2);
    Ok(normal_cdf(-LN_2 * (half_dim as f64 / denom).sqrt()))
}

/// Smallest `M >= 2` whose lower bound reaches `threshold`.
pub fn smallest_context_for_inversion(half_dim: usize, base: f64, threshold: f64) -> Result<u64> {
    check_base(half_dim, base)?;
    if !(threshold > 0.0 && threshold < 0.5) {
        return Err(ProbeError::range(format!("threshold must lie in (0, 0.5), got {threshold}")));
    }
    let reaches = |m: u64| pos_inversion_lower_bound(half_dim, base, m).map(|b| b >= threshold);
    if reaches(2)? {
        return Ok(2);
    }
    let mut lo = 2u64;
    let mut hi = 4u64;
    while !reaches(hi)? {
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(|| {
            ProbeError::range(format!("lower bound stays below {threshold} for every 64-bit context length"))
        })?;
    }
    // invariant: bound(lo) < threshold <= bound(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reaches(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `Phi(-(mu1 - mu2) / sqrt(sigma1^2 + sigma2^2))` for a key drawn from the
/// first half `[0, M/2)` against one from the second half `[M/2, M)`.
pub fn pos_inversion_prob_analytic(s: &Spectrum, m: u64, mode: ThresholdMode) -> Result<f64> {
    if m < 2 {
        return Err(ProbeError::range("position inversion needs M >= 2"));
    }
    s.ensure_non_degenerate()?;
    let (h, base) = (s.half_dim(), s.config().base());
    let lam = lambda_threshold(h, base, m, mode)?;
    let lam_half = lambda_threshold(h, base, m / 2, mode)?;
    let mut gap = CompensatedSum::new();
    let mut var = CompensatedSum::new();
    for (n, (&a, &phi)) in s.amplitudes().iter().zip(s.phases()).enumerate() {
        if is_high(n, lam_half) {
            // oscillating in both halves
            var.add(a * a);
        } else if is_high(n, lam) {
            // oscillating in the full window, still decaying in the first half
            gap.add(a * phi.cos());
            var.add(a * a / 2.0);
        }
    }
    let var = var.value();
    if !(var > 0.0) {
        return Err(ProbeError::degenerate("position-inversion variance is zero"));
    }
    Ok(normal_cdf(-gap.value() / var.sqrt()))
}

/// Counts pairs `i < len/2 <= j` with `series[i] < series[j]`.
/// Returns `(inverted, total)`.
pub fn count_position_inversions(series: &[f64]) -> (u64, u64) {
    let half = series.len() / 2;
    let mut first = series[..half].to_vec();
    first.sort_unstable_by(f64::total_cmp);
    let inverted = series[half..].iter().map(|&v| first.partition_point(|&x| x < v) as u64).sum();
    (inverted, half as u64 * (series.len() - half) as u64)
}

/// Exact position-inversion fraction over `[0, M)`.
pub fn pos_inversion_empirical(s: &Spectrum, m: u64) -> Result<FailureReport> {
    if m < 2 {
        return Err(ProbeError::range("position inversion needs M >= 2"));
    }
    let config = s.config().with_context_limit(m)?;
    let (inverted, total) = count_position_inversions(&series_unchecked(s, 0, m));
    let mut report = FailureReport::new(FailureMode::PositionInversion, config);
    report.count = Some(inverted);
    report.samples = total;
    report.empirical_prob = Some(inverted as f64 / total as f64);
    Ok(report)
}

/// Samples `samples` independent pairs from stream 0 of `seed`.
pub fn pos_inversion_monte_carlo(s: &Spectrum, m: u64, samples: u64, seed: u64) -> Result<McEstimate> {
    if m < 2 {
        return Err(ProbeError::range("position inversion needs M >= 2"));
    }
    if samples == 0 {
        return Err(ProbeError::input("Monte-Carlo estimate needs at least one sample"));
    }
    let half = m / 2;
    let mut rng = stream_rng(seed, 0);
    let hits = (0..samples)
        .filter(|_| {
            let near = rng.random_range(0..half);
            let far = rng.random_range(half..m);
            s.evaluate(near) < s.evaluate(far)
        })
        .count() as u64;
    Ok(McEstimate::from_hits(hits, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::RopeConfig;
    use crate::sampling::{random_spectrum, SpectrumKind};
    use proptest::prelude::*;

    #[test]
    fn lower_bound_table_points() {
        for &(base, m) in &[(1e5, 23361u64), (1e6, 4630)] {
            let b = pos_inversion_lower_bound(64, base, m).unwrap();
            assert!((b - 0.3).abs() < 0.002, "B={base}: {b}");
        }
        let far = pos_inversion_lower_bound(64, 1e4, u64::MAX).unwrap();
        assert!(far < 0.5 && far > 0.3);
        assert!(pos_inversion_lower_bound(64, 1e4, 1).is_err());
        assert!(pos_inversion_lower_bound(64, 1.0, 10).is_err());
    }

    #[test]
    fn smallest_context_bracket() {
        for &base in &[1e4, 1e5, 1e6, 1e7, 1e8] {
            let m = smallest_context_for_inversion(64, base, 0.3).unwrap();
            assert!(pos_inversion_lower_bound(64, base, m).unwrap() >= 0.3);
            assert!(pos_inversion_lower_bound(64, base, m - 1).unwrap() < 0.3);
        }
        assert_eq!(smallest_context_for_inversion(64, 1e8, 0.01).unwrap(), 2);
        assert!(smallest_context_for_inversion(64, 1e4, 0.5).is_err());
        assert!(matches!(smallest_context_for_inversion(64, 1e4, 0.4999), Err(ProbeError::Range(_))));
    }

    #[test]
    fn analytic_examples() {
        let c = RopeConfig::new(64, 1e5, 32768).unwrap();
        let s = Spectrum::uniform(c, 1.0).unwrap();
        let p = pos_inversion_prob_analytic(&s, 32768, ThresholdMode::Theory).unwrap();
        let want = normal_cdf(-4.0 / 46f64.sqrt());
        assert!((p - want).abs() < 1e-15);
        assert!((p - 0.2776).abs() < 1e-4);
        // lambda(M) = lambda(M/2) = h: exactly one half
        let c = RopeConfig::new(8, 100.0, 600).unwrap();
        let s = Spectrum::uniform(c, 1.0).unwrap();
        assert!(lambda_threshold(8, 100.0, 300, ThresholdMode::TableRaw).unwrap() >= 8.0);
        assert_eq!(pos_inversion_prob_analytic(&s, 600, ThresholdMode::TableRaw).unwrap(), 0.5);
        // no high-frequency band at all
        assert!(matches!(pos_inversion_prob_analytic(&s, 4, ThresholdMode::Theory), Err(ProbeError::Degenerate(_))));
    }

    #[test]
    fn empirical_monotone_and_constant() {
        // a single component decaying from cos(0) over [0, M) with M theta < pi
        let c = RopeConfig::new(1, 1e4, 3000).unwrap();
        let s = Spectrum::new(c.clone(), vec![1.0], vec![0.0]).unwrap();
        let r = pos_inversion_empirical(&s, 3).unwrap();
        assert_eq!(r.count, Some(0));
        let r = pos_inversion_empirical(&s, 3).unwrap();
        assert_eq!(r.samples, 2);
        let flat = Spectrum::uniform(RopeConfig::new(4, 1e4, 100).unwrap(), 0.0).unwrap();
        let r = pos_inversion_empirical(&flat, 100).unwrap();
        assert_eq!(r.empirical_prob, Some(0.0));
    }

    #[test]
    fn empirical_strictly_decreasing_series() {
        let (inv, total) = count_position_inversions(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!((inv, total), (0, 6));
        let (inv, total) = count_position_inversions(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((inv, total), (4, 4));
    }

    fn brute_force(series: &[f64]) -> u64 {
        let half = series.len() / 2;
        let mut n = 0;
        for i in 0..half {
            for j in half..series.len() {
                if series[i] < series[j] {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn empirical_matches_brute_force_on_spectrum() {
        let c = RopeConfig::new(32, 1e4, 256).unwrap();
        let mut rng = stream_rng(3, 0);
        let s = random_spectrum(&c, SpectrumKind::RandomQk, &mut rng).unwrap();
        let r = pos_inversion_empirical(&s, 256).unwrap();
        assert_eq!(r.count, Some(brute_force(&s.series(0, 256).unwrap())));
        assert_eq!(r.samples, 128 * 128);
    }

    #[test]
    fn monte_carlo_is_seeded() {
        let c = RopeConfig::new(16, 1e4, 4096).unwrap();
        let s = random_spectrum(&c, SpectrumKind::RandomPhase, &mut stream_rng(5, 0)).unwrap();
        let a = pos_inversion_monte_carlo(&s, 4096, 2000, 11).unwrap();
        assert_eq!(a, pos_inversion_monte_carlo(&s, 4096, 2000, 11).unwrap());
        assert!(a.half_width >= 0.0);
        assert!(pos_inversion_monte_carlo(&s, 4096, 0, 11).is_err());
    }

    proptest! {
        #[test]
        fn sort_merge_count_matches_brute_force(series in prop::collection::vec(-4i32..4, 2..200)) {
            let series: Vec<f64> = series.into_iter().map(f64::from).collect();
            prop_assert_eq!(count_position_inversions(&series).0, brute_force(&series));
        }
    }
}
