use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::precision::{rounded_key, DTypeFormat};
use crate::rope::{lambda_threshold, series_unchecked, Spectrum, ThresholdMode};
use crate::stats::{is_high, normal_cdf, normal_pdf};
use crate::sum::CompensatedSum;

/// Which variance to use for the prime-token comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaVariant {
    /// Normal approximation of the difference spectrum:
    /// `sigma^2 = sum_{n < lambda} 2 a_n^2 sin^2(phi_n / 2)`.
    Pipeline,
    /// `sigma^2 = sum_{n < lambda} a_n^2 sin^2(phi_n)`.
    FullAngle,
}

/// Positions where a two-key comparison fails, with the running fraction
/// `curve[m] = |{m' <= m failing}| / (m + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSet {
    pub positions: Vec<u64>,
    pub curve: Vec<f64>,
    pub len: u64,
}

impl PositionSet {
    fn from_flags(flags: impl ExactSizeIterator<Item = bool>) -> Self {
        let len = flags.len();
        let mut positions = Vec::new();
        let mut curve = Vec::with_capacity(len);
        for (m, hit) in flags.enumerate() {
            if hit {
                positions.push(m as u64);
            }
            curve.push(positions.len() as f64 / (m + 1) as f64);
        }
        PositionSet { positions, curve, len: len as u64 }
    }

    pub fn count(&self) -> u64 {
        self.positions.len() as u64
    }

    pub fn frequency(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.count() as f64 / self.len as f64
        }
    }
}

fn ensure_not_prime(s: &Spectrum) -> Result<()> {
    s.ensure_non_degenerate()?;
    let differs = s.amplitudes().iter().zip(s.phases()).any(|(&a, &phi)| a > 0.0 && phi != 0.0);
    if differs {
        Ok(())
    } else {
        Err(ProbeError::degenerate("prime token identical to the key: every active phase is zero"))
    }
}

/// Spectrum of `D(m) = S(m) - S'(m)`, where the prime key `S'` shares the
/// amplitudes and has all phases zero: amplitudes `2 a_n sin(phi_n / 2)`,
/// phases `phi_n / 2 + pi/2`.
pub fn prime_difference_spectrum(s: &Spectrum) -> Result<Spectrum> {
    ensure_not_prime(s)?;
    let amplitudes = s.amplitudes().iter().zip(s.phases()).map(|(&a, &phi)| 2.0 * a * (phi / 2.0).sin()).collect();
    let phases = s.phases().iter().map(|&phi| phi / 2.0 + FRAC_PI_2).collect();
    Spectrum::new(s.config().clone(), amplitudes, phases)
}

/// Probability that the key outscores its prime token at a random distance
/// in `[0, M)`: `Phi(mu / sigma)` with `mu = sum_{n >= lambda} a_n (cos phi_n - 1)`.
pub fn token_inversion_prime_prob(s: &Spectrum, m: u64, mode: ThresholdMode, variant: SigmaVariant) -> Result<f64> {
    ensure_not_prime(s)?;
    let lam = lambda_threshold(s.half_dim(), s.config().base(), m, mode)?;
    let mut mu = CompensatedSum::new();
    let mut var = CompensatedSum::new();
    for (n, (&a, &phi)) in s.amplitudes().iter().zip(s.phases()).enumerate() {
        let half_sin = (phi / 2.0).sin();
        if is_high(n, lam) {
            var.add(match variant {
                SigmaVariant::Pipeline => 2.0 * a * a * half_sin * half_sin,
                SigmaVariant::FullAngle => a * a * phi.sin().powi(2),
            });
        } else {
            // cos(phi) - 1 without cancellation
            mu.add(-2.0 * a * half_sin * half_sin);
        }
    }
    let var = var.value();
    if !(var > 0.0) {
        return Err(ProbeError::degenerate("prime-token variance is zero"));
    }
    Ok(normal_cdf(mu.value() / var.sqrt()))
}

/// Exact fraction of `m` in `[0, M)` with `S(m) > S'(m)`.
pub fn token_inversion_prime_fraction(s: &Spectrum, m: u64) -> Result<f64> {
    if m == 0 {
        return Err(ProbeError::range("window must contain at least one position"));
    }
    let d = prime_difference_spectrum(s)?;
    let hits = series_unchecked(&d, 0, m).into_iter().filter(|&v| v > 0.0).count();
    Ok(hits as f64 / m as f64)
}

fn check_pair(series1: &[f64], series2: &[f64]) -> Result<()> {
    if series1.len() != series2.len() {
        return Err(ProbeError::input(format!("series lengths differ: {} vs {}", series1.len(), series2.len())));
    }
    Ok(())
}

/// Positions whose ordering of the two keys is strictly reversed relative
/// to `baseline`. Ties are not inversions.
pub fn token_inversion_empirical(series1: &[f64], series2: &[f64], baseline: usize) -> Result<PositionSet> {
    check_pair(series1, series2)?;
    if baseline >= series1.len() {
        return Err(ProbeError::range(format!("baseline {baseline} outside series of length {}", series1.len())));
    }
    let (b1, b2) = (series1[baseline], series2[baseline]);
    let flipped: Box<dyn Fn(f64, f64) -> bool> = if b1 > b2 {
        Box::new(|x, y| x < y)
    } else if b1 < b2 {
        Box::new(|x, y| x > y)
    } else {
        return Err(ProbeError::degenerate(format!("ambiguous baseline: both keys score {b1} at m = {baseline}")));
    };
    Ok(PositionSet::from_flags(series1.iter().zip(series2).map(|(&x, &y)| flipped(x, y))))
}

/// Positions where the two keys' scores round to the same value.
pub fn enumerate_token_aliasing(series1: &[f64], series2: &[f64], dtype: &DTypeFormat) -> Result<PositionSet> {
    check_pair(series1, series2)?;
    Ok(PositionSet::from_flags(
        series1.iter().zip(series2).map(|(&x, &y)| rounded_key(x, dtype) == rounded_key(y, dtype)),
    ))
}

/// `2 * 2^-f * h / sqrt(lambda) * pdf(h / sqrt(lambda) - sqrt(lambda))`; at
/// `lambda = h` this is `2^(1-f) sqrt(h) / sqrt(2 pi)`.
pub fn token_aliasing_prob_analytic(half_dim: usize, lambda: f64, dtype: &DTypeFormat) -> Result<f64> {
    let h = half_dim as f64;
    if !(lambda > 0.0 && lambda <= h) {
        return Err(ProbeError::range(format!("token aliasing needs 0 < lambda <= {half_dim}, got {lambda}")));
    }
    let ulp = 2f64.powi(-(dtype.fraction_bits as i32));
    let root = lambda.sqrt();
    Ok(2.0 * ulp * h / root * normal_pdf(h / root - root))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::RopeConfig;
    use crate::sampling::{random_spectrum, stream_rng, SpectrumKind};
    use std::f64::consts::PI;

    #[test]
    fn prime_prob_half_at_full_threshold() {
        let c = RopeConfig::new(8, 100.0, 600).unwrap();
        let s = random_spectrum(&c, SpectrumKind::RandomQk, &mut stream_rng(2, 0)).unwrap();
        for v in [SigmaVariant::Pipeline, SigmaVariant::FullAngle] {
            assert_eq!(token_inversion_prime_prob(&s, 600, ThresholdMode::Theory, v).unwrap(), 0.5);
        }
    }

    #[test]
    fn prime_prob_degenerate_cases() {
        let c = RopeConfig::new(4, 1e4, 1000).unwrap();
        let zero_phase = Spectrum::uniform(c.clone(), 1.0).unwrap();
        assert!(matches!(
            token_inversion_prime_prob(&zero_phase, 1000, ThresholdMode::Theory, SigmaVariant::Pipeline),
            Err(ProbeError::Degenerate(_))
        ));
        let anti = Spectrum::new(c, vec![1.0; 4], vec![PI; 4]).unwrap();
        // lambda = 0: no oscillating component, mu = -2 sum a_n
        assert!(matches!(
            token_inversion_prime_prob(&anti, 2, ThresholdMode::Theory, SigmaVariant::Pipeline),
            Err(ProbeError::Degenerate(_))
        ));
    }

    #[test]
    fn difference_spectrum_reproduces_difference() {
        let c = RopeConfig::new(16, 1e4, 5000).unwrap();
        let s = random_spectrum(&c, SpectrumKind::RandomQk, &mut stream_rng(4, 0)).unwrap();
        let prime = s.with_phases(vec![0.0; 16]).unwrap();
        let d = prime_difference_spectrum(&s).unwrap();
        for m in [0u64, 1, 7, 100, 4999] {
            let want = s.evaluate(m) - prime.evaluate(m);
            assert!((d.evaluate(m) - want).abs() < 1e-12 * s.amplitude_sum());
        }
    }

    #[test]
    fn variants_agree_only_at_quarter_turns() {
        let c = RopeConfig::new(8, 1e4, 5000).unwrap();
        let quarter = vec![0.0, FRAC_PI_2, 3.0 * FRAC_PI_2, FRAC_PI_2, 0.0, FRAC_PI_2, 3.0 * FRAC_PI_2, FRAC_PI_2];
        let s = Spectrum::new(c.clone(), vec![1.0, 2.0, 0.5, 1.0, 1.0, 3.0, 1.0, 1.0], quarter).unwrap();
        let a = token_inversion_prime_prob(&s, 5000, ThresholdMode::Theory, SigmaVariant::Pipeline).unwrap();
        let b = token_inversion_prime_prob(&s, 5000, ThresholdMode::Theory, SigmaVariant::FullAngle).unwrap();
        assert!((a - b).abs() < 1e-12);
        // at phi = pi the full-angle variance vanishes while the pipeline one is 2 a^2
        let s = Spectrum::new(c, vec![1.0; 8], vec![PI; 8]).unwrap();
        let a = token_inversion_prime_prob(&s, 5000, ThresholdMode::Theory, SigmaVariant::Pipeline).unwrap();
        let b = token_inversion_prime_prob(&s, 5000, ThresholdMode::Theory, SigmaVariant::FullAngle).unwrap();
        assert!(b < a);
    }

    #[test]
    fn prime_fraction_matches_direct_count() {
        let c = RopeConfig::new(16, 1e4, 3000).unwrap();
        let s = random_spectrum(&c, SpectrumKind::RandomQk, &mut stream_rng(8, 0)).unwrap();
        let prime = s.with_phases(vec![0.0; 16]).unwrap();
        let direct = (0..3000u64).filter(|&m| s.evaluate(m) - prime.evaluate(m) > 0.0).count();
        let f = token_inversion_prime_fraction(&s, 3000).unwrap();
        assert!((f - direct as f64 / 3000.0).abs() <= 2.0 / 3000.0);
    }

    #[test]
    fn token_inversion_examples() {
        let s: Vec<f64> = vec![1.0, 0.5, -0.2, 0.0, -3.0];
        let shifted: Vec<f64> = s.iter().map(|x| x + 1.0).collect();
        assert!(token_inversion_empirical(&shifted, &s, 1).unwrap().positions.is_empty());
        let r = token_inversion_empirical(&s, &[0.0; 5], 1).unwrap();
        assert_eq!(r.positions, vec![2, 4]);
        assert_eq!(r.curve, vec![0.0, 0.0, 1.0 / 3.0, 0.25, 0.4]);
        // baseline ordering reversed: inversions are where S1 > S2
        let r = token_inversion_empirical(&[0.0; 5], &s, 0).unwrap();
        assert_eq!(r.positions, vec![2, 4]);
        assert!(matches!(token_inversion_empirical(&s, &[0.0; 5], 3), Err(ProbeError::Degenerate(_))));
        assert!(token_inversion_empirical(&s, &[0.0; 4], 1).is_err());
        assert!(token_inversion_empirical(&s, &s, 9).is_err());
    }

    #[test]
    fn token_aliasing_examples() {
        let d = DTypeFormat::bf16();
        let s = vec![0.25, 1.0, 3.5];
        assert_eq!(enumerate_token_aliasing(&s, &s, &d).unwrap().count(), 3);
        let far: Vec<f64> = s.iter().map(|x| x + 100.0).collect();
        assert_eq!(enumerate_token_aliasing(&s, &far, &d).unwrap().count(), 0);
        // 1 + 2^-9 rounds to 1 in BF16
        let r = enumerate_token_aliasing(&[1.0, 2.0], &[1.0 + 2f64.powi(-9), 2.5], &d).unwrap();
        assert_eq!(r.positions, vec![0]);
        assert_eq!(r.frequency(), 0.5);
    }

    #[test]
    fn token_aliasing_limits() {
        let bf = token_aliasing_prob_analytic(64, 64.0, &DTypeFormat::bf16()).unwrap();
        let fp = token_aliasing_prob_analytic(64, 64.0, &DTypeFormat::fp16()).unwrap();
        assert!((bf - 0.0499).abs() < 5e-5);
        assert!((fp - 0.00623).abs() < 5e-6);
        assert_eq!(fp, bf / 8.0);
        let closed = 2f64.powi(1 - 7) * 8.0 / (2.0 * PI).sqrt();
        assert!((bf - closed).abs() < 1e-16);
        assert!(token_aliasing_prob_analytic(64, 0.0, &DTypeFormat::bf16()).is_err());
        assert!(token_aliasing_prob_analytic(64, 65.0, &DTypeFormat::bf16()).is_err());
    }
}
