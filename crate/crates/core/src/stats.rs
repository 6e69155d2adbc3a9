//! Normal approximation of the RoPE product over a window of distances.
//!
//! When `m` is drawn uniformly from a long window, components below the
//! threshold `lambda(M)` behave like independent uniform phases and add
//! variance `a_n^2 / 2` each, while components above it barely rotate and
//! contribute their initial value `a_n cos(phi_n)` to the mean.

use std::f64::consts::{PI, SQRT_2, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::rope::{series_unchecked, Spectrum, ThresholdMode};
use crate::sum::{compensated_sum, CompensatedSum};

/// Normal model `N(mu, sigma^2)` of `S(m)` over `window`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalApprox {
    pub mu: f64,
    pub sigma: f64,
    pub lambda_used: f64,
    /// Half-open `[start, end)`.
    pub window: (u64, u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Exact statistics of `S(m)` enumerated over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub window: (u64, u64),
    pub empirical_mean: f64,
    pub empirical_std: f64,
    pub skewness: f64,
    pub histogram: Histogram,
    /// Kolmogorov-Smirnov distance to the reference normal.
    pub ks_distance: f64,
    /// The reference normal has zero variance, so the KS distance is taken
    /// against a point mass.
    pub degenerate: bool,
}

/// `sin(M x) / (M sin x)`, with a series expansion around `sin x = 0`.
fn dirichlet_ratio(half_alpha: f64, count: f64) -> f64 {
    let s = half_alpha.sin();
    if s.abs() < 1e-12 {
        let x2 = half_alpha * half_alpha;
        let m2 = count * count;
        1.0 - (m2 - 1.0) * x2 / 6.0 + (3.0 * m2 * m2 - 10.0 * m2 + 7.0) * x2 * x2 / 360.0
    } else {
        (count * half_alpha).sin() / (count * s)
    }
}

/// Mean exponential sum `G_M(alpha, A) = (1/M) sum_{m=A}^{A+M-1} e^{i alpha m}`
/// in closed form.
pub fn exp_sum_mean(alpha: f64, start: i64, count: u64) -> Result<Complex64> {
    if count == 0 {
        return Err(ProbeError::range("exponential sum needs M >= 1"));
    }
    // e^{i alpha m} only depends on alpha mod 2pi for integer m
    let mut a = alpha.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    let m = count as f64;
    let ratio = dirichlet_ratio(a / 2.0, m);
    let centre = start as f64 + (m - 1.0) / 2.0;
    Ok(Complex64::from_polar(ratio, a * centre))
}

fn lambda_for(s: &Spectrum, m: u64, mode: ThresholdMode) -> Result<f64> {
    s.config().lambda(m, mode)
}

/// `n < lambda` selects the high-frequency band.
pub(crate) fn is_high(n: usize, lambda: f64) -> bool {
    (n as f64) < lambda
}

/// `mu ~ sum_{n >= lambda} a_n cos(phi_n)`, `sigma ~ sqrt(sum_{n < lambda} a_n^2 / 2)`
/// over the window `[0, M)`.
pub fn approx_moments(s: &Spectrum, m: u64, mode: ThresholdMode) -> Result<NormalApprox> {
    s.ensure_non_degenerate()?;
    let lambda = lambda_for(s, m, mode)?;
    Ok(moments_with_lambda(s, lambda, (0, m)))
}

pub(crate) fn moments_with_lambda(s: &Spectrum, lambda: f64, window: (u64, u64)) -> NormalApprox {
    let mut mu = CompensatedSum::new();
    let mut var = CompensatedSum::new();
    for (n, (&a, &phi)) in s.amplitudes().iter().zip(s.phases()).enumerate() {
        if is_high(n, lambda) {
            var.add(a * a / 2.0);
        } else {
            mu.add(a * phi.cos());
        }
    }
    NormalApprox { mu: mu.value(), sigma: var.value().max(0.0).sqrt(), lambda_used: lambda, window }
}

/// Exact window mean `mu_M(A) = sum_n a_n Re(e^{i phi_n} G_M(theta^n, A))`
/// over all components.
pub fn exact_mean(s: &Spectrum, start: i64, count: u64) -> Result<f64> {
    let mut acc = CompensatedSum::new();
    for (n, (&a, &phi)) in s.amplitudes().iter().zip(s.phases()).enumerate() {
        let g = exp_sum_mean(s.config().frequency(n), start, count)?;
        acc.add(a * (Complex64::from_polar(1.0, phi) * g).re);
    }
    Ok(acc.value())
}

/// Enumerates `S(m)` over `[start, start + width)` and compares it with `approx`.
pub fn empirical_window_stats(
    s: &Spectrum,
    start: u64,
    width: u64,
    bins: usize,
    approx: &NormalApprox,
) -> Result<WindowStats> {
    if width == 0 {
        return Err(ProbeError::range("window width must be >= 1"));
    }
    if bins == 0 {
        return Err(ProbeError::range("histogram needs at least one bin"));
    }
    let end = start.checked_add(width).filter(|&e| e <= s.config().context_limit()).ok_or_else(|| {
        ProbeError::range(format!(
            "window [{start}, {start}+{width}) exceeds context limit {}",
            s.config().context_limit()
        ))
    })?;
    let values = series_unchecked(s, start, end);
    Ok(summarize(&values, (start, end), bins, approx))
}

pub(crate) fn summarize(values: &[f64], window: (u64, u64), bins: usize, approx: &NormalApprox) -> WindowStats {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / n;
    let std = var.sqrt();
    let third = compensated_sum(values.iter().map(|v| (v - mean).powi(3))) / n;
    let skewness = if std > 0.0 { third / (std * std * std) } else { 0.0 };

    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
        counts[idx] += 1;
    }

    let degenerate = !(approx.sigma > 0.0);
    let ks = if degenerate {
        point_mass_ks(values, approx.mu)
    } else {
        ks_distance(values, |x| normal_cdf((x - approx.mu) / approx.sigma))
    };
    WindowStats {
        window,
        empirical_mean: mean,
        empirical_std: std,
        skewness,
        histogram: Histogram { edges, counts },
        ks_distance: ks,
        degenerate,
    }
}

/// Two-sided KS statistic of the sample against a continuous CDF.
pub fn ks_distance(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let n = values.len() as f64;
    let mut d: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let f = cdf(values[i]);
        d = d.max((rank as f64 + 1.0) / n - f).max(f - rank as f64 / n);
    }
    d.clamp(0.0, 1.0)
}

/// KS distance to a point mass at `at`: mass strictly on either side.
fn point_mass_ks(values: &[f64], at: f64) -> f64 {
    let n = values.len() as f64;
    let below = values.iter().filter(|&&v| v < at).count() as f64;
    let above = values.iter().filter(|&&v| v > at).count() as f64;
    (below / n).max(above / n)
}

/// Standard normal CDF, `erfc(-x / sqrt 2) / 2`.
///
/// `erfc` is the FreeBSD `s_erf.c` piecewise rational approximation (via
/// `libm`), accurate to about 1 ulp, so the absolute error is far below 1e-12.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / TAU.sqrt()
}

/// `C / sqrt(lambda)`; the order of the CLT error for a `lambda`-term sum.
pub fn berry_esseen_envelope(lambda: f64, constant: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(ProbeError::degenerate("Berry-Esseen bound needs lambda >= 1"));
    }
    Ok(constant / lambda.sqrt())
}

/// Error envelope of the normal approximation at context length `m`.
pub fn berry_esseen_bound(s: &Spectrum, m: u64, mode: ThresholdMode, constant: f64) -> Result<f64> {
    berry_esseen_envelope(lambda_for(s, m, mode)?, constant)
}
