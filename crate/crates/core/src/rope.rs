//! RoPE configurations, amplitude/phase spectra and the RoPE product.
//!
//! For a query/key pair split into `h` two-dimensional blocks, the score at
//! relative distance `m` is
//!
//! ```text
//! S(m) = sum_n a_n cos(m * theta^n + phi_n),   theta = B^(-1/h)
//! ```
//!
//! where `a_n` is the product of the block norms and `phi_n` the signed angle
//! from the query block to the key block.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::sum::{compensated_sum, CompensatedSum};

/// Convention used to turn a context length into the high/low frequency
/// split index `lambda(M) ~ h log_B M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// `clamp(ceil(h * ln(M / 2pi) / ln B), 0, h)`: a component is high
    /// frequency once it completes a full circle inside the context.
    Theory,
    /// `h * ln(M) / ln B`, real valued and unclamped.
    TableRaw,
}

impl std::str::FromStr for ThresholdMode {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "theory" => Ok(ThresholdMode::Theory),
            "tableraw" | "table-raw" | "table_raw" => Ok(ThresholdMode::TableRaw),
            other => Err(ProbeError::input(format!("unknown threshold mode `{other}`"))),
        }
    }
}

/// Split index between high-frequency (oscillating) and low-frequency
/// (decaying) components for a context of length `m`.
pub fn lambda_threshold(half_dim: usize, base: f64, m: u64, mode: ThresholdMode) -> Result<f64> {
    if m == 0 {
        return Err(ProbeError::range("lambda threshold needs a context length m >= 1"));
    }
    if !(base > 1.0) {
        return Err(ProbeError::input(format!("RoPE base must exceed 1, got {base}")));
    }
    let h = half_dim as f64;
    let m = m as f64;
    Ok(match mode {
        ThresholdMode::Theory => {
            let raw = (h * (m / TAU).ln() / base.ln()).ceil();
            raw.clamp(0.0, h)
        }
        ThresholdMode::TableRaw => h * m.ln() / base.ln(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RopeConfigRecord {
    h: usize,
    base: f64,
    context_limit: u64,
}

/// Head geometry and RoPE hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RopeConfigRecord", into = "RopeConfigRecord")]
pub struct RopeConfig {
    half_dim: usize,
    base: f64,
    theta: f64,
    context_limit: u64,
    frequencies: Vec<f64>,
}

impl TryFrom<RopeConfigRecord> for RopeConfig {
    type Error = ProbeError;

    fn try_from(r: RopeConfigRecord) -> Result<Self> {
        RopeConfig::new(r.h, r.base, r.context_limit)
    }
}

impl From<RopeConfig> for RopeConfigRecord {
    fn from(c: RopeConfig) -> Self {
        RopeConfigRecord { h: c.half_dim, base: c.base, context_limit: c.context_limit }
    }
}

impl RopeConfig {
    /// Builds a configuration, rejecting contexts at or beyond `ceil(2 pi B)`
    /// where even the slowest component wraps around.
    pub fn new(half_dim: usize, base: f64, context_limit: u64) -> Result<Self> {
        if half_dim == 0 {
            return Err(ProbeError::input("half dimension h must be >= 1"));
        }
        if !base.is_finite() || base <= 1.0 {
            return Err(ProbeError::input(format!("RoPE base must be finite and > 1, got {base}")));
        }
        if context_limit == 0 {
            return Err(ProbeError::input("context limit must be >= 1"));
        }
        let natural = natural_context_limit(base);
        if (context_limit as f64) >= natural {
            return Err(ProbeError::input(format!(
                "context limit {context_limit} reaches the natural limit ceil(2*pi*B) = {natural}"
            )));
        }
        let h = half_dim as f64;
        let frequencies = (0..half_dim).map(|n| base.powf(-(n as f64) / h)).collect();
        Ok(Self { half_dim, base, theta: base.powf(-1.0 / h), context_limit, frequencies })
    }

    pub fn half_dim(&self) -> usize {
        self.half_dim
    }

    pub fn head_dim(&self) -> usize {
        2 * self.half_dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Basic frequency `B^(-1/h)`.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn context_limit(&self) -> u64 {
        self.context_limit
    }

    /// Angular frequency `theta^n` of component `n`, computed as `B^(-n/h)`.
    pub fn frequency(&self, n: usize) -> f64 {
        self.frequencies[n]
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// True when the context exceeds `pi B`, past which the slowest component
    /// has left its decreasing half-turn. Such configurations are allowed.
    pub fn exceeds_decay_limit(&self) -> bool {
        self.context_limit as f64 > PI * self.base
    }

    pub fn with_context_limit(&self, context_limit: u64) -> Result<Self> {
        RopeConfig::new(self.half_dim, self.base, context_limit)
    }

    pub fn lambda(&self, m: u64, mode: ThresholdMode) -> Result<f64> {
        lambda_threshold(self.half_dim, self.base, m, mode)
    }
}

/// `ceil(2 pi B)`.
pub fn natural_context_limit(base: f64) -> f64 {
    (TAU * base).ceil()
}

/// Amplitude/phase representation of one query/key pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    config: RopeConfig,
    amplitudes: Vec<f64>,
    phases: Vec<f64>,
}

fn normalize_phase(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

impl Spectrum {
    /// Validates lengths and signs; phases are reduced into `[0, 2pi)`.
    pub fn new(config: RopeConfig, amplitudes: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        let h = config.half_dim();
        if amplitudes.len() != h || phases.len() != h {
            return Err(ProbeError::input(format!(
                "spectrum needs {h} amplitudes and phases, got {} and {}",
                amplitudes.len(),
                phases.len()
            )));
        }
        if let Some((n, a)) = amplitudes.iter().enumerate().find(|(_, a)| !(a.is_finite() && **a >= 0.0)) {
            return Err(ProbeError::input(format!("amplitude {n} must be finite and >= 0, got {a}")));
        }
        if let Some((n, p)) = phases.iter().enumerate().find(|(_, p)| !p.is_finite()) {
            return Err(ProbeError::input(format!("phase {n} must be finite, got {p}")));
        }
        let phases = phases.into_iter().map(normalize_phase).collect();
        Ok(Self { config, amplitudes, phases })
    }

    /// All amplitudes equal to `amplitude`, all phases zero.
    pub fn uniform(config: RopeConfig, amplitude: f64) -> Result<Self> {
        let h = config.half_dim();
        Spectrum::new(config, vec![amplitude; h], vec![0.0; h])
    }

    pub fn config(&self) -> &RopeConfig {
        &self.config
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn half_dim(&self) -> usize {
        self.config.half_dim()
    }

    /// Every amplitude is zero.
    pub fn is_degenerate(&self) -> bool {
        self.amplitudes.iter().all(|&a| a == 0.0)
    }

    pub fn amplitude_sum(&self) -> f64 {
        compensated_sum(self.amplitudes.iter().copied())
    }

    pub(crate) fn ensure_non_degenerate(&self) -> Result<()> {
        if self.is_degenerate() {
            Err(ProbeError::degenerate("all spectrum amplitudes are zero"))
        } else {
            Ok(())
        }
    }

    /// Same amplitudes, phases replaced.
    pub fn with_phases(&self, phases: Vec<f64>) -> Result<Self> {
        Spectrum::new(self.config.clone(), self.amplitudes.clone(), phases)
    }

    pub fn evaluate(&self, m: u64) -> f64 {
        rope_product(self, m)
    }

    pub fn series(&self, m_lo: u64, m_hi: u64) -> Result<Vec<f64>> {
        rope_product_series(self, m_lo, m_hi)
    }
}

/// `S(m)`, summed over ascending `n` with compensation.
pub fn rope_product(s: &Spectrum, m: u64) -> f64 {
    let m = m as f64;
    let mut acc = CompensatedSum::new();
    for ((&a, &phi), &w) in s.amplitudes.iter().zip(&s.phases).zip(s.config.frequencies()) {
        acc.add(a * (m * w + phi).cos());
    }
    acc.value()
}

/// `[S(m_lo), ..., S(m_hi - 1)]`. Requires `m_lo < m_hi <= M`.
pub fn rope_product_series(s: &Spectrum, m_lo: u64, m_hi: u64) -> Result<Vec<f64>> {
    let limit = s.config.context_limit();
    if m_lo >= m_hi || m_hi > limit {
        return Err(ProbeError::range(format!("series bounds [{m_lo}, {m_hi}) must satisfy lo < hi <= M = {limit}")));
    }
    Ok(series_unchecked(s, m_lo, m_hi))
}

/// Series evaluation without the context-limit check; values are computed
/// independently per `m`, so the parallel split does not affect results.
pub(crate) fn series_unchecked(s: &Spectrum, m_lo: u64, m_hi: u64) -> Vec<f64> {
    use rayon::prelude::*;
    (m_lo..m_hi).into_par_iter().map(|m| rope_product(s, m)).collect()
}

/// Raw query and key vectors of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct QKVectors {
    config: RopeConfig,
    q: Vec<f64>,
    k: Vec<f64>,
}

impl QKVectors {
    pub fn new(config: RopeConfig, q: Vec<f64>, k: Vec<f64>) -> Result<Self> {
        let d = config.head_dim();
        if q.len() != d || k.len() != d {
            return Err(ProbeError::input(format!(
                "query/key must have d = {d} entries, got {} and {}",
                q.len(),
                k.len()
            )));
        }
        if q.iter().chain(&k).any(|x| !x.is_finite()) {
            return Err(ProbeError::input("query/key entries must be finite"));
        }
        Ok(Self { config, q, k })
    }

    pub fn config(&self) -> &RopeConfig {
        &self.config
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    /// Plain dot product, no rotation.
    pub fn dot(&self) -> f64 {
        compensated_sum(self.q.iter().zip(&self.k).map(|(a, b)| a * b))
    }
}

/// Amplitudes and phases of a query/key pair.
pub fn spectrum_from_qk(v: &QKVectors) -> Result<Spectrum> {
    let h = v.config.half_dim();
    let mut amplitudes = Vec::with_capacity(h);
    let mut phases = Vec::with_capacity(h);
    for n in 0..h {
        let (q0, q1) = (v.q[2 * n], v.q[2 * n + 1]);
        let (k0, k1) = (v.k[2 * n], v.k[2 * n + 1]);
        amplitudes.push(((q0 * q0 + q1 * q1) * (k0 * k0 + k1 * k1)).sqrt());
        phases.push((q0 * k1 - q1 * k0).atan2(q0 * k0 + q1 * k1));
    }
    Spectrum::new(v.config.clone(), amplitudes, phases)
}

/// Applies the block rotation `R_{Theta,pos}` to `x`.
fn rotate(x: &[f64], pos: u64, frequencies: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for (n, &w) in frequencies.iter().enumerate() {
        let (sin, cos) = (pos as f64 * w).sin_cos();
        let (x0, x1) = (x[2 * n], x[2 * n + 1]);
        out.push(cos * x0 - sin * x1);
        out.push(sin * x0 + cos * x1);
    }
    out
}

/// Score of the query rotated to `query_pos` against the key rotated to
/// `key_pos`, computed with explicit 2x2 block rotations. Only
/// `key_pos - query_pos` matters: the result is `q^T R_{key_pos - query_pos} k`.
pub fn rotated_dot(v: &QKVectors, query_pos: u64, key_pos: u64) -> f64 {
    let freqs = v.config.frequencies();
    let q = rotate(&v.q, query_pos, freqs);
    let k = rotate(&v.k, key_pos, freqs);
    compensated_sum(q.iter().zip(&k).map(|(a, b)| a * b))
}

/// `q^T R_{Theta,m} k` via explicit rotations; equals `S(m)` of
/// [`spectrum_from_qk`] without going through amplitudes and phases.
pub fn rotate_apply(v: &QKVectors, m: u64) -> f64 {
    rotated_dot(v, 0, m)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn exact_integer_root(value: u64, e: u32) -> Option<u64> {
    let guess = (value as f64).powf(1.0 / e as f64).round() as u64;
    (guess.saturating_sub(1)..=guess + 1).find(|&r| r >= 2 && r.checked_pow(e) == Some(value))
}

/// Largest `g` such that `base` is a perfect `g`-th power (1 if none).
pub fn perfect_power_exponent(base: u64) -> u32 {
    if base < 4 {
        return 1;
    }
    (2..=63).rev().find(|&e| exact_integer_root(base, e).is_some()).unwrap_or(1)
}

/// Size `k = h / gcd(g, h)` of the groups in which `theta^n` can be rationally
/// dependent, `g` being the perfect-power exponent of the base. `k = h` means
/// no low-degree dependence; non-integer bases are treated as independent.
pub fn dependence_degree(c: &RopeConfig) -> usize {
    let h = c.half_dim() as u64;
    let b = c.base();
    if b.fract() != 0.0 || b >= 9.2e18 {
        return c.half_dim();
    }
    let g = perfect_power_exponent(b as u64) as u64;
    (h / gcd(g, h)) as usize
}
