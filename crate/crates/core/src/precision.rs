//! Reduced-precision float emulation and the effective score resolution.
//!
//! Rounding works on the exact integer significand of the `f64` input, so a
//! value is rounded once, directly into the target format (no double
//! rounding through `f32`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::rope::RopeConfig;

/// A binary floating-point format with `exponent_bits` exponent bits and
/// `fraction_bits` explicit fraction bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DTypeFormat {
    pub name: String,
    pub exponent_bits: u32,
    pub fraction_bits: u32,
}

impl DTypeFormat {
    pub fn new(name: impl Into<String>, exponent_bits: u32, fraction_bits: u32) -> Result<Self> {
        if !(2..=11).contains(&exponent_bits) {
            return Err(ProbeError::input(format!("exponent bits must be in 2..=11, got {exponent_bits}")));
        }
        if !(1..=52).contains(&fraction_bits) {
            return Err(ProbeError::input(format!("fraction bits must be in 1..=52, got {fraction_bits}")));
        }
        Ok(Self { name: name.into(), exponent_bits, fraction_bits })
    }

    pub fn bf16() -> Self {
        Self { name: "bf16".into(), exponent_bits: 8, fraction_bits: 7 }
    }

    pub fn fp16() -> Self {
        Self { name: "fp16".into(), exponent_bits: 5, fraction_bits: 10 }
    }

    pub fn fp32() -> Self {
        Self { name: "fp32".into(), exponent_bits: 8, fraction_bits: 23 }
    }

    pub fn fp64() -> Self {
        Self { name: "fp64".into(), exponent_bits: 11, fraction_bits: 52 }
    }

    pub fn builtins() -> [Self; 4] {
        [Self::bf16(), Self::fp16(), Self::fp32(), Self::fp64()]
    }

    /// Custom format from an `"E,F"` pair.
    pub fn from_bits_spec(spec: &str) -> Result<Self> {
        let (e, f) =
            spec.split_once(',').ok_or_else(|| ProbeError::input(format!("expected E,F bit counts, got `{spec}`")))?;
        let parse = |s: &str| {
            s.trim().parse::<u32>().map_err(|_| ProbeError::input(format!("bad bit count `{s}` in `{spec}`")))
        };
        let (e, f) = (parse(e)?, parse(f)?);
        DTypeFormat::new(format!("e{e}f{f}"), e, f)
    }

    fn max_exponent(&self) -> i32 {
        (1 << (self.exponent_bits - 1)) - 1
    }

    fn min_exponent(&self) -> i32 {
        1 - self.max_exponent()
    }

    /// Largest finite value, `(2 - 2^-f) * 2^emax`.
    pub fn max_finite(&self) -> f64 {
        (2.0 - pow2(-(self.fraction_bits as i32))) * pow2(self.max_exponent())
    }

    /// Smallest positive normal value.
    pub fn min_positive_normal(&self) -> f64 {
        pow2(self.min_exponent())
    }

    /// Rounds `x` to the nearest value of this format, ties to even.
    pub fn round(&self, x: f64) -> f64 {
        round_to_dtype(x, self)
    }
}

impl fmt::Display for DTypeFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for DTypeFormat {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bf16" | "bfloat16" => Ok(Self::bf16()),
            "fp16" | "f16" | "float16" | "half" => Ok(Self::fp16()),
            "fp32" | "f32" | "float32" => Ok(Self::fp32()),
            "fp64" | "f64" | "float64" => Ok(Self::fp64()),
            other if other.contains(',') => Self::from_bits_spec(other),
            other => Err(ProbeError::input(format!("unknown dtype `{other}`"))),
        }
    }
}

/// `2^k` for `k` in the `f64` range, including subnormal powers.
fn pow2(k: i32) -> f64 {
    debug_assert!((-1074..=1023).contains(&k));
    if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (k + 1074))
    }
}

/// Round-to-nearest-even of `x` into `t`, returned as the exactly equal `f64`.
///
/// Gradual underflow is emulated; magnitudes that round past the largest
/// finite value become infinite. NaN and infinities pass through.
pub fn round_to_dtype(x: f64, t: &DTypeFormat) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let biased = ((bits >> 52) & 0x7ff) as i32;
    let fraction = bits & ((1u64 << 52) - 1);
    // |x| = significand * 2^scale exactly
    let (significand, scale) = if biased == 0 { (fraction, -1074) } else { (fraction | (1u64 << 52), biased - 1075) };
    let exponent = scale + 63 - significand.leading_zeros() as i32;

    let quantum = exponent.max(t.min_exponent()) - t.fraction_bits as i32;
    let shift = quantum - scale;
    let units: u64 = if shift <= 0 {
        significand << (-shift)
    } else if shift > 64 {
        0
    } else {
        let wide = significand as u128;
        let kept = (wide >> shift) as u64;
        let rem = wide & ((1u128 << shift) - 1);
        let half = 1u128 << (shift - 1);
        if rem > half || (rem == half && kept & 1 == 1) {
            kept + 1
        } else {
            kept
        }
    };
    let magnitude = units as f64 * pow2(quantum);
    let magnitude = if magnitude > t.max_finite() { f64::INFINITY } else { magnitude };
    if negative {
        -magnitude
    } else {
        magnitude
    }
}

/// Hashable identity of a rounded score. `-0.0` and `0.0` compare equal as
/// numbers, so they share a key.
pub(crate) fn rounded_key(x: f64, t: &DTypeFormat) -> u64 {
    let r = round_to_dtype(x, t);
    if r == 0.0 {
        0
    } else {
        r.to_bits()
    }
}

/// Inputs of the effective resolution `eps = c * 2^-f * max(sqrt(d), sum a_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonContext {
    head_dim: usize,
    dtype: DTypeFormat,
    amplitude_sum: f64,
    constant: f64,
}

impl EpsilonContext {
    pub fn new(config: &RopeConfig, dtype: DTypeFormat, amplitude_sum: f64) -> Result<Self> {
        Self::from_head_dim(config.head_dim(), dtype, amplitude_sum)
    }

    /// For closed-form tables whose context lengths need not form a valid
    /// [`RopeConfig`].
    pub fn from_head_dim(head_dim: usize, dtype: DTypeFormat, amplitude_sum: f64) -> Result<Self> {
        if head_dim == 0 {
            return Err(ProbeError::input("head dimension must be positive"));
        }
        if !(amplitude_sum >= 0.0) || !amplitude_sum.is_finite() {
            return Err(ProbeError::input(format!("amplitude sum must be finite and >= 0, got {amplitude_sum}")));
        }
        Ok(Self { head_dim, dtype, amplitude_sum, constant: 1.0 })
    }

    /// Replaces the leading constant (default 1).
    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    pub fn dtype(&self) -> &DTypeFormat {
        &self.dtype
    }

    pub fn amplitude_sum(&self) -> f64 {
        self.amplitude_sum
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }
}

/// Smallest score difference that survives rounding of the dot product and
/// of the softmax output.
pub fn effective_epsilon(ctx: &EpsilonContext) -> f64 {
    let scale = (ctx.head_dim as f64).sqrt().max(ctx.amplitude_sum);
    ctx.constant * pow2(-(ctx.dtype.fraction_bits as i32)) * scale
}
