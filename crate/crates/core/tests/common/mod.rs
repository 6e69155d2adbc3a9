//! Oracles shared by the integration suites.

#![allow(dead_code)]

use half::{bf16, f16};
use rope_probe::DTypeFormat;

/// Nearest of the representable neighbours of `approx`, ties to the even
/// encoding. `half`'s f64 conversion rounds through f32 and can land on the
/// wrong side of a tie, so it only supplies the starting point.
fn nearest(x: f64, approx: u16, decode: impl Fn(u16) -> f64) -> f64 {
    [approx.wrapping_sub(1), approx, approx.wrapping_add(1)]
        .into_iter()
        .map(|b| (b, decode(b)))
        .filter(|(_, v)| v.is_finite())
        .min_by(|(b1, v1), (b2, v2)| (x - v1).abs().total_cmp(&(x - v2).abs()).then((b1 & 1).cmp(&(b2 & 1))))
        .map(|(_, v)| v)
        .unwrap()
}

/// Round-to-nearest-even into a builtin format, independent of the crate's
/// bit manipulation. Valid for magnitudes below each format's maximum.
pub fn oracle_round(x: f64, dtype: &DTypeFormat) -> f64 {
    match dtype.name.as_str() {
        "bf16" => nearest(x, bf16::from_f64(x).to_bits(), |b| bf16::from_bits(b).to_f64()),
        "fp16" => nearest(x, f16::from_f64(x).to_bits(), |b| f16::from_bits(b).to_f64()),
        "fp32" => x as f32 as f64,
        "fp64" => x,
        other => panic!("no oracle for {other}"),
    }
}

/// Running fraction of set flags.
pub fn cumulative(flags: &[bool]) -> Vec<f64> {
    let mut hits = 0usize;
    flags
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            hits += usize::from(f);
            hits as f64 / (i + 1) as f64
        })
        .collect()
}

pub fn positions(flags: &[bool]) -> Vec<u64> {
    flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i as u64).collect()
}

/// All `(i, j)`, `i < j`, with equal rounded values in `a` (and in `b`, when given).
pub fn brute_pairs(a: &[f64], b: Option<&[f64]>) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            if a[i] == a[j] && b.is_none_or(|b| b[i] == b[j]) {
                out.push((i as u64, j as u64));
            }
        }
    }
    out
}
