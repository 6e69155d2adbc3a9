//! Seeded random streams and random spectra.
//!
//! Every random draw goes through [`stream_rng`]: a ChaCha8 generator keyed
//! by `seed_from_u64(seed)` (PCG32 seed expansion, as specified by
//! `rand_core`) with the ChaCha stream id set to `stream`. Both steps are
//! fixed, platform-independent algorithms, so sweeps and Monte-Carlo runs
//! are reproducible bit for bit given `(seed, stream)`.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rope::{spectrum_from_qk, QKVectors, RopeConfig, Spectrum};

/// Seed of sub-task `index` under `master`: the SplitMix64 output for state
/// `master + (index + 1) * 0x9E3779B97F4A7C15`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// How random spectra are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumKind {
    /// `a_n = 1`, `phi_n = 0`.
    #[default]
    Uniform,
    /// `a_n = 1`, `phi_n ~ U[0, 2pi)`.
    RandomPhase,
    /// Amplitudes and phases of independent standard Gaussian `q` and `k`.
    RandomQk,
}

impl std::str::FromStr for SpectrumKind {
    type Err = crate::ProbeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SpectrumKind::Uniform),
            "random-phase" => Ok(SpectrumKind::RandomPhase),
            "random-qk" => Ok(SpectrumKind::RandomQk),
            other => Err(crate::ProbeError::input(format!("unknown spectrum kind `{other}`"))),
        }
    }
}

pub fn random_phase_spectrum<R: Rng + ?Sized>(config: &RopeConfig, rng: &mut R) -> Result<Spectrum> {
    let h = config.half_dim();
    let phases = (0..h).map(|_| rng.random_range(0.0..TAU)).collect();
    Spectrum::new(config.clone(), vec![1.0; h], phases)
}

pub fn random_qk<R: Rng + ?Sized>(config: &RopeConfig, rng: &mut R) -> Result<QKVectors> {
    let d = config.head_dim();
    let q = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let k = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    QKVectors::new(config.clone(), q, k)
}

pub fn random_spectrum<R: Rng + ?Sized>(config: &RopeConfig, kind: SpectrumKind, rng: &mut R) -> Result<Spectrum> {
    match kind {
        SpectrumKind::Uniform => Spectrum::uniform(config.clone(), 1.0),
        SpectrumKind::RandomPhase => random_phase_spectrum(config, rng),
        SpectrumKind::RandomQk => spectrum_from_qk(&random_qk(config, rng)?),
    }
}
