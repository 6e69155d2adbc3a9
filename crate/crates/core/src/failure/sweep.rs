use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_failure, smallest_context_for_inversion, FailureMode, FailureReport, FailureRequest};
use crate::error::{ProbeError, Result};
use crate::precision::DTypeFormat;
use crate::rope::{RopeConfig, ThresholdMode};
use crate::sampling::{derive_seed, random_spectrum, stream_rng, SpectrumKind};

fn default_dtypes() -> Vec<String> {
    vec!["bf16".into()]
}

fn default_modes() -> Vec<FailureMode> {
    FailureMode::ALL.to_vec()
}

fn default_threshold_mode() -> ThresholdMode {
    ThresholdMode::Theory
}

/// Parameter grid; read from JSON such as
/// `{"h": 64, "M": [1024, 4096], "B": [1e4, 1e5], "dtypes": ["bf16"], "seed": 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(rename = "h")]
    pub half_dim: usize,
    #[serde(rename = "M")]
    pub contexts: Vec<u64>,
    #[serde(rename = "B")]
    pub bases: Vec<f64>,
    /// Names (`bf16`, `fp16`, ...) or `"E,F"` bit layouts.
    #[serde(default = "default_dtypes")]
    pub dtypes: Vec<String>,
    #[serde(default = "default_modes")]
    pub modes: Vec<FailureMode>,
    #[serde(default = "default_threshold_mode")]
    pub threshold_mode: ThresholdMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mc_samples: u64,
    /// Distribution of the key spectra drawn per cell. With `uniform`, the
    /// second key of two-key modes gets random phases.
    #[serde(default)]
    pub spectrum: SpectrumKind,
    /// Worker threads; absent means the global rayon pool.
    #[serde(default)]
    pub workers: Option<usize>,
    /// When set, also report the smallest `M` per base whose
    /// position-inversion lower bound reaches this value.
    #[serde(default)]
    pub inversion_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: u64,
    pub half_dim: usize,
    pub context: u64,
    pub base: f64,
    pub dtype: String,
    pub mode: FailureMode,
}

/// One grid cell: a report, or the reason the cell could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub report: Option<FailureReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallestContext {
    pub base: f64,
    pub threshold: f64,
    pub context: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub smallest_context: Vec<SmallestContext>,
}

impl SweepGrid {
    /// Cells ordered by base, then context, dtype and mode, as listed.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &base in &self.bases {
            for &context in &self.contexts {
                for dtype in &self.dtypes {
                    for &mode in &self.modes {
                        cells.push(SweepCell {
                            index: cells.len() as u64,
                            half_dim: self.half_dim,
                            context,
                            base,
                            dtype: dtype.clone(),
                            mode,
                        });
                    }
                }
            }
        }
        cells
    }

    /// Request evaluated for `cell`; its seed is derived from the master seed.
    pub fn request(&self, cell: &SweepCell) -> Result<FailureRequest> {
        Ok(FailureRequest {
            mode: cell.mode,
            context: cell.context,
            dtype: cell.dtype.parse::<DTypeFormat>()?,
            threshold_mode: self.threshold_mode,
            seed: derive_seed(self.seed, cell.index),
            mc_samples: self.mc_samples,
            baseline: 1,
        })
    }
}

fn run_cell(grid: &SweepGrid, cell: &SweepCell) -> Result<FailureReport> {
    let req = grid.request(cell)?;
    let config = RopeConfig::new(cell.half_dim, cell.base, cell.context)?;
    // stream 0 of the cell seed is reserved for Monte-Carlo sampling
    let mut rng = stream_rng(req.seed, 1);
    let key = random_spectrum(&config, grid.spectrum, &mut rng)?;
    let other = if cell.mode.needs_second_key() {
        let kind = match grid.spectrum {
            SpectrumKind::Uniform => SpectrumKind::RandomPhase,
            k => k,
        };
        Some(random_spectrum(&config, kind, &mut rng)?)
    } else {
        None
    };
    run_failure(&req, &key, other.as_ref())
}

/// Evaluates every cell. Cell failures are recorded in the row, not
/// propagated; the output does not depend on the worker count.
pub fn sweep(grid: &SweepGrid) -> Result<SweepOutput> {
    if grid.contexts.is_empty() || grid.bases.is_empty() || grid.dtypes.is_empty() || grid.modes.is_empty() {
        return Err(ProbeError::input("sweep grid has an empty axis"));
    }
    if grid.workers == Some(0) {
        return Err(ProbeError::input("workers must be >= 1"));
    }
    let cells = grid.cells();
    let evaluate = || -> Vec<SweepRow> {
        cells
            .par_iter()
            .map(|cell| {
                let (report, error) = match run_cell(grid, cell) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                SweepRow { cell: cell.clone(), report, error }
            })
            .collect()
    };
    let rows = match grid.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ProbeError::input(format!("cannot start {n} workers: {e}")))?
            .install(evaluate),
        None => evaluate(),
    };
    let smallest_context = match grid.inversion_threshold {
        None => Vec::new(),
        Some(threshold) => grid
            .bases
            .iter()
            .map(|&base| {
                let found = smallest_context_for_inversion(grid.half_dim, base, threshold);
                SmallestContext {
                    base,
                    threshold,
                    context: found.as_ref().ok().copied(),
                    error: found.err().map(|e| e.to_string()),
                }
            })
            .collect(),
    };
    Ok(SweepOutput { rows, smallest_context })
}
