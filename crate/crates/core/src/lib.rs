//! Numerical toolkit for failure modes of rotary position embeddings.
//!
//! A query/key pair is reduced to a [`Spectrum`] of per-block amplitudes and
//! phases; everything else (normal approximations, rounding effects,
//! failure-mode probabilities and exact enumerations) is computed from it.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
pub mod failure;
pub mod io;
pub mod precision;
pub mod rope;
pub mod sampling;
pub mod stats;
mod sum;

pub use error::{ProbeError, Result};
pub use failure::{FailureMode, FailureReport, FailureRequest, PairList};
pub use precision::{effective_epsilon, round_to_dtype, DTypeFormat, EpsilonContext};
pub use rope::{rope_product, rope_product_series, QKVectors, RopeConfig, Spectrum, ThresholdMode};
pub use stats::{NormalApprox, WindowStats};
