//! Complex subband phase-motion network for automatic modulation
//! classification: signal synthesis, the complex filter-bank front end,
//! phase-motion features, the recurrent classifier with hand-written
//! gradients, training and evaluation.

// `!(x > 0.0)` is used on purpose so that NaN fails the same checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod fsutil;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod par;
pub mod phase_motion;
pub mod scalar;
pub mod signal;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use scalar::Scalar;
