//! Benchmark suite for invariant-risk-minimization training objectives,
//! evaluated through per-environment calibration metrics and their
//! cross-environment variance.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`]: dense `f64` matrices (the only numeric carrier)
//! - [`nn`]: MLP forward/backward with caller-supplied output-gradient seeds,
//!   cross-entropy, Adam
//! - [`objectives`]: ERM plus five invariance-seeking objectives
//!   (IRMv1, IB-IRM, PAIR, IRM Game, BIRM) as (value, logit-seed) pairs
//! - [`datasets`]: IDX ingestion and environment-shifted dataset synthesis
//!   (color shift, rotation shift, two-bit surrogate)
//! - [`calibration`]: accuracy / ECE / ACE / NLL and cross-environment
//!   variance reports
//! - [`harness`]: declarative experiment runs, grid search, early-stop
//!   threshold search, result emission

pub mod calibration;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod objectives;

pub use error::{Error, Result};
