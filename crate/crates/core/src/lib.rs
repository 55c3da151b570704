//! Direct data-driven output prediction for linear time-invariant systems.
//!
//! A signal matrix of recorded input/output windows stands in for the
//! model. From it the crate computes output predictions (pseudo-inverse,
//! subspace, signal-matrix-model, Wasserstein and minimum-MSE predictors),
//! Gaussian confidence ellipsoids for those predictions, and Monte Carlo
//! campaigns that check both against ground-truth simulation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lti;
pub mod montecarlo;
pub mod predictors;
pub mod signal;
pub mod uncertainty;

pub use nalgebra;

pub use error::{Error, Result};
pub use lti::{StateSpaceModel, Trajectory};
pub use predictors::{GammaChoice, GammaSource, NoiseModel, PredictionProblem, PredictionResult, PredictorKind};
pub use signal::{Construction, SignalMatrix};
pub use uncertainty::{ConfidenceRegion, DofPolicy};
