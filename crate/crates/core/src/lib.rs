//! Poisson inverse problems under MSE: closed-form estimators and exact
//! risk in the diagonal model, plus a desk-scale 2D parallel-beam CT
//! benchmark that compares Poisson MAP against Gaussian-surrogate solvers.
//!
//! Module map:
//! - [`poisson_stats`]: pmf, sampling and exact series expectations.
//! - [`diag_model`]: per-mode estimators, exact MSE and ratio predictions.
//! - [`tomo`]: geometry, Joseph projector, phantoms, dose scaling, FBP.
//! - [`solvers`]: OSL MAP-EM, projected Barzilai-Borwein, tau tuning.
//! - [`experiments`]: declarative benchmark runs producing CSV tables.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diag_model;
pub mod error;
pub mod experiments;
pub mod poisson_stats;
pub mod solvers;
pub mod tomo;

pub use diag_model::{DiagonalProblem, Estimator, ModeMseReport};
pub use error::{Error, Result};
pub use poisson_stats::{PoissonDist, SeriesTolerance};
pub use solvers::{ObjectiveSpec, ReconstructionResult, SolveConfig, WeightKind};
pub use tomo::{Image, Projector, ScanGeometry, Sinogram, SinogramKind};
