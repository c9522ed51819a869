//! Offline change-point detection for multivariate time series whose segments
//! lie in different low-dimensional linear subspaces.
//!
//! Each candidate split is scored by fitting a nuclear-norm regularised low-rank
//! factorisation to both sides ([`factorization`]); binary segmentation with a
//! penalised acceptance rule finds multiple changes ([`detection`]). The
//! regularisation weight, penalty scale and subspace dimension can be chosen
//! from the data ([`tuning`]). [`simulation`] and [`evaluation`] provide the
//! synthetic benchmark.

pub mod detection;
pub mod error;
pub mod evaluation;
pub mod factorization;
pub mod io;
mod linalg;
pub mod pipeline;
pub mod seed;
pub mod series;
pub mod simulation;
pub mod tuning;

pub use detection::{DetectionConfig, Detector, SegmentationResult};
pub use error::{Error, Result};
pub use factorization::{factorize, FactorizationResult, SegmentLoss, SolverOptions};
pub use series::TimeSeriesMatrix;
