//! Multivariate time-series forecasting in an orthogonally decorrelated
//! feature domain.
//!
//! The pipeline estimates the temporal Pearson correlation matrix of the
//! training split, eigendecomposes it into an orthogonal basis, projects
//! lookback windows onto that basis, and runs a linear network whose
//! cross-variate mixing weight is kept positive and row-stochastic
//! (softplus followed by row-wise L1 normalization). All gradients are
//! hand-rolled reverse mode and validated against central finite
//! differences.
//!
//! The numeric core is generic over the scalar type ([`Scalar`], `f32` or
//! `f64`). Default type parameters instantiate everything at `f64`, which
//! is what the training pipeline and the tolerance-bearing guarantees
//! assume.

#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod train;
pub mod transform;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use linalg::{matmul, rank_report, symmetric_eigendecomp, EigenDecomposition, Matrix, Tensor3};

// Concrete f64 aliases for the main pipeline types.
pub type Matrix64 = linalg::Matrix<f64>;
pub type Tensor64 = linalg::Tensor3<f64>;
pub type Dataset64 = data::TimeSeriesDataset<f64>;
pub type Windows64 = data::WindowBatch<f64>;
pub type Basis64 = transform::OrthoBasis<f64>;
pub type Params64 = model::OLinearParams<f64>;
pub type Grads64 = model::GradientSet<f64>;
pub type Bases64 = train::ModelBases<f64>;
