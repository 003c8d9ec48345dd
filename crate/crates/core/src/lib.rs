//! Kernel similarities for multivariate time series with missing values,
//! and classifiers that consume them.
//!
//! Two ensemble kernels are provided: [`lps`] (bag of regression-tree
//! leaves over sliding segments) and [`tck`] (posterior inner products of
//! Gaussian mixtures fitted on random views). Both score unseen series
//! against the training set, producing the `K_tr` / `K_te` matrices used by
//! the [`classifiers`] and the [`eval`] harness.

pub mod classifiers;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod io;
pub mod kernel_matrix;
pub mod lps;
pub mod mts;
pub mod seed;
pub mod synthetic;
pub mod tck;

pub use error::{Error, Result};
pub use kernel_matrix::{KernelMatrix, KernelMethod};
pub use mts::{Label, LabelNames, Mts, MtsDataset, Role};

/// Version string embedded in every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
