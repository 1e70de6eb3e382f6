//! Correlation alignment for unsupervised domain adaptation on the manifold of
//! symmetric positive definite matrices.
//!
//! * [`spd`]: the SPD type, symmetric eigendecomposition and spectral matrix functions.
//! * [`batch`]: feature batches and regularized covariance estimation.
//! * [`metrics`]: Euclidean, Log-Euclidean, affine-invariant, Jeffrey and Stein
//!   dissimilarities, plus the CORAL and Log-Euclidean alignment losses.
//! * [`grad`]: analytic gradients of both losses and a finite-difference checker.
//! * [`coral`]: the closed-form whitening/recoloring transform.
//! * [`trainer`]: a small MLP trained with an optional covariance-alignment term.
//! * [`bench`]: synthetic domain-shift benchmarks and experiment reports.

pub mod batch;
pub mod bench;
pub mod coral;
pub mod error;
pub mod grad;
pub mod metrics;
pub mod random;
pub mod spd;
pub mod trainer;

pub use batch::{batch_covariance, FeatureBatch, DEFAULT_GAMMA};
pub use error::{ErrorKind, Result, SpdError};
pub use spd::{matrix_exp, matrix_log, matrix_power, sym_eig, symmetrize, EigenDecomposition, SpdMatrix};
