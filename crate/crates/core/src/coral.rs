//! Closed-form correlation alignment: whiten with `C_S^{-1/2}`, recolor with `C_T^{1/2}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::batch::{batch_covariance, FeatureBatch};
use crate::error::{Result, SpdError};
use crate::metrics::{dist_affine_invariant, dist_euclidean, dist_log_euclidean, div_jeffrey};
use crate::spd::{check_same_dim, matrix_power, SpdMatrix};

/// The linear map `A*` applied to source rows (`x ↦ x A*`).
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTransform {
    matrix: DMatrix<f64>,
    gamma: Option<f64>,
}

impl AlignmentTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            gamma: None,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Regularizer that was added to both covariances, when known.
    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    /// `A*ᵀ C A*`.
    pub fn transport(&self, c: &SpdMatrix) -> Result<SpdMatrix> {
        check_same_dim(c.dim(), self.dim(), "transform vs covariance")?;
        SpdMatrix::from_symmetric_part(&(self.matrix.transpose() * c.as_matrix() * &self.matrix))
    }
}

/// `A* = C_S^{-1/2} C_T^{1/2}`, so that `A*ᵀ C_S A* = C_T`.
///
/// Both inputs must already be regularized (full rank).
pub fn coral_transform(c_s: &SpdMatrix, c_t: &SpdMatrix) -> Result<AlignmentTransform> {
    check_same_dim(c_s.dim(), c_t.dim(), "CORAL covariances")?;
    let whiten = matrix_power(c_s, -0.5)?;
    let recolor = matrix_power(c_t, 0.5)?;
    Ok(AlignmentTransform {
        matrix: whiten.as_matrix() * recolor.as_matrix(),
        gamma: None,
    })
}

/// Estimates both covariances with regularizer `gamma` and fits the transform.
pub fn fit_coral(source: &FeatureBatch, target: &FeatureBatch, gamma: f64) -> Result<(AlignmentTransform, SpdMatrix, SpdMatrix)> {
    check_same_dim(source.dim(), target.dim(), "source vs target features")?;
    let c_s = batch_covariance(source, gamma)?;
    let c_t = batch_covariance(target, gamma)?;
    let mut t = coral_transform(&c_s, &c_t)?;
    t.gamma = Some(gamma);
    Ok((t, c_s, c_t))
}

/// Rows multiplied on the right by `A*`; labels unchanged.
pub fn apply_alignment(t: &AlignmentTransform, batch: &FeatureBatch) -> Result<FeatureBatch> {
    if batch.dim() != t.dim() {
        return Err(SpdError::Dimension(format!(
            "batch has {} features, transform is {}x{}",
            batch.dim(),
            t.dim(),
            t.dim()
        )));
    }
    batch.map_rows(batch.rows() * t.matrix())
}

/// Four dissimilarities between a pair of covariances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissimilaritySet {
    pub euclidean: f64,
    pub log_euclidean: f64,
    pub affine_invariant: f64,
    pub jeffrey: f64,
}

impl DissimilaritySet {
    pub fn between(a: &SpdMatrix, b: &SpdMatrix) -> Result<Self> {
        Ok(Self {
            euclidean: dist_euclidean(a, b)?,
            log_euclidean: dist_log_euclidean(a, b)?,
            affine_invariant: dist_affine_invariant(a, b)?,
            jeffrey: div_jeffrey(a, b)?,
        })
    }

    pub fn max(&self) -> f64 {
        self.euclidean
            .max(self.log_euclidean)
            .max(self.affine_invariant)
            .max(self.jeffrey)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub before: DissimilaritySet,
    pub after: DissimilaritySet,
}

impl AlignmentReport {
    pub fn is_aligned(&self, tol: f64) -> bool {
        self.after.max() < tol
    }
}

/// Dissimilarities of `(C_S, C_T)` and of `(A*ᵀ C_S A*, C_T)`.
pub fn verify_alignment(c_s: &SpdMatrix, c_t: &SpdMatrix, t: &AlignmentTransform) -> Result<AlignmentReport> {
    check_same_dim(c_s.dim(), c_t.dim(), "CORAL covariances")?;
    let moved = t.transport(c_s)?;
    Ok(AlignmentReport {
        before: DissimilaritySet::between(c_s, c_t)?,
        after: DissimilaritySet::between(&moved, c_t)?,
    })
}
