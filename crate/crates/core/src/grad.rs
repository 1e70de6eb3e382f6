//! Hand-derived gradients of the alignment losses.
//!
//! The matrix-log backward pass uses the Daleckiĭ–Krein formula: for
//! `A = U diag(λ) Uᵀ` and a symmetric upstream `G = ∂L/∂log(A)`,
//!
//! ```text
//! ∂L/∂A = U (K ∘ (Uᵀ G U)) Uᵀ,   K_ij = (log λ_i − log λ_j) / (λ_i − λ_j),   K_ii = 1/λ_i
//! ```
//!
//! Gradients w.r.t. raw features follow from `C = D_cᵀ D_c / (L−1) + γI`, which
//! is quadratic in the centered batch `D_c`.

use nalgebra::DMatrix;

use crate::batch::FeatureBatch;
use crate::error::{Result, SpdError};
use crate::metrics::{loss_coral, loss_log};
use crate::random::{random_spd, rng};
use crate::spd::{check_same_dim, matrix_log, symmetrize, symmetrize_unchecked, SpdMatrix};

/// Relative eigenvalue gap under which the Loewner entry uses its limit value.
pub const LOEWNER_DEGENERATE_TOL: f64 = 1e-10;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// `∂L/∂C`, a symmetric `d × d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientWrtCov(DMatrix<f64>);

impl GradientWrtCov {
    /// Symmetrizes `m`; the losses only see the symmetric part of a covariance.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        Ok(Self(symmetrize(m)?))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(&self.0 * s)
    }
}

/// `∂L/∂D`, an `L × d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientWrtFeatures(DMatrix<f64>);

impl GradientWrtFeatures {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Gradients of an alignment loss w.r.t. both covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct CovGradients {
    pub source: GradientWrtCov,
    pub target: GradientWrtCov,
}

/// `∂L_CORAL/∂C_S = (C_S − C_T) / (2d²)`; the target gradient is its negation.
pub fn grad_loss_coral_wrt_cov(c_s: &SpdMatrix, c_t: &SpdMatrix) -> Result<GradientWrtCov> {
    check_same_dim(c_s.dim(), c_t.dim(), "CORAL gradient operands")?;
    let d = c_s.dim() as f64;
    Ok(GradientWrtCov(
        (c_s.as_matrix() - c_t.as_matrix()) / (2.0 * d * d),
    ))
}

pub fn grad_loss_coral_both(c_s: &SpdMatrix, c_t: &SpdMatrix) -> Result<CovGradients> {
    let source = grad_loss_coral_wrt_cov(c_s, c_t)?;
    let target = source.scaled(-1.0);
    Ok(CovGradients { source, target })
}

/// Divided differences of `log` over the spectrum.
fn loewner_log(values: &[f64]) -> DMatrix<f64> {
    let n = values.len();
    DMatrix::from_fn(n, n, |i, j| {
        let (li, lj) = (values[i], values[j]);
        let gap = li - lj;
        if gap.abs() < LOEWNER_DEGENERATE_TOL * li.max(lj) {
            2.0 / (li + lj)
        } else {
            (gap / lj).ln_1p() / gap
        }
    })
}

/// Pulls `upstream = ∂L/∂log(A)` back to `∂L/∂A`.
pub fn grad_matrix_log(a: &SpdMatrix, upstream: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if upstream.nrows() != a.dim() || upstream.ncols() != a.dim() {
        return Err(SpdError::Dimension(format!(
            "upstream gradient is {}x{}, matrix is {n}x{n}",
            upstream.nrows(),
            upstream.ncols(),
            n = a.dim()
        )));
    }
    let g = symmetrize_unchecked(upstream);
    let eig = a.eigen();
    let u = eig.vectors();
    let k = loewner_log(eig.values().as_slice());
    let rotated = u.transpose() * g * u;
    let inner = rotated.component_mul(&k);
    Ok(symmetrize_unchecked(&(u * inner * u.transpose())))
}

/// `∂L_log/∂C_S` via the matrix-log pullback of `(log C_S − log C_T) / (2d²)`.
pub fn grad_loss_log_wrt_cov(c_s: &SpdMatrix, c_t: &SpdMatrix) -> Result<GradientWrtCov> {
    Ok(grad_loss_log_both(c_s, c_t)?.source)
}

pub fn grad_loss_log_both(c_s: &SpdMatrix, c_t: &SpdMatrix) -> Result<CovGradients> {
    check_same_dim(c_s.dim(), c_t.dim(), "log-loss gradient operands")?;
    let d = c_s.dim() as f64;
    let upstream = (matrix_log(c_s) - matrix_log(c_t)) / (2.0 * d * d);
    let source = GradientWrtCov(grad_matrix_log(c_s, &upstream)?);
    let target = GradientWrtCov(grad_matrix_log(c_t, &(-upstream))?);
    Ok(CovGradients { source, target })
}

/// Chain rule through `batch_covariance`: `(2/(L−1)) D_c sym(∂L/∂C)`.
pub fn grad_cov_wrt_features(
    batch: &FeatureBatch,
    grad_cov: &GradientWrtCov,
) -> Result<GradientWrtFeatures> {
    if batch.len() < 2 {
        return Err(SpdError::InsufficientSamples {
            needed: 2,
            got: batch.len(),
        });
    }
    check_same_dim(batch.dim(), grad_cov.dim(), "feature batch vs covariance gradient")?;
    let scale = 2.0 / (batch.len() - 1) as f64;
    Ok(GradientWrtFeatures(batch.centered() * grad_cov.matrix() * scale))
}

/// Largest entrywise relative error between `analytic` and central differences
/// `(f(x + hE_ij) − f(x − hE_ij)) / 2h`, each error normalized by
/// `max(1e-12, |fd|, |analytic|)`.
pub fn finite_diff_check<F>(f: F, point: &DMatrix<f64>, analytic: &DMatrix<f64>, h: f64) -> Result<f64>
where
    F: Fn(&DMatrix<f64>) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(SpdError::Invalid(format!("finite-difference step must be positive, got {h}")));
    }
    if point.shape() != analytic.shape() {
        return Err(SpdError::Dimension(format!(
            "point is {:?}, analytic gradient is {:?}",
            point.shape(),
            analytic.shape()
        )));
    }
    let eval = |x: &DMatrix<f64>| -> Result<f64> {
        let v = f(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SpdError::NonFinite(format!("objective returned {v}")))
        }
    };
    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for j in 0..point.ncols() {
        for i in 0..point.nrows() {
            let x0 = point[(i, j)];
            probe[(i, j)] = x0 + h;
            let up = eval(&probe)?;
            probe[(i, j)] = x0 - h;
            let down = eval(&probe)?;
            probe[(i, j)] = x0;
            let fd = (up - down) / (2.0 * h);
            let an = analytic[(i, j)];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Loss exercised by [`random_gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedLoss {
    Coral,
    Log,
}

impl CheckedLoss {
    /// Acceptance threshold on the maximum relative error.
    pub fn threshold(self) -> f64 {
        match self {
            CheckedLoss::Coral => 1e-7,
            CheckedLoss::Log => 1e-5,
        }
    }
}

impl std::str::FromStr for CheckedLoss {
    type Err = SpdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coral" => Ok(CheckedLoss::Coral),
            "log" => Ok(CheckedLoss::Log),
            _ => Err(SpdError::Invalid(format!("unknown loss {s:?} (expected coral or log)"))),
        }
    }
}

/// Worst finite-difference error of `∂L/∂C_S` over `trials` seeded random pairs
/// `(C_S, C_T)` of dimension `dim`, with step [`FD_STEP`].
pub fn random_gradient_check(loss: CheckedLoss, dim: usize, trials: usize, seed: u64) -> Result<f64> {
    if dim < 2 {
        return Err(SpdError::Invalid(format!("gradient check needs dim >= 2, got {dim}")));
    }
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let c_s = random_spd(&mut r, dim);
        let c_t = random_spd(&mut r, dim);
        let err = match loss {
            CheckedLoss::Coral => {
                let g = grad_loss_coral_wrt_cov(&c_s, &c_t)?;
                let f = |x: &DMatrix<f64>| Ok(loss_coral(&SpdMatrix::from_symmetric_part(x)?, &c_t)?.value);
                finite_diff_check(f, c_s.as_matrix(), g.matrix(), FD_STEP)?
            }
            CheckedLoss::Log => {
                let g = grad_loss_log_wrt_cov(&c_s, &c_t)?;
                let f = |x: &DMatrix<f64>| Ok(loss_log(&SpdMatrix::from_symmetric_part(x)?, &c_t)?.value);
                finite_diff_check(f, c_s.as_matrix(), g.matrix(), FD_STEP)?
            }
        };
        worst = worst.max(err);
    }
    Ok(worst)
}
