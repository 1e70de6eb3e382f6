//! Symmetric positive definite matrices and their spectral matrix functions.
//!
//! Every [`SpdMatrix`] carries the eigendecomposition computed when it was
//! validated, so `log`, `exp`-inverse, fractional powers and the Loewner-matrix
//! gradients downstream never re-factor the same matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SpdError};

/// Relative tolerance of the symmetry test applied on construction.
pub const SYMMETRY_TOL: f64 = 1e-12;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Orthonormal eigenvectors (columns) with eigenvalues sorted ascending.
///
/// Each eigenvector is signed so that its largest-magnitude component is
/// positive (first such component on ties), which makes the factorization
/// reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl EigenDecomposition {
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `U diag(f(λ)) Uᵀ`, symmetrized.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &lambda) in self.values.iter().enumerate() {
            let s = f(lambda);
            scaled.column_mut(j).scale_mut(s);
        }
        let out = &scaled * self.vectors.transpose();
        symmetrize_unchecked(&out)
    }

    /// `U diag(λ) Uᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map_spectrum(|l| l)
    }
}

/// A dense symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    eig: EigenDecomposition,
}

impl SpdMatrix {
    /// Validates symmetry (within [`SYMMETRY_TOL`]) and positive definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m, "SPD matrix")?;
        check_finite(&m, "SPD matrix")?;
        check_symmetric(&m)?;
        Self::from_exact_symmetric(symmetrize_unchecked(&m))
    }

    /// Replaces `m` by its symmetric part, then validates positive definiteness.
    ///
    /// Use this for matrices produced by arithmetic (congruences, products)
    /// whose asymmetry is pure round-off.
    pub fn from_symmetric_part(m: &DMatrix<f64>) -> Result<Self> {
        let sym = symmetrize(m)?;
        check_finite(&sym, "SPD matrix")?;
        Self::from_exact_symmetric(sym)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n]).expect("identity is SPD")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds from a row-major slice of `n * n` entries.
    pub fn from_row_slice(n: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(SpdError::Dimension(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, n, entries))
    }

    fn from_exact_symmetric(m: DMatrix<f64>) -> Result<Self> {
        let eig = symmetric_eigen(&m)?;
        let min = eig.values.min();
        if !(min > 0.0) {
            return Err(SpdError::NotPositiveDefinite {
                min_eigenvalue: min,
            });
        }
        Ok(Self { entries: m, eig })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn eigen(&self) -> &EigenDecomposition {
        &self.eig
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eig.values[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eig.values[self.eig.values.len() - 1]
    }

    pub fn condition_number(&self) -> f64 {
        self.max_eigenvalue() / self.min_eigenvalue()
    }

    /// `log det`, from the eigenvalues.
    pub fn log_det(&self) -> f64 {
        self.eig.values.iter().map(|l| l.ln()).sum()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.eig.map_spectrum(|l| 1.0 / l)
    }

    /// `s * A` for `s > 0`.
    pub fn scale(&self, s: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(SpdError::Invalid(format!(
                "SPD scale factor must be positive and finite, got {s}"
            )));
        }
        Self::from_exact_symmetric(&self.entries * s)
    }

    /// `M A Mᵀ` for any square `M` of matching size.
    pub fn congruence(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != self.dim() || m.ncols() != self.dim() {
            return Err(SpdError::Dimension(format!(
                "congruence by {}x{} matrix on {n}x{n} SPD matrix",
                m.nrows(),
                m.ncols(),
                n = self.dim()
            )));
        }
        Self::from_symmetric_part(&(m * &self.entries * m.transpose()))
    }
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m, "symmetrize")?;
    Ok(symmetrize_unchecked(m))
}

pub(crate) fn symmetrize_unchecked(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Returns the cached eigendecomposition of `a`.
pub fn sym_eig(a: &SpdMatrix) -> EigenDecomposition {
    a.eig.clone()
}

/// Eigendecomposition of any symmetric matrix (ascending, sign-normalized).
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<EigenDecomposition> {
    check_square(m, "eigendecomposition")?;
    let n = m.nrows();
    let SymmetricEigen {
        eigenvectors,
        eigenvalues,
    } = SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(|| {
        let diag = m.diagonal();
        SpdError::NoConvergence {
            dim: n,
            frobenius: m.norm(),
            diag_min: diag.min(),
            diag_max: diag.max(),
        }
    })?;
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(SpdError::NonFinite("eigenvalues".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eigenvalues[i].total_cmp(&eigenvalues[j]).then(i.cmp(&j)));

    let mut vectors = DMatrix::zeros(n, n);
    let mut values = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eigenvalues[src];
        let col = eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        vectors.column_mut(dst).copy_from(&(col * sign));
    }
    Ok(EigenDecomposition { vectors, values })
}

/// Principal matrix logarithm `U diag(log λ) Uᵀ`; symmetric, not necessarily SPD.
pub fn matrix_log(a: &SpdMatrix) -> DMatrix<f64> {
    a.eig.map_spectrum(f64::ln)
}

/// Matrix exponential of a symmetric matrix.
pub fn matrix_exp(s: &DMatrix<f64>) -> Result<SpdMatrix> {
    check_square(s, "matrix_exp")?;
    check_finite(s, "matrix_exp")?;
    check_symmetric(s)?;
    let eig = symmetric_eigen(&symmetrize_unchecked(s))?;
    SpdMatrix::from_exact_symmetric(eig.map_spectrum(f64::exp))
}

/// `A^p = U diag(λ^p) Uᵀ`.
pub fn matrix_power(a: &SpdMatrix, p: f64) -> Result<SpdMatrix> {
    if !p.is_finite() {
        return Err(SpdError::Invalid(format!("matrix power exponent {p}")));
    }
    SpdMatrix::from_exact_symmetric(a.eig.map_spectrum(|l| l.powf(p)))
}

/// Nearest SPD matrix in the spectral sense: eigenvalues clipped below at `floor`.
pub fn project_to_spd(m: &DMatrix<f64>, floor: f64) -> Result<SpdMatrix> {
    if !(floor > 0.0) {
        return Err(SpdError::Invalid(format!(
            "projection floor must be positive, got {floor}"
        )));
    }
    let eig = symmetric_eigen(&symmetrize(m)?)?;
    SpdMatrix::from_exact_symmetric(eig.map_spectrum(|l| l.max(floor)))
}

pub(crate) fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(SpdError::Dimension(format!(
            "{what}: expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn check_same_dim(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(SpdError::Dimension(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SpdError::NonFinite(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > SYMMETRY_TOL * m[(i, j)].abs().max(1.0) {
                return Err(SpdError::NotSymmetric {
                    row: i,
                    col: j,
                    gap,
                });
            }
        }
    }
    Ok(())
}
