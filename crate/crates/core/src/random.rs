//! Seeded generators for matrices used by tests, gradient checks and benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::spd::SpdMatrix;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `GᵀG / n + 0.1 I` with standard normal `G`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> SpdMatrix {
    let g = standard_normal_matrix(rng, n, n);
    let m = g.transpose() * &g / n as f64 + DMatrix::identity(n, n) * 0.1;
    SpdMatrix::from_symmetric_part(&m).expect("Gram matrix plus 0.1 I is SPD")
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let qr = standard_normal_matrix(rng, n, n).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Q diag(λ) Qᵀ` with random orthogonal `Q`, smallest eigenvalue `min`,
/// largest `max`, the rest log-uniform in between.
pub fn random_spd_with_spectrum<R: Rng>(rng: &mut R, n: usize, min: f64, max: f64) -> SpdMatrix {
    assert!(min > 0.0 && max >= min);
    let (lo, hi) = (min.ln(), max.ln());
    let spectrum = DVector::from_fn(n, |i, _| match i {
        0 => min,
        _ if i == n - 1 => max,
        _ => (lo + (hi - lo) * rng.random::<f64>()).exp(),
    });
    let q = random_orthogonal(rng, n);
    let m = &q * DMatrix::from_diagonal(&spectrum) * q.transpose();
    SpdMatrix::from_symmetric_part(&m).expect("positive spectrum")
}

/// Invertible matrix `Q₁ diag(s) Q₂` with singular values uniform in `[lo, hi]`.
pub fn random_invertible<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    assert!(lo > 0.0 && hi >= lo);
    let q1 = random_orthogonal(rng, n);
    let q2 = random_orthogonal(rng, n);
    let s = DVector::from_fn(n, |_, _| lo + (hi - lo) * rng.random::<f64>());
    q1 * DMatrix::from_diagonal(&s) * q2
}

pub fn random_symmetric<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = standard_normal_matrix(rng, n, n);
    (&g + g.transpose()) * 0.5
}
