//! Dissimilarities between SPD matrices and the two covariance-alignment losses.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpdError};
use crate::spd::{check_same_dim, matrix_log, matrix_power, symmetric_eigen, SpdMatrix};

/// Radicand values down to this are clamped to zero in the Stein divergence.
pub const STEIN_CLAMP: f64 = -1e-12;

/// An alignment loss value together with the feature dimension `d` used in its
/// `1/(4d²)` normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub dim: usize,
}

impl LossValue {
    fn normalized(squared_distance: f64, dim: usize) -> Self {
        Self {
            value: squared_distance / (4.0 * (dim * dim) as f64),
            dim,
        }
    }
}

/// The dissimilarities this crate knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dissimilarity {
    Euclidean,
    LogEuclidean,
    AffineInvariant,
    Jeffrey,
    Stein,
}

impl Dissimilarity {
    pub const ALL: [Dissimilarity; 5] = [
        Dissimilarity::Euclidean,
        Dissimilarity::LogEuclidean,
        Dissimilarity::AffineInvariant,
        Dissimilarity::Jeffrey,
        Dissimilarity::Stein,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dissimilarity::Euclidean => "euclidean",
            Dissimilarity::LogEuclidean => "logE",
            Dissimilarity::AffineInvariant => "affine",
            Dissimilarity::Jeffrey => "jeffrey",
            Dissimilarity::Stein => "stein",
        }
    }

    pub fn eval(self, a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
        match self {
            Dissimilarity::Euclidean => dist_euclidean(a, b),
            Dissimilarity::LogEuclidean => dist_log_euclidean(a, b),
            Dissimilarity::AffineInvariant => dist_affine_invariant(a, b),
            Dissimilarity::Jeffrey => div_jeffrey(a, b),
            Dissimilarity::Stein => div_stein(a, b),
        }
    }
}

impl std::str::FromStr for Dissimilarity {
    type Err = SpdError;

    fn from_str(s: &str) -> Result<Self> {
        Dissimilarity::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SpdError::Invalid(format!("unknown metric {s:?}")))
    }
}

fn same_dim(a: &SpdMatrix, b: &SpdMatrix) -> Result<usize> {
    check_same_dim(a.dim(), b.dim(), "SPD operands")?;
    Ok(a.dim())
}

/// `‖A − B‖_F`.
pub fn dist_euclidean(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    same_dim(a, b)?;
    Ok((a.as_matrix() - b.as_matrix()).norm())
}

/// `‖log A − log B‖_F`.
pub fn dist_log_euclidean(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    same_dim(a, b)?;
    Ok((matrix_log(a) - matrix_log(b)).norm())
}

/// Affine-invariant geodesic distance `sqrt(Σ log² λ̂ᵢ)`, where `λ̂` are the
/// eigenvalues of `B^{-1/2} A B^{-1/2}` (the spectrum of `A B⁻¹`).
pub fn dist_affine_invariant(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    same_dim(a, b)?;
    let b_inv_sqrt = matrix_power(b, -0.5)?;
    let w = b_inv_sqrt.as_matrix();
    let congruent = w * a.as_matrix() * w;
    let eig = symmetric_eigen(&((&congruent + congruent.transpose()) * 0.5))?;
    let min = eig.values().min();
    if !(min > 0.0) {
        return Err(SpdError::NotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    Ok(eig.values().iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}

/// Jeffrey divergence `½ tr(A⁻¹B) + ½ tr(B⁻¹A) − n`.
pub fn div_jeffrey(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    let n = same_dim(a, b)?;
    // tr(XY) for symmetric X, Y is the entrywise dot product
    let t1 = a.inverse().dot(b.as_matrix());
    let t2 = b.inverse().dot(a.as_matrix());
    Ok((0.5 * t1 + 0.5 * t2 - n as f64).max(0.0))
}

/// Stein divergence `sqrt(log det((A+B)/2) − ½ log det(AB))`, from log-determinants.
pub fn div_stein(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    same_dim(a, b)?;
    let mid = SpdMatrix::from_symmetric_part(&((a.as_matrix() + b.as_matrix()) * 0.5))?;
    let radicand = mid.log_det() - 0.5 * (a.log_det() + b.log_det());
    if radicand < STEIN_CLAMP {
        return Err(SpdError::NonFinite(format!(
            "Stein radicand {radicand:e} is negative beyond round-off"
        )));
    }
    Ok(radicand.max(0.0).sqrt())
}

/// `(1/(4d²)) ‖C_S − C_T‖²_F`.
pub fn loss_coral(c_s: &SpdMatrix, c_t: &SpdMatrix) -> Result<LossValue> {
    let d = same_dim(c_s, c_t)?;
    Ok(LossValue::normalized(
        (c_s.as_matrix() - c_t.as_matrix()).norm_squared(),
        d,
    ))
}

/// `(1/(4d²)) ‖log C_S − log C_T‖²_F`.
pub fn loss_log(c_s: &SpdMatrix, c_t: &SpdMatrix) -> Result<LossValue> {
    let d = same_dim(c_s, c_t)?;
    Ok(LossValue::normalized(
        (matrix_log(c_s) - matrix_log(c_t)).norm_squared(),
        d,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_invertible, random_orthogonal, random_spd, rng};
    use std::f64::consts::E;

    fn diag(v: &[f64]) -> SpdMatrix {
        SpdMatrix::from_diagonal(v).unwrap()
    }

    fn id(n: usize) -> SpdMatrix {
        SpdMatrix::identity(n)
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(dist_euclidean(&id(3), &id(3)).unwrap(), 0.0);
        assert!((dist_euclidean(&diag(&[2.0, 2.0]), &id(2)).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((dist_euclidean(&diag(&[4.0, 1.0]), &diag(&[1.0, 4.0])).unwrap() - 18f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn log_euclidean_examples() {
        let a = random_spd(&mut rng(1), 5);
        assert_eq!(dist_log_euclidean(&a, &a).unwrap(), 0.0);
        assert!((dist_log_euclidean(&diag(&[E, E]), &id(2)).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((dist_log_euclidean(&diag(&[4.0, 1.0]), &id(2)).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn affine_invariant_examples() {
        let mut r = rng(2);
        let a = random_spd(&mut r, 6);
        assert!(dist_affine_invariant(&a, &a).unwrap() < 1e-12);
        assert!((dist_affine_invariant(&diag(&[4.0, 1.0]), &id(2)).unwrap() - 4f64.ln()).abs() < 1e-14);

        let b = random_spd(&mut r, 6);
        let m = random_invertible(&mut r, 6, 0.5, 2.0);
        let before = dist_affine_invariant(&a, &b).unwrap();
        let after =
            dist_affine_invariant(&a.congruence(&m).unwrap(), &b.congruence(&m).unwrap()).unwrap();
        assert!((before - after).abs() < 1e-8);
    }

    #[test]
    fn jeffrey_examples() {
        let mut r = rng(3);
        let a = random_spd(&mut r, 4);
        let b = random_spd(&mut r, 4);
        assert!(div_jeffrey(&a, &a).unwrap().abs() < 1e-12);
        assert!((div_jeffrey(&diag(&[2.0, 2.0]), &id(2)).unwrap() - 0.5).abs() < 1e-15);
        assert!((div_jeffrey(&a, &b).unwrap() - div_jeffrey(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn stein_examples() {
        let mut r = rng(4);
        let a = random_spd(&mut r, 4);
        let b = random_spd(&mut r, 4);
        assert!(div_stein(&a, &a).unwrap() < 1e-6);
        let expected = (2.0 * 1.5f64.ln() - 2f64.ln()).sqrt();
        assert!((div_stein(&diag(&[2.0, 2.0]), &id(2)).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 0.343200).abs() < 1e-5);
        assert!((div_stein(&a, &b).unwrap() - div_stein(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_coral(&id(2), &id(2)).unwrap().value, 0.0);
        assert!((loss_coral(&diag(&[2.0, 2.0]), &id(2)).unwrap().value - 0.125).abs() < 1e-15);
        let e2 = diag(&[E * E, 1.0]);
        let lc = loss_coral(&e2, &id(2)).unwrap();
        assert!((lc.value - (E * E - 1.0).powi(2) / 16.0).abs() < 1e-13);
        assert!((lc.value - 2.551).abs() < 1e-3);
        assert_eq!(lc.dim, 2);

        let a = random_spd(&mut rng(5), 4);
        assert_eq!(loss_log(&a, &a).unwrap().value, 0.0);
        assert!((loss_log(&e2, &id(2)).unwrap().value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn loss_log_is_scale_invariant() {
        let mut r = rng(6);
        let a = random_spd(&mut r, 7);
        let b = random_spd(&mut r, 7);
        let base = loss_log(&a, &b).unwrap().value;
        for s in [1e-3, 2.5, 1e3] {
            let v = loss_log(&a.scale(s).unwrap(), &b.scale(s).unwrap()).unwrap().value;
            assert!((v - base).abs() < 1e-10, "s={s}");
        }
    }

    #[test]
    fn log_euclidean_orthogonal_invariance() {
        let mut r = rng(7);
        let a = random_spd(&mut r, 9);
        let b = random_spd(&mut r, 9);
        let q = random_orthogonal(&mut r, 9);
        let before = dist_log_euclidean(&a, &b).unwrap();
        let after = dist_log_euclidean(&a.congruence(&q).unwrap(), &b.congruence(&q).unwrap()).unwrap();
        assert!((before - after).abs() < 1e-8);
    }

    #[test]
    fn dimension_mismatch_everywhere() {
        let (a, b) = (id(2), id(3));
        for d in Dissimilarity::ALL {
            assert!(matches!(d.eval(&a, &b), Err(SpdError::Dimension(_))), "{d:?}");
        }
        assert!(loss_coral(&a, &b).is_err());
        assert!(loss_log(&a, &b).is_err());
    }

    #[test]
    fn metric_names_parse() {
        for d in Dissimilarity::ALL {
            assert_eq!(d.name().parse::<Dissimilarity>().unwrap(), d);
        }
        assert!("cosine".parse::<Dissimilarity>().is_err());
    }
}
