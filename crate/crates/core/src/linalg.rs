//! Logarithmic norms and spectral clipping of symmetric parts.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub fn sym_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn sym_eig_range(s: &DMatrix<f64>) -> (f64, f64) {
    if s.nrows() == 0 {
        return (0.0, 0.0);
    }
    let e = SymmetricEigen::new(s.clone()).eigenvalues;
    (e.min(), e.max())
}

/// `nu_2[A]`: the largest eigenvalue of `(A + A^T) / 2`.
pub fn log_norm_2(a: &DMatrix<f64>) -> Result<f64> {
    check_square(a)?;
    Ok(sym_eig_range(&sym_part(a)).1)
}

/// `max(nu_2[A], nu_2[-A])`, the spectral radius of the symmetric part.
pub fn log_norm_2_abs(a: &DMatrix<f64>) -> Result<f64> {
    check_square(a)?;
    let (lo, hi) = sym_eig_range(&sym_part(a));
    Ok(hi.max(-lo))
}

fn clip_sym(s: DMatrix<f64>, lo: f64, hi: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s);
    let clipped = eig.eigenvalues.map(|l| l.clamp(lo, hi));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// Frobenius-nearest matrix with `nu_2 <= kappa`: clips the spectrum of the
/// symmetric part from above and keeps the skew part.
pub fn project_log_norm(a: &DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
    if kappa == f64::INFINITY {
        return a.clone();
    }
    let s = sym_part(a);
    let skew = a - &s;
    let s = clip_sym(s, f64::NEG_INFINITY, kappa);
    s + skew
}

/// Frobenius-nearest matrix whose symmetric part has spectrum in `[-kappa, kappa]`.
pub fn project_log_norm_abs(a: &DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
    if kappa == f64::INFINITY {
        return a.clone();
    }
    let s = sym_part(a);
    let skew = a - &s;
    let s = clip_sym(s, -kappa, kappa);
    s + skew
}
