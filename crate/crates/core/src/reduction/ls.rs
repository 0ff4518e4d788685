//! Weighted least squares through a column-equilibrated QR factorization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Factorization of `diag(sqrt w) Phi D^{-1} = Q R` with `D` the column norms.
pub(crate) struct WeightedLs {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub scale: DVector<f64>,
    pub sqrt_w: DVector<f64>,
}

impl WeightedLs {
    pub fn new(phi: &DMatrix<f64>, weights: &[f64]) -> Result<Self> {
        let (n, m) = phi.shape();
        if n < m {
            return Err(Error::SingularGram);
        }
        let sqrt_w = DVector::from_iterator(n, weights.iter().map(|w| w.sqrt()));
        let mut a = phi.clone();
        for p in 0..n {
            a.row_mut(p).scale_mut(sqrt_w[p]);
        }
        let mut scale = DVector::zeros(m);
        for k in 0..m {
            let s = a.column(k).norm();
            if s == 0.0 || !s.is_finite() {
                return Err(Error::SingularGram);
            }
            scale[k] = s;
            a.column_mut(k).scale_mut(1.0 / s);
        }
        let qr = a.qr();
        let r = qr.r();
        let diag_max = r.diagonal().amax();
        let diag_min = r.diagonal().iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
        // Gram eigenvalue ratio ~ (diag_min / diag_max)^2; treat ~1e-24 as singular
        if !(diag_min > 1e-12 * diag_max) {
            return Err(Error::SingularGram);
        }
        Ok(Self {
            q: qr.q(),
            r,
            scale,
            sqrt_w,
        })
    }

    /// `D^{-1} R^{-1} X` for an `M x k` block.
    pub fn back_solve(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = self
            .r
            .solve_upper_triangular(x)
            .expect("nonsingular triangular factor");
        for k in 0..y.nrows() {
            y.row_mut(k).scale_mut(1.0 / self.scale[k]);
        }
        y
    }

    /// Least-squares coefficients for right-hand sides `rhs` (`n x k`, unweighted).
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut b = rhs.clone();
        for p in 0..b.nrows() {
            b.row_mut(p).scale_mut(self.sqrt_w[p]);
        }
        self.back_solve(&(self.q.transpose() * b))
    }

    /// Weighted Gram matrix `Phi^T W Phi = D R^T R D` and its eigendecomposition.
    pub fn gram_eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        let mut rd = self.r.clone();
        for k in 0..rd.ncols() {
            rd.column_mut(k).scale_mut(self.scale[k]);
        }
        let g = rd.transpose() * &rd;
        let g = (&g + g.transpose()) * 0.5;
        let e = SymmetricEigen::new(g);
        (e.eigenvalues.map(|v| v.max(0.0)), e.eigenvectors)
    }
}
