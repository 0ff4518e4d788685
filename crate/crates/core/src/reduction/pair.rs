//! Fits of `(d phi_k / dx) G(x, y) ~ sum_{l,r} C_k[l][r] phi_l(x) psi_r(y)` over a
//! product grid. The product structure keeps memory linear in the grid size:
//! the projection uses `Q_x^T T_k Q_y` assembled from x-row chunks.

use nalgebra::DMatrix;

use super::ls::WeightedLs;
use crate::basis::{EvalTable, KernelBasis};
use crate::dynamics::PairField;
use crate::error::{Error, Result};
use crate::quadrature::{PairGrid, QuadratureGrid};

const CHUNK: usize = 32;

pub(crate) struct PairProblem<'a> {
    pub phi: EvalTable,
    pub psi: DMatrix<f64>,
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
    pub field: &'a dyn PairField,
    xs: &'a QuadratureGrid,
    ys: &'a QuadratureGrid,
    dim: usize,
}

impl<'a> PairProblem<'a> {
    pub fn new(phi: &KernelBasis, psi: &KernelBasis, field: &'a dyn PairField, grid: &'a PairGrid) -> Result<Self> {
        let dim = phi.dim();
        if psi.dim() != dim || field.dim() != dim || grid.x.points().dim() != dim || grid.y.points().dim() != dim {
            return Err(Error::Dimension(format!(
                "basis, pair map and grid dimensions differ ({dim}, {}, {}, {})",
                psi.dim(),
                field.dim(),
                grid.x.points().dim()
            )));
        }
        Ok(Self {
            phi: phi.eval(grid.x.points())?,
            psi: psi.values(grid.y.points())?,
            wx: grid.x.weights().to_vec(),
            wy: grid.y.weights().to_vec(),
            field,
            xs: &grid.x,
            ys: &grid.y,
            dim,
        })
    }

    pub fn m(&self) -> usize {
        self.phi.values.ncols()
    }

    pub fn m_psi(&self) -> usize {
        self.psi.ncols()
    }

    /// `G_c(x_p, y_q)` for `p` in `rows`, one `len(rows) x n_y` block per component.
    fn field_block(&self, rows: std::ops::Range<usize>) -> Vec<DMatrix<f64>> {
        let d = self.dim;
        let ny = self.ys.len();
        let mut out = vec![DMatrix::zeros(rows.len(), ny); d];
        let mut g = vec![0.0; d];
        for (i, p) in rows.enumerate() {
            let x = self.xs.points().point(p);
            for q in 0..ny {
                self.field.eval(x, self.ys.points().point(q), &mut g);
                for c in 0..d {
                    out[c][(i, q)] = g[c];
                }
            }
        }
        out
    }

    /// Unconstrained weighted least-squares coefficients `C_k` (`M x M_psi`).
    pub fn l2_coefficients(&self, ls_x: &WeightedLs, ls_y: &WeightedLs) -> Vec<DMatrix<f64>> {
        let nx = self.xs.len();
        let d = self.dim;
        let m = self.m();
        let mp = self.m_psi();
        let mut qy_w = ls_y.q.clone();
        for q in 0..qy_w.nrows() {
            qy_w.row_mut(q).scale_mut(ls_y.sqrt_w[q]);
        }
        // P_c = diag(sqrt w_x) G_c diag(sqrt w_y) Q_y
        let mut p_c = vec![DMatrix::zeros(nx, mp); d];
        let mut start = 0;
        while start < nx {
            let end = (start + CHUNK).min(nx);
            let blocks = self.field_block(start..end);
            for c in 0..d {
                let mut part = &blocks[c] * &qy_w;
                for i in 0..end - start {
                    part.row_mut(i).scale_mut(ls_x.sqrt_w[start + i]);
                }
                p_c[c].rows_mut(start, end - start).copy_from(&part);
            }
            start = end;
        }
        (0..m)
            .map(|k| {
                let mut s = DMatrix::zeros(m, mp);
                for c in 0..d {
                    let mut qx = ls_x.q.clone();
                    for p in 0..nx {
                        qx.row_mut(p).scale_mut(self.phi.gradient(p, k, c));
                    }
                    s += qx.transpose() * &p_c[c];
                }
                let left = ls_x.back_solve(&s);
                ls_y.back_solve(&left.transpose()).transpose()
            })
            .collect()
    }

    /// Grid-sup and weighted L2 residual of each kernel for coefficients `C_k`.
    pub fn residuals(&self, coeffs: &[DMatrix<f64>]) -> (Vec<f64>, Vec<f64>) {
        let nx = self.xs.len();
        let ny = self.ys.len();
        let d = self.dim;
        let m = self.m();
        let psi_t = self.psi.transpose();
        let mut sup = vec![0.0f64; m];
        let mut l2 = vec![0.0f64; m];
        let mut start = 0;
        while start < nx {
            let end = (start + CHUNK).min(nx);
            let blocks = self.field_block(start..end);
            let phi_chunk = self.phi.values.rows(start, end - start);
            for k in 0..m {
                let approx = (&phi_chunk * &coeffs[k]) * &psi_t;
                for i in 0..end - start {
                    let p = start + i;
                    let grads: Vec<f64> = (0..d).map(|c| self.phi.gradient(p, k, c)).collect();
                    let wp = self.wx[p];
                    for q in 0..ny {
                        let mut t = 0.0;
                        for c in 0..d {
                            t += grads[c] * blocks[c][(i, q)];
                        }
                        let r = t - approx[(i, q)];
                        sup[k] = sup[k].max(r.abs());
                        l2[k] += wp * self.wy[q] * r * r;
                    }
                }
            }
            start = end;
        }
        (sup, l2.into_iter().map(f64::sqrt).collect())
    }
}

/// Targets and Kronecker design on a coarser product grid for minimax fits.
pub(crate) fn minimax_design(
    phi: &KernelBasis,
    psi: &KernelBasis,
    field: &dyn PairField,
    sub: &PairGrid,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let tab = phi.eval(sub.x.points())?;
    let psi_v = psi.values(sub.y.points())?;
    let d = phi.dim();
    let m = phi.size();
    let mp = psi.size();
    let nx = sub.x.len();
    let ny = sub.y.len();
    let mut design = DMatrix::zeros(nx * ny, m * mp);
    let mut targets = DMatrix::zeros(nx * ny, m);
    let mut g = vec![0.0; d];
    for p in 0..nx {
        let x = sub.x.points().point(p);
        for q in 0..ny {
            let row = p * ny + q;
            field.eval(x, sub.y.points().point(q), &mut g);
            for k in 0..m {
                let mut t = 0.0;
                for c in 0..d {
                    t += tab.gradient(p, k, c) * g[c];
                }
                targets[(row, k)] = t;
            }
            for l in 0..m {
                let a = tab.values[(p, l)];
                for r in 0..mp {
                    design[(row, l * mp + r)] = a * psi_v[(q, r)];
                }
            }
        }
    }
    Ok((design, targets))
}
