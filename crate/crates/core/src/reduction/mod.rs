//! Fitting reduced moment dynamics.
//!
//! Three model shapes are supported:
//! * linear, `m' = A m`, from a single-agent field `f`;
//! * quadratic, `m'_k = m^T B_k m`, from a pairwise interaction `g`;
//! * leader-driven, `m' = sum_j sum_r psi_r(y_j) Gamma_r m`, from a leader map `eta`.
//!
//! Each fit minimizes the per-kernel residual over a quadrature grid in the
//! L2 or grid-maximum norm, optionally under bounds on logarithmic norms.

mod constrained;
mod linf;
mod ls;
mod pair;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{make_basis, BasisSpec, KernelBasis};
use crate::dynamics::{PairField, VectorField};
use crate::error::{Error, Result};
use crate::geometry::BoxDomain;
use crate::linalg::{log_norm_2, log_norm_2_abs};
use crate::quadrature::{PairGrid, QuadratureGrid};

use constrained::{AdmmOptions, Constraint, Coupling, GramPair, MinimaxDesign};
use ls::WeightedLs;
use pair::PairProblem;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitNorm {
    #[default]
    L2,
    Linf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub norm: FitNorm,
    /// Iteration budget of the constrained solvers.
    pub max_iter: usize,
    pub tol: f64,
    /// Points per axis of the product grid used by pair minimax fits;
    /// `None` picks 41 in 1-D and 7 in 2-D.
    pub linf_points: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            norm: FitNorm::L2,
            max_iter: 100_000,
            tol: 1e-10,
            linf_points: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub norm: FitNorm,
    /// Grid-maximum of the residual, per kernel.
    pub sup_residuals: Vec<f64>,
    /// Quadrature-weighted L2 norm of the residual, per kernel.
    pub l2_residuals: Vec<f64>,
    pub eps_total: f64,
    /// `nu_2[A]`, or `max(nu_2[M], nu_2[-M])` of each `B~_l` / `Gamma_r`.
    pub log_norms: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest constraint excess after the solve (0 when unconstrained).
    pub constraint_violation: f64,
}

impl FitReport {
    fn new(norm: FitNorm, sup: Vec<f64>, l2: Vec<f64>, log_norms: Vec<f64>) -> Self {
        let eps_total = sup.iter().map(|v| v * v).sum::<f64>().sqrt();
        let objective = match norm {
            FitNorm::L2 => l2.iter().map(|v| v * v).sum(),
            FitNorm::Linf => sup.iter().sum(),
        };
        Self {
            norm,
            sup_residuals: sup,
            l2_residuals: l2,
            eps_total,
            log_norms,
            objective,
            iterations: 0,
            converged: true,
            constraint_violation: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    /// `a[(k, l)]` is the coefficient of `m_l` in `m'_k`.
    pub a: DMatrix<f64>,
}

impl LinearModel {
    pub fn size(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticModel {
    pub b: Vec<DMatrix<f64>>,
    pub btilde: Vec<DMatrix<f64>>,
}

impl QuadraticModel {
    pub fn from_b(b: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = b.len();
        if b.iter().any(|bk| bk.shape() != (m, m)) {
            return Err(Error::Dimension(format!("quadratic model needs {m} matrices of size {m}x{m}")));
        }
        let btilde = (0..m)
            .map(|l| DMatrix::from_fn(m, m, |i, j| b[i][(l, j)] + b[i][(j, l)]))
            .collect();
        Ok(Self { b, btilde })
    }

    pub fn size(&self) -> usize {
        self.b.len()
    }

    /// `out_k = m^T B_k m`.
    pub fn rhs(&self, m: &[f64], out: &mut [f64]) {
        let v = DVector::from_column_slice(m);
        for (o, bk) in out.iter_mut().zip(&self.b) {
            *o = v.dot(&(bk * &v));
        }
    }

    /// Jacobian of the right-hand side, `sum_j m_j B~_j`.
    pub fn jacobian(&self, m: &[f64]) -> DMatrix<f64> {
        let n = self.size();
        let mut j = DMatrix::zeros(n, n);
        for (mj, bt) in m.iter().zip(&self.btilde) {
            j += bt * *mj;
        }
        j
    }
}

#[derive(Clone, Debug)]
pub struct LeaderModel {
    /// `gamma[r][(k, l)]` is the coefficient of `psi_r(y) m_l` in `m'_k`.
    pub gamma: Vec<DMatrix<f64>>,
    pub psi: KernelBasis,
}

impl LeaderModel {
    pub fn size(&self) -> usize {
        self.gamma.first().map_or(0, |g| g.nrows())
    }

    /// `sum_j sum_r psi_r(y_j) Gamma_r` for leader positions stored row-major.
    pub fn coefficient_matrix(&self, leaders: &[f64]) -> DMatrix<f64> {
        let m = self.size();
        let d = self.psi.dim();
        let mut c = DMatrix::zeros(m, m);
        let mut vals = vec![0.0; self.psi.size()];
        for y in leaders.chunks_exact(d) {
            self.psi.eval_point(y, &mut vals, None);
            for (v, g) in vals.iter().zip(&self.gamma) {
                c += g * *v;
            }
        }
        c
    }
}

/// Largest `nu_2` of the Jacobian of `f` over the grid points.
pub fn lipschitz_log_constant(f: &dyn VectorField, grid: &QuadratureGrid) -> Result<f64> {
    let d = f.dim();
    if grid.points().dim() != d {
        return Err(Error::Dimension(format!(
            "field has dimension {d}, grid {}",
            grid.points().dim()
        )));
    }
    let mut jac = vec![0.0; d * d];
    let mut worst = f64::NEG_INFINITY;
    for x in grid.points().iter() {
        f.jacobian(x, &mut jac)?;
        let j = DMatrix::from_row_slice(d, d, &jac);
        worst = worst.max(log_norm_2(&j)?);
    }
    Ok(worst)
}

fn admm_opts(opts: &FitOptions) -> AdmmOptions {
    AdmmOptions {
        max_iter: opts.max_iter,
        tol: opts.tol,
    }
}

fn column_norms(r: &DMatrix<f64>, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let sup = r.column_iter().map(|c| c.amax()).collect();
    let l2 = r
        .column_iter()
        .map(|c| c.iter().zip(w).map(|(v, wi)| wi * v * v).sum::<f64>().sqrt())
        .collect();
    (sup, l2)
}

/// Fits `A` with `(d phi_k) f ~ sum_l A[k][l] phi_l`; `kappa0` bounds `nu_2[A]`.
pub fn fit_linear(
    basis: &KernelBasis,
    f: &dyn VectorField,
    grid: &QuadratureGrid,
    opts: &FitOptions,
    kappa0: Option<f64>,
) -> Result<(LinearModel, FitReport)> {
    let d = basis.dim();
    if f.dim() != d || grid.points().dim() != d {
        return Err(Error::Dimension(format!(
            "basis dimension {d}, field {}, grid {}",
            f.dim(),
            grid.points().dim()
        )));
    }
    let m = basis.size();
    let tab = basis.eval(grid.points())?;
    let n = grid.len();
    let mut target = DMatrix::zeros(n, m);
    let mut fv = vec![0.0; d];
    for (p, x) in grid.points().iter().enumerate() {
        f.eval(x, &mut fv);
        for k in 0..m {
            target[(p, k)] = (0..d).map(|c| tab.gradient(p, k, c) * fv[c]).sum();
        }
    }
    let ls = WeightedLs::new(&tab.values, grid.weights())?;
    let coef = ls.solve(&target);
    let mut a = coef.transpose();
    let mut iterations = 0;
    let mut converged = true;
    let mut violation = 0.0;

    if let Some(kappa) = kappa0 {
        let constraint = Constraint {
            coupling: Coupling::Linear,
            kappa: vec![kappa],
        };
        let (sigma, u) = ls.gram_eigen();
        let gram = GramPair {
            lambda: DVector::from_element(1, 1.0),
            v: DMatrix::identity(1, 1),
            sigma,
            u,
        };
        let center: Vec<DMatrix<f64>> = (0..m).map(|k| a.rows(k, 1).into_owned()).collect();
        let mut out = constrained::admm_l2(&center, &gram, &constraint, &admm_opts(opts));
        if opts.norm == FitNorm::Linf {
            let problem = MinimaxDesign {
                design: tab.values.clone(),
                targets: target.clone(),
            };
            let cv = constrained::condat_vu_linf(&problem, &out.blocks, &constraint, &admm_opts(opts));
            out = constrained::Outcome {
                iterations: out.iterations + cv.iterations,
                ..cv
            };
        }
        for k in 0..m {
            a.row_mut(k).copy_from(&out.blocks[k].row(0));
        }
        iterations = out.iterations;
        converged = out.converged;
        violation = out.violation;
    } else if opts.norm == FitNorm::Linf {
        for k in 0..m {
            let fit = linf::minimax(
                &tab.values,
                &target.column(k).into_owned(),
                &a.row(k).transpose(),
                400,
            )?;
            a.row_mut(k).copy_from(&fit.coefficients.transpose());
            iterations += fit.iterations as usize;
            converged &= fit.solved;
        }
    }

    let resid = &target - &tab.values * a.transpose();
    let (sup, l2) = column_norms(&resid, grid.weights());
    let mut report = FitReport::new(opts.norm, sup, l2, vec![log_norm_2(&a)?]);
    report.iterations = iterations;
    report.converged = converged;
    report.constraint_violation = violation;
    Ok((LinearModel { a }, report))
}

fn check_kappa(kappa: Option<&[f64]>, expected: usize) -> Result<()> {
    if let Some(k) = kappa {
        if k.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "expected {expected} log-norm bounds, got {}",
                k.len()
            )));
        }
        if k.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::InvalidArgument("log-norm bounds must be nonnegative".into()));
        }
    }
    Ok(())
}

struct PairFit {
    coeffs: Vec<DMatrix<f64>>,
    sup: Vec<f64>,
    l2: Vec<f64>,
    iterations: usize,
    converged: bool,
    violation: f64,
}

fn fit_pair(
    phi: &KernelBasis,
    psi: &KernelBasis,
    field: &dyn PairField,
    grid: &PairGrid,
    opts: &FitOptions,
    coupling: Coupling,
    kappa: Option<&[f64]>,
) -> Result<PairFit> {
    let problem = PairProblem::new(phi, psi, field, grid)?;
    let ls_x = WeightedLs::new(&problem.phi.values, &problem.wx)?;
    let ls_y = WeightedLs::new(&problem.psi, &problem.wy)?;
    let mut coeffs = problem.l2_coefficients(&ls_x, &ls_y);
    let mut iterations = 0;
    let mut converged = true;
    let mut violation = 0.0;

    let sub_grid = || -> PairGrid {
        let n = opts
            .linf_points
            .unwrap_or(if phi.dim() == 1 { 41 } else { 7 });
        PairGrid::new(
            QuadratureGrid::trapezoid(grid.x.domain(), n),
            QuadratureGrid::trapezoid(grid.y.domain(), n),
        )
    };

    let constrained_active = kappa.is_some_and(|k| k.iter().any(|v| v.is_finite()));
    if constrained_active {
        let kappa = kappa.unwrap_or_default();
        if coupling == Coupling::Quadratic && (grid.x.points() != grid.y.points() || grid.x.weights() != grid.y.weights()) {
            return Err(Error::InvalidArgument(
                "constrained quadratic fits need identical x and y grids".into(),
            ));
        }
        let constraint = Constraint {
            coupling,
            kappa: kappa.to_vec(),
        };
        let (lambda, v) = ls_x.gram_eigen();
        let (sigma, u) = ls_y.gram_eigen();
        let gram = GramPair { lambda, v, sigma, u };
        let mut out = constrained::admm_l2(&coeffs, &gram, &constraint, &admm_opts(opts));
        if opts.norm == FitNorm::Linf {
            let (design, targets) = pair::minimax_design(phi, psi, field, &sub_grid())?;
            let problem = MinimaxDesign { design, targets };
            let cv = constrained::condat_vu_linf(&problem, &out.blocks, &constraint, &admm_opts(opts));
            out = constrained::Outcome {
                iterations: out.iterations + cv.iterations,
                ..cv
            };
        }
        coeffs = out.blocks;
        iterations = out.iterations;
        converged = out.converged;
        violation = out.violation;
    } else if opts.norm == FitNorm::Linf {
        let (design, targets) = pair::minimax_design(phi, psi, field, &sub_grid())?;
        let (l2_sup, l2_l2) = problem.residuals(&coeffs);
        let mp = psi.size();
        let mut lp_coeffs = coeffs.clone();
        for (k, ck) in lp_coeffs.iter_mut().enumerate() {
            let flat = DVector::from_fn(ck.len(), |i, _| ck[(i / mp, i % mp)]);
            let fit = linf::minimax(&design, &targets.column(k).into_owned(), &flat, 400)?;
            *ck = DMatrix::from_fn(ck.nrows(), mp, |l, r| fit.coefficients[l * mp + r]);
            iterations += fit.iterations as usize;
            converged &= fit.solved;
        }
        let (lp_sup, lp_l2) = problem.residuals(&lp_coeffs);
        // keep the least-squares kernel wherever the coarse-grid minimax
        // solution is worse on the full grid
        let mut sup = Vec::with_capacity(coeffs.len());
        let mut l2 = Vec::with_capacity(coeffs.len());
        for k in 0..coeffs.len() {
            if lp_sup[k] <= l2_sup[k] {
                coeffs[k] = lp_coeffs[k].clone();
                sup.push(lp_sup[k]);
                l2.push(lp_l2[k]);
            } else {
                sup.push(l2_sup[k]);
                l2.push(l2_l2[k]);
            }
        }
        return Ok(PairFit {
            coeffs,
            sup,
            l2,
            iterations,
            converged,
            violation,
        });
    }

    let (sup, l2) = problem.residuals(&coeffs);
    Ok(PairFit {
        coeffs,
        sup,
        l2,
        iterations,
        converged,
        violation,
    })
}

/// Fits `B_k` with `(d phi_k/dx) g(x, y) ~ sum_{l,j} B_k[l][j] phi_l(x) phi_j(y)`;
/// `kappa[l]` bounds both `nu_2[B~_l]` and `nu_2[-B~_l]`.
pub fn fit_quadratic(
    basis: &KernelBasis,
    g: &dyn PairField,
    grid: &PairGrid,
    opts: &FitOptions,
    kappa: Option<&[f64]>,
) -> Result<(QuadraticModel, FitReport)> {
    check_kappa(kappa, basis.size())?;
    let fit = fit_pair(basis, basis, g, grid, opts, Coupling::Quadratic, kappa)?;
    let model = QuadraticModel::from_b(fit.coeffs)?;
    let log_norms = model
        .btilde
        .iter()
        .map(log_norm_2_abs)
        .collect::<Result<Vec<_>>>()?;
    let mut report = FitReport::new(opts.norm, fit.sup, fit.l2, log_norms);
    report.iterations = fit.iterations;
    report.converged = fit.converged;
    report.constraint_violation = fit.violation;
    Ok((model, report))
}

/// Fits `Gamma_r` with `(d phi_k/dx) eta(x, y) ~ sum_{l,r} Gamma_r[k][l] psi_r(y) phi_l(x)`;
/// `kappa[r]` bounds both `nu_2[Gamma_r]` and `nu_2[-Gamma_r]`.
pub fn fit_leader(
    phi: &KernelBasis,
    psi: &KernelBasis,
    eta: &dyn PairField,
    grid: &PairGrid,
    opts: &FitOptions,
    kappa: Option<&[f64]>,
) -> Result<(LeaderModel, FitReport)> {
    check_kappa(kappa, psi.size())?;
    let fit = fit_pair(phi, psi, eta, grid, opts, Coupling::Leader, kappa)?;
    let m = phi.size();
    let gamma: Vec<DMatrix<f64>> = (0..psi.size())
        .map(|r| DMatrix::from_fn(m, m, |k, l| fit.coeffs[k][(l, r)]))
        .collect();
    let log_norms = gamma.iter().map(log_norm_2_abs).collect::<Result<Vec<_>>>()?;
    let mut report = FitReport::new(opts.norm, fit.sup, fit.l2, log_norms);
    report.iterations = fit.iterations;
    report.converged = fit.converged;
    report.constraint_violation = fit.violation;
    Ok((
        LeaderModel {
            gamma,
            psi: psi.clone(),
        },
        report,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Quadratic,
    Leader,
}

/// Row-major matrix with entries as decimal text (17 significant digits).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixText {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<String>,
}

impl MatrixText {
    pub fn from_matrix(a: &DMatrix<f64>) -> Self {
        let (rows, cols) = a.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(format!("{:.16e}", a[(i, j)]));
            }
        }
        Self { rows, cols, data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Dimension(format!(
                "matrix text has {} entries for {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        let vals = self
            .data
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad matrix entry {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &vals))
    }
}

/// Serialized form of one fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub kind: ModelKind,
    /// Number of kernels `M`.
    pub size: usize,
    pub domain: BoxDomain,
    pub basis: BasisSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_basis: Option<BasisSpec>,
    /// `[A]`, `B_1..B_M`, or `Gamma_1..Gamma_{M_L}`.
    pub matrices: Vec<MatrixText>,
    pub report: FitReport,
}

impl ModelDocument {
    pub fn linear(model: &LinearModel, basis: &KernelBasis, report: &FitReport) -> Self {
        Self {
            kind: ModelKind::Linear,
            size: model.size(),
            domain: basis.domain().clone(),
            basis: basis.spec().clone(),
            psi_basis: None,
            matrices: vec![MatrixText::from_matrix(&model.a)],
            report: report.clone(),
        }
    }

    pub fn quadratic(model: &QuadraticModel, basis: &KernelBasis, report: &FitReport) -> Self {
        Self {
            kind: ModelKind::Quadratic,
            size: model.size(),
            domain: basis.domain().clone(),
            basis: basis.spec().clone(),
            psi_basis: None,
            matrices: model.b.iter().map(MatrixText::from_matrix).collect(),
            report: report.clone(),
        }
    }

    pub fn leader(model: &LeaderModel, basis: &KernelBasis, report: &FitReport) -> Self {
        Self {
            kind: ModelKind::Leader,
            size: model.size(),
            domain: basis.domain().clone(),
            basis: basis.spec().clone(),
            psi_basis: Some(model.psi.spec().clone()),
            matrices: model.gamma.iter().map(MatrixText::from_matrix).collect(),
            report: report.clone(),
        }
    }

    fn matrices(&self) -> Result<Vec<DMatrix<f64>>> {
        let ms = self
            .matrices
            .iter()
            .map(MatrixText::to_matrix)
            .collect::<Result<Vec<_>>>()?;
        if ms.iter().any(|m| m.shape() != (self.size, self.size)) {
            return Err(Error::Dimension(format!("model matrices must be {0}x{0}", self.size)));
        }
        Ok(ms)
    }

    fn expect(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidArgument(format!(
                "model document is {:?}, expected {kind:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn basis(&self) -> Result<KernelBasis> {
        make_basis(&self.basis, &self.domain)
    }

    pub fn to_linear(&self) -> Result<LinearModel> {
        self.expect(ModelKind::Linear)?;
        let mut ms = self.matrices()?;
        if ms.len() != 1 {
            return Err(Error::Dimension("linear model needs exactly one matrix".into()));
        }
        Ok(LinearModel { a: ms.remove(0) })
    }

    pub fn to_quadratic(&self) -> Result<QuadraticModel> {
        self.expect(ModelKind::Quadratic)?;
        QuadraticModel::from_b(self.matrices()?)
    }

    pub fn to_leader(&self) -> Result<LeaderModel> {
        self.expect(ModelKind::Leader)?;
        let spec = self
            .psi_basis
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("leader model without psi basis".into()))?;
        let psi = make_basis(spec, &self.domain)?;
        let gamma = self.matrices()?;
        if gamma.len() != psi.size() {
            return Err(Error::Dimension(format!(
                "{} Gamma matrices for {} psi functions",
                gamma.len(),
                psi.size()
            )));
        }
        Ok(LeaderModel { gamma, psi })
    }
}

#[cfg(test)]
mod tests;
