//! Densities and mass bounds from moment vectors.
//!
//! Measures live on a uniform cell grid over the basis domain. Moments of a
//! grid measure use the cell centers, `sum_c phi_k(center_c) Phi_c v`.

mod primal_dual;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::KernelBasis;
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, PointSet};
use crate::io::{write_csv, write_json};
use crate::lp::{LinearProgram, LpOptions, LpStatus};

pub use primal_dual::PdOptions;

/// Uniform cell grid, last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub domain: BoxDomain,
    pub shape: Vec<usize>,
}

impl CellGrid {
    pub fn new(domain: &BoxDomain, shape: &[usize]) -> Result<Self> {
        if shape.len() != domain.dim() || shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "cell grid shape {shape:?} does not fit a {}-dimensional domain",
                domain.dim()
            )));
        }
        Ok(Self {
            domain: domain.clone(),
            shape: shape.to_vec(),
        })
    }

    /// 400 cells in 1-D, 80 x 80 in 2-D.
    pub fn default_for(domain: &BoxDomain) -> Result<Self> {
        let shape = match domain.dim() {
            1 => vec![400],
            2 => vec![80, 80],
            d => vec![20; d],
        };
        Self::new(domain, &shape)
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.domain.width(axis) / self.shape[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.shape.len()).map(|a| self.spacing(a)).product()
    }

    fn multi_index(&self, mut c: usize) -> Vec<usize> {
        let mut idx = vec![0; self.shape.len()];
        for a in (0..self.shape.len()).rev() {
            idx[a] = c % self.shape[a];
            c /= self.shape[a];
        }
        idx
    }

    pub fn centers(&self) -> PointSet {
        let d = self.shape.len();
        let mut coords = Vec::with_capacity(self.len() * d);
        for c in 0..self.len() {
            for (a, i) in self.multi_index(c).into_iter().enumerate() {
                coords.push(self.domain.lower()[a] + (i as f64 + 0.5) * self.spacing(a));
            }
        }
        PointSet::new(d, coords).expect("consistent coordinates")
    }

    /// Interior faces `(lower cell, upper cell, face area)`.
    pub fn faces(&self) -> Vec<(usize, usize, f64)> {
        let d = self.shape.len();
        let mut stride = vec![1usize; d];
        for a in (0..d.saturating_sub(1)).rev() {
            stride[a] = stride[a + 1] * self.shape[a + 1];
        }
        let mut out = Vec::new();
        for c in 0..self.len() {
            let idx = self.multi_index(c);
            for a in 0..d {
                if idx[a] + 1 < self.shape[a] {
                    let area: f64 = (0..d).filter(|&b| b != a).map(|b| self.spacing(b)).product();
                    out.push((c, c + stride[a], area));
                }
            }
        }
        out
    }

    /// Cells whose center lies in `omega`.
    pub fn mask(&self, omega: &BoxDomain) -> Result<Vec<bool>> {
        if omega.dim() != self.shape.len() {
            return Err(Error::Dimension("region and grid dimensions differ".into()));
        }
        Ok(self.centers().iter().map(|p| omega.contains(p, 1e-12)).collect())
    }

    /// `a[(k, c)] = phi_k(center_c) * v`.
    pub fn moment_matrix(&self, basis: &KernelBasis) -> Result<DMatrix<f64>> {
        if basis.domain() != &self.domain {
            return Err(Error::InvalidArgument("cell grid and basis use different domains".into()));
        }
        let vals = basis.values(&self.centers())?;
        Ok(vals.transpose() * self.cell_volume())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    pub grid: CellGrid,
    /// Density per cell.
    pub density: Vec<f64>,
}

impl GridMeasure {
    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn tv(&self) -> f64 {
        total_variation(&self.grid, &self.density)
    }

    /// `cell_center..., phi` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.grid.shape.len();
        let mut header: Vec<String> = if d == 1 {
            vec!["x".into()]
        } else {
            (1..=d).map(|a| format!("x_{a}")).collect()
        };
        header.push("phi".into());
        let centers = self.grid.centers();
        let rows = centers.iter().zip(&self.density).map(|(p, phi)| {
            let mut r = p.to_vec();
            r.push(*phi);
            r
        });
        write_csv(path, &header, rows)
    }
}

pub(crate) fn total_variation(grid: &CellGrid, density: &[f64]) -> f64 {
    grid.faces()
        .iter()
        .map(|&(a, b, w)| w * (density[b] - density[a]).abs())
        .sum()
}

/// `sum_c phi_k(center_c) Phi_c v`.
pub fn measure_moments(measure: &GridMeasure, basis: &KernelBasis) -> Result<DVector<f64>> {
    let a = measure.grid.moment_matrix(basis)?;
    Ok(a * DVector::from_column_slice(&measure.density))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub measure: GridMeasure,
    /// `max_k |m_k - (A Phi)_k|`.
    pub epsilon: f64,
    pub tv_value: f64,
    pub lambda: f64,
    /// `tv_value + lambda * epsilon`.
    pub objective: f64,
    pub iterations: usize,
    pub duality_gap: f64,
    pub converged: bool,
}

fn check_moments(m: &[f64], basis: &KernelBasis) -> Result<Option<f64>> {
    if m.len() != basis.size() {
        return Err(Error::Dimension(format!(
            "{} moments for a basis of size {}",
            m.len(),
            basis.size()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("moments must be finite".into()));
    }
    let pinned = basis.constant_index().map(|i| m[i]);
    if let Some(mass) = pinned {
        if (mass - 1.0).abs() > 1e-8 {
            log::warn!("constant-kernel moment is {mass}, not 1; reconstructing with that mass");
        }
        if mass < 0.0 {
            return Err(Error::InvalidArgument("negative total mass".into()));
        }
    }
    Ok(pinned)
}

fn finish(grid: &CellGrid, a: &DMatrix<f64>, m: &[f64], density: Vec<f64>, lambda: f64) -> ReconstructionResult {
    let r = DVector::from_column_slice(m) - a * DVector::from_column_slice(&density);
    let epsilon = r.amax();
    let tv_value = total_variation(grid, &density);
    ReconstructionResult {
        measure: GridMeasure {
            grid: grid.clone(),
            density,
        },
        epsilon,
        tv_value,
        lambda,
        objective: tv_value + lambda * epsilon,
        iterations: 0,
        duality_gap: 0.0,
        converged: false,
    }
}

/// `min TV(Phi) + lambda eps` subject to `|m_k - (A Phi)_k| <= eps`, `Phi >= 0`,
/// solved by preconditioned primal-dual iterations.
pub fn reconstruct_tv(
    m: &[f64],
    basis: &KernelBasis,
    grid: &CellGrid,
    lambda: f64,
    opts: &PdOptions,
) -> Result<ReconstructionResult> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    let pinned = check_moments(m, basis)?;
    let a = grid.moment_matrix(basis)?;
    let out = primal_dual::solve(grid, &a, m, lambda, pinned, opts);
    let mut res = finish(grid, &a, m, out.density, lambda);
    res.iterations = out.iterations;
    res.duality_gap = out.gap;
    res.converged = out.converged;
    if !res.converged {
        log::warn!(
            "TV reconstruction stopped after {} iterations with gap {:e}",
            res.iterations,
            res.duality_gap
        );
    }
    Ok(res)
}

/// The same discrete problem as [`reconstruct_tv`] as one linear program.
pub fn reconstruct_tv_lp(m: &[f64], basis: &KernelBasis, grid: &CellGrid, lambda: f64) -> Result<ReconstructionResult> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    let pinned = check_moments(m, basis)?;
    let a = grid.moment_matrix(basis)?;
    let n = grid.len();
    let faces = grid.faces();
    let nf = faces.len();
    let eps = n + nf;
    let mut lp = LinearProgram::new(n + nf + 1);
    for (f, &(_, _, w)) in faces.iter().enumerate() {
        lp.set_objective(n + f, w);
    }
    lp.set_objective(eps, lambda);
    for (f, &(lo, hi, _)) in faces.iter().enumerate() {
        lp.add_le(vec![(hi, 1.0), (lo, -1.0), (n + f, -1.0)], 0.0);
        lp.add_le(vec![(hi, -1.0), (lo, 1.0), (n + f, -1.0)], 0.0);
    }
    // the constant kernel's band rows repeat the mass equality and stall the solver
    let skip = pinned.and(basis.constant_index());
    for k in (0..a.nrows()).filter(|&k| Some(k) != skip) {
        let row: Vec<(usize, f64)> = (0..n).filter(|&c| a[(k, c)] != 0.0).map(|c| (c, a[(k, c)])).collect();
        let mut up = row.clone();
        up.push((eps, -1.0));
        lp.add_le(up, m[k]);
        let mut down: Vec<(usize, f64)> = row.iter().map(|&(c, v)| (c, -v)).collect();
        down.push((eps, -1.0));
        lp.add_le(down, -m[k]);
    }
    for c in 0..n {
        lp.add_lower_bound(c, 0.0);
    }
    if let Some(mass) = pinned {
        let v = grid.cell_volume();
        lp.add_eq((0..n).map(|c| (c, v)).collect(), mass);
    }
    let sol = lp.solve(&LpOptions {
        tol: 1e-10,
        max_iter: 500,
    })?;
    if !sol.is_usable() {
        return Err(Error::Lp(format!("TV linear program ended with {:?}", sol.status)));
    }
    let density: Vec<f64> = sol.x[..n].iter().map(|v| v.max(0.0)).collect();
    let mut res = finish(grid, &a, m, density, lambda);
    res.iterations = sol.iterations as usize;
    res.duality_gap = (sol.objective - sol.dual_objective).abs();
    res.converged = sol.status == LpStatus::Optimal;
    Ok(res)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassBoundResult {
    pub omega: BoxDomain,
    pub min_mass: f64,
    pub max_mass: f64,
    /// Half-width of the moment-matching band used (0 for exact matching).
    pub delta: f64,
    /// Smallest band at which the moments are matchable on the grid.
    pub delta_star: f64,
    /// Optimal values of the explicit dual programs.
    pub dual_min: f64,
    pub dual_max: f64,
}

impl MassBoundResult {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Export<'a> {
            omega: &'a BoxDomain,
            min: f64,
            max: f64,
            delta: f64,
        }
        write_json(
            path,
            &Export {
                omega: &self.omega,
                min: self.min_mass,
                max: self.max_mass,
                delta: self.delta,
            },
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MassBoundOptions {
    /// Fixed band half-width; `None` uses exact matching when possible and
    /// otherwise a band slightly above `delta_star`.
    pub delta: Option<f64>,
    /// `delta_star` below this counts as exactly matchable.
    pub feasibility_tol: f64,
}

impl Default for MassBoundOptions {
    fn default() -> Self {
        Self {
            delta: None,
            feasibility_tol: 1e-9,
        }
    }
}

const MASS_LP: LpOptions = LpOptions {
    tol: 1e-10,
    max_iter: 500,
};

/// Row equilibration factors for the moment rows.
fn row_scales(a: &DMatrix<f64>) -> Vec<f64> {
    a.row_iter()
        .map(|r| {
            let s = r.amax();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect()
}

fn sparse_row(a: &DMatrix<f64>, k: usize, scale: f64) -> Vec<(usize, f64)> {
    (0..a.ncols())
        .filter(|&c| a[(k, c)] != 0.0)
        .map(|c| (c, a[(k, c)] / scale))
        .collect()
}

/// `min delta` such that `|(A mu)_k - m_k| <= delta` for some `mu >= 0`.
fn delta_star(a: &DMatrix<f64>, m: &[f64]) -> Result<f64> {
    let n = a.ncols();
    let mut lp = LinearProgram::new(n + 1);
    lp.set_objective(n, 1.0);
    for k in 0..a.nrows() {
        let mut up = sparse_row(a, k, 1.0);
        let mut down: Vec<(usize, f64)> = up.iter().map(|&(c, v)| (c, -v)).collect();
        up.push((n, -1.0));
        down.push((n, -1.0));
        lp.add_le(up, m[k]);
        lp.add_le(down, -m[k]);
    }
    for c in 0..=n {
        lp.add_lower_bound(c, 0.0);
    }
    let sol = lp.solve(&MASS_LP)?;
    if !sol.is_usable() {
        return Err(Error::Lp(format!("relaxation LP ended with {:?}", sol.status)));
    }
    // the residual actually achieved by the returned masses, not the bound t
    let mu = DVector::from_iterator(n, sol.x[..n].iter().map(|v| v.max(0.0)));
    let r = DVector::from_column_slice(m) - a * mu;
    Ok(r.amax())
}

/// Optimizes `sense * sum_{c in Omega} mu_c` over cell masses matching the moments
/// within `delta`; returns the primal optimum.
fn mass_primal(a: &DMatrix<f64>, m: &[f64], mask: &[bool], delta: f64, maximize: bool) -> Result<f64> {
    let n = a.ncols();
    let sign = if maximize { -1.0 } else { 1.0 };
    let mut lp = LinearProgram::new(n);
    for (c, &inside) in mask.iter().enumerate() {
        if inside {
            lp.set_objective(c, sign);
        }
    }
    let scales = row_scales(a);
    for k in 0..a.nrows() {
        let row = sparse_row(a, k, scales[k]);
        let target = m[k] / scales[k];
        if delta == 0.0 {
            lp.add_eq(row, target);
        } else {
            let band = delta / scales[k];
            lp.add_le(row.clone(), target + band);
            lp.add_ge(row, target - band);
        }
    }
    for c in 0..n {
        lp.add_lower_bound(c, 0.0);
    }
    let sol = lp.solve(&MASS_LP)?;
    match sol.status {
        LpStatus::Optimal | LpStatus::Inaccurate => Ok(sign * sol.objective),
        LpStatus::Unbounded if maximize => Ok(f64::INFINITY),
        s => Err(Error::Lp(format!("mass-bound LP ended with {s:?}"))),
    }
}

/// Explicit dual of [`mass_primal`]. With `u, v >= 0` the multipliers of the
/// upper and lower band rows (`y = u - v` when `delta = 0`):
/// max: `min (m + delta)^T u - (m - delta)^T v` s.t. `A^T (u - v) >= 1_Omega`;
/// min: `max (m - delta)^T v - (m + delta)^T u` s.t. `A^T (v - u) <= 1_Omega`.
fn mass_dual(a: &DMatrix<f64>, m: &[f64], mask: &[bool], delta: f64, maximize: bool) -> Result<f64> {
    let (mk, n) = a.shape();
    let scales = row_scales(a);
    let mut lp = LinearProgram::new(2 * mk);
    for k in 0..mk {
        let hi = (m[k] + delta) / scales[k];
        let lo = (m[k] - delta) / scales[k];
        lp.set_objective(k, hi);
        lp.set_objective(mk + k, -lo);
        lp.add_lower_bound(k, 0.0);
        lp.add_lower_bound(mk + k, 0.0);
    }
    for c in 0..n {
        let mut row = Vec::with_capacity(2 * mk);
        for k in 0..mk {
            let v = a[(k, c)] / scales[k];
            if v != 0.0 {
                row.push((k, v));
                row.push((mk + k, -v));
            }
        }
        let rhs = if mask[c] { 1.0 } else { 0.0 };
        if maximize {
            lp.add_ge(row, rhs);
        } else {
            // A^T (v - u) <= 1_Omega  <=>  A^T (u - v) >= -1_Omega
            lp.add_ge(row, -rhs);
        }
    }
    let sol = lp.solve(&MASS_LP)?;
    match sol.status {
        LpStatus::Optimal | LpStatus::Inaccurate => {
            if maximize {
                Ok(sol.objective)
            } else {
                Ok(-sol.objective)
            }
        }
        LpStatus::Infeasible if maximize => Ok(f64::INFINITY),
        s => Err(Error::Lp(format!("mass-bound dual LP ended with {s:?}"))),
    }
}

/// Smallest and largest mass a nonnegative grid measure with moments `m` can
/// place in `omega`.
pub fn mass_bounds(
    m: &[f64],
    basis: &KernelBasis,
    grid: &CellGrid,
    omega: &BoxDomain,
    opts: &MassBoundOptions,
) -> Result<MassBoundResult> {
    check_moments(m, basis)?;
    // variables are cell masses, so the coefficients are plain kernel values
    let a = grid.moment_matrix(basis)? / grid.cell_volume();
    let mask = grid.mask(omega)?;
    let dstar = delta_star(&a, m)?;
    let delta = match opts.delta {
        Some(d) if d >= dstar => d,
        Some(d) => {
            log::warn!("band {d:e} below the matchable minimum {dstar:e}; widening");
            dstar * (1.0 + 1e-3) + 1e-12
        }
        None if dstar <= opts.feasibility_tol => 0.0,
        None => {
            log::warn!("moments are not matchable on the grid; using band {dstar:e}");
            dstar * (1.0 + 1e-3) + 1e-12
        }
    };
    let max_mass = mass_primal(&a, m, &mask, delta, true)?;
    let min_mass = mass_primal(&a, m, &mask, delta, false)?.max(0.0);
    let dual_max = mass_dual(&a, m, &mask, delta, true)?;
    let dual_min = mass_dual(&a, m, &mask, delta, false)?;
    Ok(MassBoundResult {
        omega: omega.clone(),
        min_mass,
        max_mass,
        delta,
        delta_star: dstar,
        dual_min,
        dual_max,
    })
}
