//! Small linear-programming front end over an interior-point conic solver.
//!
//! Problems are `min c^T x` subject to sparse equality rows `A_eq x = b_eq`
//! and inequality rows `A_ub x <= b_ub`; variables are free unless bounded
//! through rows.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::{Error, Result};

/// Clarabel's default static KKT regularization.
const STATIC_REG: f64 = 1e-8;

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    n: usize,
    c: Vec<f64>,
    eq: Vec<(Vec<(usize, f64)>, f64)>,
    ub: Vec<(Vec<(usize, f64)>, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    /// Reduced-accuracy optimum.
    Inaccurate,
    Infeasible,
    Unbounded,
    Failed,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// Multipliers of the equality rows (sign convention: `c + A_eq^T y_eq + A_ub^T y_ub = 0`).
    pub y_eq: Vec<f64>,
    /// Multipliers of the inequality rows, nonnegative.
    pub y_ub: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: u32,
}

impl LpSolution {
    pub fn is_usable(&self) -> bool {
        matches!(self.status, LpStatus::Optimal | LpStatus::Inaccurate)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LpOptions {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 400,
        }
    }
}

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            c: vec![0.0; n],
            ..Default::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn set_objective(&mut self, j: usize, cj: f64) {
        self.c[j] = cj;
    }

    pub fn add_eq(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.eq.push((row, rhs));
    }

    pub fn add_le(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.ub.push((row, rhs));
    }

    pub fn add_ge(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.ub.push((row.into_iter().map(|(j, v)| (j, -v)).collect(), -rhs));
    }

    /// `x_j >= lo`.
    pub fn add_lower_bound(&mut self, j: usize, lo: f64) {
        self.add_ge(vec![(j, 1.0)], lo);
    }

    /// Solves at `opts.tol`. If the interior-point method stalls, retries once
    /// with a tolerance of at least 1e-8 and ten times the default KKT
    /// regularization, reporting success there as `Inaccurate`.
    pub fn solve(&self, opts: &LpOptions) -> Result<LpSolution> {
        let first = self.solve_once(opts, STATIC_REG)?;
        if first.status != LpStatus::Failed {
            return Ok(first);
        }
        let retry = LpOptions {
            tol: opts.tol.max(1e-8),
            ..*opts
        };
        let mut second = self.solve_once(&retry, 10.0 * STATIC_REG)?;
        if second.status == LpStatus::Optimal {
            second.status = LpStatus::Inaccurate;
        }
        Ok(second)
    }

    fn solve_once(&self, opts: &LpOptions, static_reg: f64) -> Result<LpSolution> {
        let m_eq = self.eq.len();
        let m = m_eq + self.ub.len();
        let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::with_capacity(m);
        for (i, (row, rhs)) in self.eq.iter().chain(&self.ub).enumerate() {
            for &(j, v) in row {
                if j >= self.n {
                    return Err(Error::Lp(format!("row {i} references variable {j}")));
                }
                if v != 0.0 {
                    rows.push(i);
                    cols.push(j);
                    vals.push(v);
                }
            }
            b.push(*rhs);
        }
        let a = CscMatrix::new_from_triplets(m, self.n, rows, cols, vals);
        let p = CscMatrix::zeros((self.n, self.n));
        let mut cones = Vec::new();
        if m_eq > 0 {
            cones.push(SupportedConeT::ZeroConeT(m_eq));
        }
        if m > m_eq {
            cones.push(SupportedConeT::NonnegativeConeT(m - m_eq));
        }
        let settings = DefaultSettings {
            verbose: false,
            max_iter: opts.max_iter,
            tol_gap_abs: opts.tol,
            tol_gap_rel: opts.tol,
            tol_feas: opts.tol,
            presolve_enable: false,
            static_regularization_constant: static_reg,
            ..Default::default()
        };
        let mut solver = DefaultSolver::new(&p, &self.c, &a, &b, &cones, settings)
            .map_err(|e| Error::Lp(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => LpStatus::Optimal,
            SolverStatus::AlmostSolved => LpStatus::Inaccurate,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                LpStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                LpStatus::Unbounded
            }
            other => {
                log::debug!("clarabel stopped with {other:?}");
                LpStatus::Failed
            }
        };
        Ok(LpSolution {
            status,
            x: sol.x.clone(),
            y_eq: sol.z[..m_eq].to_vec(),
            y_ub: sol.z[m_eq..].to_vec(),
            objective: sol.obj_val,
            dual_objective: sol.obj_val_dual,
            iterations: sol.iterations,
        })
    }
}
