//! Log-norm constrained fits.
//!
//! The coefficients are blocks `X_k`, one per kernel. A linear map `L` sends
//! them to the matrices whose log-norms are constrained (`A`, `B~_l` or
//! `Gamma_r`). The L2 problem is solved by ADMM with the quadratic step done
//! exactly in the eigenbasis of the Gram matrices; the L-infinity problem by a
//! primal-dual splitting on a log-sum-exp smoothing of the grid maximum.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{log_norm_2, log_norm_2_abs, project_log_norm, project_log_norm_abs};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Coupling {
    /// One `1 x M` block per kernel; `L X = A` with row `k` = `X_k`.
    Linear,
    /// `M x M` blocks; `(L X)_l[i][j] = X_i[l][j] + X_i[j][l]`.
    Quadratic,
    /// `M x M_psi` blocks; `(L X)_r[k][l] = X_k[l][r]`.
    Leader,
}

#[derive(Clone, Debug)]
pub(crate) struct Constraint {
    pub coupling: Coupling,
    /// One bound per constrained matrix; `INFINITY` leaves it free.
    pub kappa: Vec<f64>,
}

pub(crate) struct Outcome {
    pub blocks: Vec<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub violation: f64,
}

fn frob2(ms: &[DMatrix<f64>]) -> f64 {
    ms.iter().map(|m| m.norm_squared()).sum()
}

fn axpy(a: f64, x: &[DMatrix<f64>], y: &mut [DMatrix<f64>]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi * a;
    }
}

impl Constraint {
    pub fn apply(&self, x: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let m = x.len();
        match self.coupling {
            Coupling::Linear => {
                vec![DMatrix::from_fn(m, m, |k, l| x[k][(0, l)])]
            }
            Coupling::Quadratic => (0..m)
                .map(|l| DMatrix::from_fn(m, m, |i, j| x[i][(l, j)] + x[i][(j, l)]))
                .collect(),
            Coupling::Leader => {
                let mp = x[0].ncols();
                (0..mp)
                    .map(|r| DMatrix::from_fn(m, m, |k, l| x[k][(l, r)]))
                    .collect()
            }
        }
    }

    pub fn adjoint(&self, z: &[DMatrix<f64>], m: usize) -> Vec<DMatrix<f64>> {
        match self.coupling {
            Coupling::Linear => (0..m)
                .map(|k| DMatrix::from_fn(1, m, |_, l| z[0][(k, l)]))
                .collect(),
            Coupling::Quadratic => (0..m)
                .map(|i| DMatrix::from_fn(m, m, |l, j| z[l][(i, j)] + z[j][(i, l)]))
                .collect(),
            Coupling::Leader => {
                let mp = z.len();
                (0..m)
                    .map(|k| DMatrix::from_fn(m, mp, |l, r| z[r][(k, l)]))
                    .collect()
            }
        }
    }

    /// Squared operator norm of `L`.
    pub fn op_norm_sq(&self) -> f64 {
        match self.coupling {
            Coupling::Quadratic => 4.0,
            _ => 1.0,
        }
    }

    pub fn project(&self, z: &mut [DMatrix<f64>]) {
        for (zi, &k) in z.iter_mut().zip(&self.kappa) {
            if k.is_finite() {
                *zi = match self.coupling {
                    Coupling::Linear => project_log_norm(zi, k),
                    _ => project_log_norm_abs(zi, k),
                };
            }
        }
    }

    /// Largest constraint excess over the image matrices.
    pub fn violation_of(&self, z: &[DMatrix<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (zi, &k) in z.iter().zip(&self.kappa) {
            if !k.is_finite() {
                continue;
            }
            let nu = match self.coupling {
                Coupling::Linear => log_norm_2(zi),
                _ => log_norm_2_abs(zi),
            }
            .unwrap_or(f64::INFINITY);
            worst = worst.max(nu - k);
        }
        worst
    }

    pub fn violation(&self, x: &[DMatrix<f64>]) -> f64 {
        self.violation_of(&self.apply(x))
    }

    /// Makes `x` feasible: exact projection when `L` is a coordinate
    /// reshuffle, otherwise a uniform shrink of all blocks.
    pub fn enforce(&self, x: &mut [DMatrix<f64>]) {
        let m = x.len();
        match self.coupling {
            Coupling::Linear | Coupling::Leader => {
                let mut z = self.apply(x);
                self.project(&mut z);
                let y = self.adjoint(&z, m);
                x.clone_from_slice(&y);
            }
            Coupling::Quadratic => {
                let z = self.apply(x);
                let mut factor: f64 = 1.0;
                for (zi, &k) in z.iter().zip(&self.kappa) {
                    if !k.is_finite() {
                        continue;
                    }
                    let nu = log_norm_2_abs(zi).unwrap_or(f64::INFINITY);
                    if nu > k && k > 0.0 {
                        factor = factor.max(nu / k);
                    }
                }
                if factor > 1.0 {
                    for b in x.iter_mut() {
                        *b /= factor;
                    }
                }
            }
        }
    }
}

/// Eigen-coordinates of the two Gram matrices: `G_left = V diag(lambda) V^T`.
pub(crate) struct GramPair {
    pub lambda: DVector<f64>,
    pub v: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub u: DMatrix<f64>,
}

impl GramPair {
    fn to_eigen(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.v.transpose() * x * &self.u
    }

    fn from_eigen(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.v * x * self.u.transpose()
    }

    fn weight(&self, a: usize, b: usize) -> f64 {
        self.lambda[a] * self.sigma[b]
    }
}

pub(crate) struct AdmmOptions {
    pub max_iter: usize,
    pub tol: f64,
}

/// Minimizes `sum_k ||R_left (X_k - C_k) R_right^T||_F^2` over the constraint set.
pub(crate) fn admm_l2(
    center: &[DMatrix<f64>],
    gram: &GramPair,
    constraint: &Constraint,
    opts: &AdmmOptions,
) -> Outcome {
    let m = center.len();
    let (rows, cols) = center[0].shape();
    let c_eig: Vec<DMatrix<f64>> = center.iter().map(|c| gram.to_eigen(c)).collect();

    let objective = |x_eig: &[DMatrix<f64>]| -> f64 {
        let mut s = 0.0;
        for (x, c) in x_eig.iter().zip(&c_eig) {
            for a in 0..rows {
                for b in 0..cols {
                    let d = x[(a, b)] - c[(a, b)];
                    s += gram.weight(a, b) * d * d;
                }
            }
        }
        s
    };

    let mean_w = {
        let mut s = 0.0;
        for a in 0..rows {
            for b in 0..cols {
                s += gram.weight(a, b);
            }
        }
        (s / (rows * cols) as f64).max(1e-300)
    };
    let mut rho = mean_w;

    let mut x: Vec<DMatrix<f64>> = center.to_vec();
    let mut z = constraint.apply(&x);
    constraint.project(&mut z);
    let mut u: Vec<DMatrix<f64>> = z.iter().map(|zi| DMatrix::zeros(zi.nrows(), zi.ncols())).collect();
    let mut x_eig = c_eig.clone();
    let mut obj_prev = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    if constraint.violation(&x) <= 0.0 {
        return Outcome {
            blocks: x,
            iterations: 0,
            converged: true,
            violation: 0.0,
        };
    }

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let mut zu = z.clone();
        axpy(-1.0, &u, &mut zu);
        let v = constraint.adjoint(&zu, m);
        let v_eig: Vec<DMatrix<f64>> = v.iter().map(|vi| gram.to_eigen(vi)).collect();
        match constraint.coupling {
            Coupling::Linear | Coupling::Leader => {
                for k in 0..m {
                    for a in 0..rows {
                        for b in 0..cols {
                            let w = gram.weight(a, b);
                            x_eig[k][(a, b)] =
                                (2.0 * w * c_eig[k][(a, b)] + rho * v_eig[k][(a, b)]) / (2.0 * w + rho);
                        }
                    }
                }
            }
            Coupling::Quadratic => {
                // (2H + 2 rho (I + P)) X = 2 H C + rho V with P the transpose;
                // the antisymmetric part only sees H, the symmetric part both
                for k in 0..m {
                    for a in 0..rows {
                        for b in a..cols {
                            let w = gram.weight(a, b);
                            let c = &c_eig[k];
                            let vv = &v_eig[k];
                            let rab = 2.0 * w * c[(a, b)] + rho * vv[(a, b)];
                            let rba = 2.0 * w * c[(b, a)] + rho * vv[(b, a)];
                            let s = (rab + rba) / (2.0 * w + 4.0 * rho);
                            if a == b {
                                x_eig[k][(a, a)] = s / 2.0;
                            } else {
                                let d = c[(a, b)] - c[(b, a)];
                                x_eig[k][(a, b)] = 0.5 * (s + d);
                                x_eig[k][(b, a)] = 0.5 * (s - d);
                            }
                        }
                    }
                }
            }
        }
        for k in 0..m {
            x[k] = gram.from_eigen(&x_eig[k]);
        }
        let lx = constraint.apply(&x);
        let z_old = std::mem::take(&mut z);
        let mut z_new = lx.clone();
        axpy(1.0, &u, &mut z_new);
        constraint.project(&mut z_new);
        z = z_new;
        for i in 0..u.len() {
            u[i] += &lx[i] - &z[i];
        }

        let mut primal = lx.clone();
        axpy(-1.0, &z, &mut primal);
        let r_p = frob2(&primal).sqrt();
        let mut dz = z.clone();
        axpy(-1.0, &z_old, &mut dz);
        let r_d = rho * frob2(&constraint.adjoint(&dz, m)).sqrt();

        let obj = objective(&x_eig);
        let scale_p = 1.0 + frob2(&lx).sqrt();
        let scale_d = 1.0 + rho * frob2(&constraint.adjoint(&u, m)).sqrt();
        if r_p <= opts.tol * scale_p
            && r_d <= opts.tol * scale_d
            && (obj - obj_prev).abs() <= opts.tol * (1.0 + obj.abs())
        {
            converged = true;
            break;
        }
        obj_prev = obj;

        if it % 10 == 9 {
            let rp = r_p / scale_p;
            let rd = r_d / scale_d;
            if rp > 10.0 * rd {
                rho *= 2.0;
                for ui in u.iter_mut() {
                    *ui *= 0.5;
                }
            } else if rd > 10.0 * rp {
                rho *= 0.5;
                for ui in u.iter_mut() {
                    *ui *= 2.0;
                }
            }
        }
    }

    constraint.enforce(&mut x);
    let violation = constraint.violation(&x);
    Outcome {
        blocks: x,
        iterations,
        converged: converged && violation <= 1e-8,
        violation,
    }
}

/// Design for the grid-maximum objective: rows are grid points, columns the
/// flattened block entries (row-major within a block); one target per kernel.
pub(crate) struct MinimaxDesign {
    pub design: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

fn flatten(block: &DMatrix<f64>) -> DVector<f64> {
    let (r, c) = block.shape();
    DVector::from_fn(r * c, |i, _| block[(i / c, i % c)])
}

fn unflatten(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |a, b| v[a * cols + b])
}

/// Sum over kernels of the grid maximum of `|target_k - design x_k|`.
pub(crate) fn minimax_objective(problem: &MinimaxDesign, x: &[DMatrix<f64>]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(k, b)| {
            let r = problem.targets.column(k) - &problem.design * flatten(b);
            r.amax()
        })
        .sum()
}

/// Smoothed max and its gradient with respect to the residual.
fn soft_abs_max(r: &DVector<f64>, mu: f64, grad: &mut DVector<f64>) -> f64 {
    let peak = r.amax();
    let mut total = 0.0;
    for (i, &v) in r.iter().enumerate() {
        let ep = ((v - peak) / mu).exp();
        let em = ((-v - peak) / mu).exp();
        total += ep + em;
        grad[i] = ep - em;
    }
    *grad /= total;
    peak + mu * total.ln()
}

/// Condat-Vu iterations on the smoothed grid-maximum objective, started from
/// a feasible point; the better of start and result is returned.
pub(crate) fn condat_vu_linf(
    problem: &MinimaxDesign,
    start: &[DMatrix<f64>],
    constraint: &Constraint,
    opts: &AdmmOptions,
) -> Outcome {
    let m = start.len();
    let (rows, cols) = start[0].shape();
    let dnorm2 = {
        let dtd = problem.design.transpose() * &problem.design;
        nalgebra::SymmetricEigen::new(dtd).eigenvalues.max().max(1e-300)
    };
    let scale = problem.targets.amax().max(1e-12);
    let mut mu = 1e-2 * scale;
    let mu_floor = 1e-7 * scale;

    let mut x: Vec<DVector<f64>> = start.iter().map(flatten).collect();
    let blocks = |x: &[DVector<f64>]| -> Vec<DMatrix<f64>> {
        x.iter().map(|v| unflatten(v, rows, cols)).collect()
    };
    let mut y: Vec<DMatrix<f64>> = constraint
        .apply(start)
        .iter()
        .map(|z| DMatrix::zeros(z.nrows(), z.ncols()))
        .collect();
    let mut best = start.to_vec();
    let mut best_obj = minimax_objective(problem, start);
    let mut grad_r = DVector::zeros(problem.design.nrows());
    let mut prev_smooth = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut since_shrink = 0;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let lh = dnorm2 / mu;
        let tau = 1.0 / lh;
        let sigma = 0.45 * lh / constraint.op_norm_sq();

        let lt_y = constraint.adjoint(&y, m);
        let mut smooth = 0.0;
        let mut x_new = Vec::with_capacity(m);
        for k in 0..m {
            let r = problem.targets.column(k) - &problem.design * &x[k];
            smooth += soft_abs_max(&r, mu, &mut grad_r);
            let g = -(problem.design.transpose() * &grad_r);
            x_new.push(&x[k] - (g + flatten(&lt_y[k])) * tau);
        }
        let bar: Vec<DVector<f64>> = x_new.iter().zip(&x).map(|(a, b)| a * 2.0 - b).collect();
        let lbar = constraint.apply(&blocks(&bar));
        // prox of the conjugate indicator via Moreau: w - sigma * P(w / sigma)
        let mut w: Vec<DMatrix<f64>> = y.iter().zip(&lbar).map(|(yi, li)| yi + li * sigma).collect();
        let mut p: Vec<DMatrix<f64>> = w.iter().map(|wi| wi / sigma).collect();
        constraint.project(&mut p);
        for (wi, pi) in w.iter_mut().zip(&p) {
            *wi -= pi * sigma;
        }
        y = w;
        x = x_new;

        since_shrink += 1;
        if (smooth - prev_smooth).abs() <= 1e-6 * (1.0 + smooth.abs()) || since_shrink > 2000 {
            if mu <= mu_floor {
                if (smooth - prev_smooth).abs() <= opts.tol * (1.0 + smooth.abs()) {
                    converged = true;
                }
            } else {
                mu = (mu * 0.5).max(mu_floor);
                since_shrink = 0;
            }
        }
        prev_smooth = smooth;

        if it % 200 == 199 || converged || it + 1 == opts.max_iter {
            let mut cand = blocks(&x);
            constraint.enforce(&mut cand);
            let obj = minimax_objective(problem, &cand);
            if obj < best_obj {
                best_obj = obj;
                best = cand;
            }
            if converged {
                break;
            }
        }
    }

    let violation = constraint.violation(&best);
    Outcome {
        blocks: best,
        iterations,
        converged: converged && violation <= 1e-8,
        violation,
    }
}
