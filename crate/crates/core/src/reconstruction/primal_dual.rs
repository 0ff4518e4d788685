//! Diagonally preconditioned primal-dual iterations for the TV problem
//! `min_{Phi in G} sum_f w_f |(D Phi)_f| + lambda ||m - A Phi||_inf`,
//! where `G` is `{Phi >= 0}` or, with pinned mass, `{Phi >= 0, v sum Phi = mass}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::CellGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdOptions {
    pub max_iter: usize,
    /// Stop once the duality gap is below `rel_gap * (1 + |objective|)`.
    pub rel_gap: f64,
    pub check_every: usize,
    /// Without pinned mass the dual bound is taken over measures of mass at
    /// most this multiple of the current iterate's mass (at least 1).
    pub mass_cap_factor: f64,
}

impl Default for PdOptions {
    fn default() -> Self {
        Self {
            max_iter: 50_000,
            rel_gap: 1e-6,
            check_every: 64,
            mass_cap_factor: 10.0,
        }
    }
}

pub(crate) struct PdOutcome {
    pub density: Vec<f64>,
    pub iterations: usize,
    pub gap: f64,
    pub converged: bool,
}

/// Solves `sum_i a_i max(b_i - theta c_i, 0) = target` for `theta` (`a, c > 0`);
/// the left side is nonincreasing in `theta`.
pub(crate) fn threshold(a: &[f64], b: &[f64], c: &[f64], target: f64) -> f64 {
    let mut order: Vec<usize> = (0..b.len()).collect();
    let bp: Vec<f64> = b.iter().zip(c).map(|(bi, ci)| bi / ci).collect();
    order.sort_by(|&i, &j| bp[j].total_cmp(&bp[i]));
    let mut sb = 0.0;
    let mut sc = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        sb += a[i] * b[i];
        sc += a[i] * c[i];
        let theta = (sb - target) / sc;
        let next = order.get(pos + 1).map_or(f64::NEG_INFINITY, |&j| bp[j]);
        if theta >= next {
            return theta;
        }
    }
    // unreachable for a, c > 0 and at least one entry
    f64::NEG_INFINITY
}

/// `argmin sum (x_c - z_c)^2 / (2 tau_c)` over `x >= 0`, `v sum x = mass`.
fn project_simplex(z: &[f64], tau: &[f64], v: f64, mass: f64, out: &mut [f64]) {
    let a = vec![v; z.len()];
    let c: Vec<f64> = tau.iter().map(|t| t * v).collect();
    let mu = threshold(&a, z, &c, mass);
    for i in 0..z.len() {
        out[i] = (z[i] - mu * c[i]).max(0.0);
    }
}

/// `argmin sum (q_i - z_i)^2 / (2 sigma_i)` over `||q||_1 <= radius`.
fn project_l1_ball(z: &mut [f64], sigma: &[f64], radius: f64) {
    let norm: f64 = z.iter().map(|v| v.abs()).sum();
    if norm <= radius {
        return;
    }
    let abs: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    let ones = vec![1.0; z.len()];
    let theta = threshold(&ones, &abs, sigma, radius).max(0.0);
    for (zi, si) in z.iter_mut().zip(sigma) {
        *zi = zi.signum() * (zi.abs() - theta * si).max(0.0);
    }
}

struct Problem<'a> {
    faces: Vec<(usize, usize, f64)>,
    a: &'a DMatrix<f64>,
    m: DVector<f64>,
    lambda: f64,
    pinned: Option<f64>,
    v: f64,
    tau: Vec<f64>,
    sigma_f: f64,
    sigma_q: Vec<f64>,
    mass_cap_factor: f64,
}

#[derive(Clone)]
struct Point {
    x: DVector<f64>,
    p: DVector<f64>,
    q: DVector<f64>,
}

impl Point {
    fn axpy(&mut self, w: f64, other: &Point) {
        self.x.axpy(w, &other.x, 1.0);
        self.p.axpy(w, &other.p, 1.0);
        self.q.axpy(w, &other.q, 1.0);
    }
}

impl Problem<'_> {
    fn primal(&self, x: &DVector<f64>) -> f64 {
        let tv: f64 = self.faces.iter().map(|&(lo, hi, w)| w * (x[hi] - x[lo]).abs()).sum();
        tv + self.lambda * (&self.m - self.a * x).amax()
    }

    /// `K^T y`.
    fn adjoint(&self, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        let mut out = self.a.tr_mul(q);
        for (f, &(lo, hi, _)) in self.faces.iter().enumerate() {
            out[hi] += p[f];
            out[lo] -= p[f];
        }
        out
    }

    fn gap(&self, pt: &Point) -> (f64, f64) {
        let pval = self.primal(&pt.x);
        let neg = -self.adjoint(&pt.p, &pt.q);
        let wmax = neg.max() / self.v;
        let conj = match self.pinned {
            Some(mass) => mass * wmax,
            None => {
                let cap = self.mass_cap_factor * (pt.x.sum() * self.v).max(1.0);
                cap * wmax.max(0.0)
            }
        };
        let dval = -pt.q.dot(&self.m) - conj;
        (pval - dval, pval)
    }

    fn step(&self, pt: &mut Point, omega: f64, z: &mut Vec<f64>, x_new: &mut Vec<f64>, tau_w: &mut Vec<f64>) {
        let n = pt.x.len();
        let kty = self.adjoint(&pt.p, &pt.q);
        for c in 0..n {
            tau_w[c] = self.tau[c] / omega;
            z[c] = pt.x[c] - tau_w[c] * kty[c];
        }
        match self.pinned {
            Some(mass) => project_simplex(z, tau_w, self.v, mass, x_new),
            None => {
                for c in 0..n {
                    x_new[c] = z[c].max(0.0);
                }
            }
        }
        let xbar = DVector::from_fn(n, |c, _| 2.0 * x_new[c] - pt.x[c]);
        let sf = self.sigma_f * omega;
        for (f, &(lo, hi, w)) in self.faces.iter().enumerate() {
            pt.p[f] = (pt.p[f] + sf * (xbar[hi] - xbar[lo])).clamp(-w, w);
        }
        let ax = self.a * &xbar;
        let sq: Vec<f64> = self.sigma_q.iter().map(|s| s * omega).collect();
        for i in 0..pt.q.len() {
            pt.q[i] += sq[i] * (ax[i] - self.m[i]);
        }
        project_l1_ball(pt.q.as_mut_slice(), &sq, self.lambda);
        pt.x.as_mut_slice().copy_from_slice(x_new);
    }

    /// Movement in the preconditioned primal and dual norms.
    fn distances(&self, a: &Point, b: &Point) -> (f64, f64) {
        let dx: f64 = (0..a.x.len()).map(|c| (a.x[c] - b.x[c]).powi(2) / self.tau[c]).sum();
        let dp: f64 = (0..a.p.len()).map(|f| (a.p[f] - b.p[f]).powi(2) / self.sigma_f).sum();
        let dq: f64 = (0..a.q.len()).map(|i| (a.q[i] - b.q[i]).powi(2) / self.sigma_q[i]).sum();
        (dx.sqrt(), (dp + dq).sqrt())
    }
}

/// Restarted, averaged primal-dual hybrid gradient with an adaptive primal
/// weight; restarts are triggered by the duality gap of the current and the
/// averaged iterate.
pub(crate) fn solve(
    grid: &CellGrid,
    a: &DMatrix<f64>,
    m: &[f64],
    lambda: f64,
    pinned: Option<f64>,
    opts: &PdOptions,
) -> PdOutcome {
    let n = grid.len();
    let k = a.nrows();
    let v = grid.cell_volume();
    let faces = grid.faces();

    let mut deg = vec![0.0; n];
    for &(lo, hi, _) in &faces {
        deg[lo] += 1.0;
        deg[hi] += 1.0;
    }
    let tau: Vec<f64> = (0..n)
        .map(|c| {
            let s = deg[c] + a.column(c).iter().map(|x| x.abs()).sum::<f64>();
            if s > 0.0 {
                1.0 / s
            } else {
                1.0
            }
        })
        .collect();
    let sigma_q: Vec<f64> = a
        .row_iter()
        .map(|r| {
            let s: f64 = r.iter().map(|x| x.abs()).sum();
            if s > 0.0 {
                1.0 / s
            } else {
                1.0
            }
        })
        .collect();
    let nf = faces.len();
    let problem = Problem {
        faces,
        a,
        m: DVector::from_column_slice(m),
        lambda,
        pinned,
        v,
        tau,
        sigma_f: 0.5,
        sigma_q,
        mass_cap_factor: opts.mass_cap_factor,
    };

    let start_mass = pinned.unwrap_or(1.0);
    let mut current = Point {
        x: DVector::from_element(n, start_mass / (v * n as f64)),
        p: DVector::zeros(nf),
        q: DVector::zeros(k),
    };
    let mut z = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut tau_w = vec![0.0; n];

    let mut omega: f64 = 1.0;
    let mut anchor = current.clone();
    let (mut anchor_gap, _) = problem.gap(&anchor);
    let mut prev_candidate_gap = f64::INFINITY;
    let mut sum = Point {
        x: DVector::zeros(n),
        p: DVector::zeros(nf),
        q: DVector::zeros(k),
    };
    let mut count = 0usize;
    let mut since_restart = 0usize;
    let mut best = (current.clone(), anchor_gap);
    let check = opts.check_every.max(1);

    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        problem.step(&mut current, omega, &mut z, &mut x_new, &mut tau_w);
        sum.axpy(1.0, &current);
        count += 1;
        since_restart += 1;

        if iterations % check != 0 && iterations != opts.max_iter {
            continue;
        }
        let mut avg = sum.clone();
        let inv = 1.0 / count as f64;
        avg.x *= inv;
        avg.p *= inv;
        avg.q *= inv;
        let (g_cur, p_cur) = problem.gap(&current);
        let (g_avg, p_avg) = problem.gap(&avg);
        let (candidate, g_cand, p_cand) = if g_avg < g_cur {
            (avg, g_avg, p_avg)
        } else {
            (current.clone(), g_cur, p_cur)
        };
        if g_cand < best.1 {
            best = (candidate.clone(), g_cand);
        }
        if g_cand <= opts.rel_gap * (1.0 + p_cand.abs()) {
            return PdOutcome {
                density: candidate.x.as_slice().to_vec(),
                iterations,
                gap: g_cand,
                converged: true,
            };
        }
        let restart = g_cand <= 0.2 * anchor_gap
            || (g_cand <= 0.8 * anchor_gap && g_cand > prev_candidate_gap)
            || since_restart as f64 >= 0.36 * iterations as f64;
        prev_candidate_gap = g_cand;
        if restart {
            let (dx, dy) = problem.distances(&candidate, &anchor);
            if dx > 1e-300 && dy > 1e-300 {
                omega = (0.5 * (dy / dx).ln() + 0.5 * omega.ln()).exp();
            }
            current = candidate;
            anchor = current.clone();
            anchor_gap = g_cand;
            prev_candidate_gap = f64::INFINITY;
            sum = Point {
                x: DVector::zeros(n),
                p: DVector::zeros(nf),
                q: DVector::zeros(k),
            };
            count = 0;
            since_restart = 0;
        }
    }

    PdOutcome {
        density: best.0.x.as_slice().to_vec(),
        iterations,
        gap: best.1,
        converged: false,
    }
}
