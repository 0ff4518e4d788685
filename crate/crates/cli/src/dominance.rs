//! Randomized checks that the a-priori error bounds dominate the observed
//! moment error, plus the bound composition shared with the pipeline.

use moment_core::dynamics::{DynamicsSpec, FnField, FnPair};
use moment_core::flow::{bound_linear, estimate_beta, MomentBox, ReducedSystem};
use moment_core::linalg::log_norm_2;
use moment_core::reduction::{fit_linear, fit_quadratic, FitOptions, FitReport};
use moment_core::rng::SeededRng;
use moment_core::simulator::{moment_series, sample_uniform_box, simulate, SimOptions};
use moment_core::{make_basis, BasisSpec, BoxDomain, PairGrid, QuadratureGrid, Result};
use serde::Serialize;
use std::sync::Arc;

/// `eps_total` of a model built from several fitted parts:
/// `|| c (eps_lin + eps_quad + N_L eps_lead) ||_2` with per-kernel sup residuals.
pub fn combined_eps(
    linear: Option<&FitReport>,
    quadratic: Option<&FitReport>,
    leader: Option<(&FitReport, usize)>,
    inflation: f64,
) -> f64 {
    let size = [linear, quadratic, leader.map(|l| l.0)]
        .into_iter()
        .flatten()
        .map(|r| r.sup_residuals.len())
        .max()
        .unwrap_or(0);
    let mut eps = vec![0.0; size];
    for (r, w) in [(linear, 1.0), (quadratic, 1.0)]
        .into_iter()
        .chain(std::iter::once((leader.map(|l| l.0), leader.map_or(0.0, |l| l.1 as f64))))
    {
        if let Some(r) = r {
            for (e, s) in eps.iter_mut().zip(&r.sup_residuals) {
                *e += w * s;
            }
        }
    }
    inflation * eps.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct DominanceOutcome {
    pub seed: u64,
    pub degree: usize,
    pub rate: f64,
    pub eps_total: f64,
    /// Output times compared (those up to the validity horizon).
    pub checked: usize,
    pub violations: usize,
    /// `max_t error(t) / bound(t)` over times with a positive bound.
    pub worst_ratio: f64,
    /// End of the comparison window.
    pub horizon: f64,
}

/// Random cubic `p` on `[-1, 1]^vars` as coefficients of `x^i y^j`, `i + j <= 3`.
struct RandomCubic {
    terms: Vec<(i32, i32, f64)>,
}

impl RandomCubic {
    fn new(rng: &mut SeededRng, vars: usize) -> Self {
        let mut terms = Vec::new();
        for i in 0..=3 {
            for j in 0..=(if vars == 2 { 3 - i } else { 0 }) {
                terms.push((i, j, rng.uniform_in(-1.0, 1.0)));
            }
        }
        Self { terms }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms.iter().map(|(i, j, c)| c * x.powi(*i) * y.powi(*j)).sum()
    }
}

const N_AGENTS: usize = 500;
const T_END: f64 = 2.0;
const H: f64 = 0.01;
const EPS_INFLATION: f64 = 1.05;

fn unit() -> BoxDomain {
    BoxDomain::interval(-1.0, 1.0).expect("valid interval")
}

fn compare(
    seed: u64,
    degree: usize,
    rate: f64,
    eps_total: f64,
    times: &[f64],
    errors: &[f64],
    horizon: f64,
) -> DominanceOutcome {
    let mut checked = 0;
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for (&t, &e) in times.iter().zip(errors) {
        if t > horizon + 1e-12 {
            break;
        }
        checked += 1;
        let b = bound_linear(rate, eps_total, 0.0, t);
        if e > b {
            violations += 1;
        }
        if b > 0.0 {
            worst = worst.max(e / b);
        }
    }
    DominanceOutcome {
        seed,
        degree,
        rate,
        eps_total,
        checked,
        violations,
        worst_ratio: worst,
        horizon,
    }
}

/// One linear-model instance: `x' = p(x) - a x` with `a` large enough that
/// `[-1, 1]` is invariant, monomials up to `degree`, unconstrained L2 fit.
pub fn linear_instance(seed: u64, degree: usize) -> Result<DominanceOutcome> {
    let mut rng = SeededRng::new(seed);
    let p = RandomCubic::new(&mut rng, 1);
    let a = p.eval(1.0, 0.0).max(-p.eval(-1.0, 0.0)).max(0.0) + 0.1;
    let f = move |x: &[f64], out: &mut [f64]| out[0] = p.eval(x[0], 0.0) - a * x[0];
    let field = Arc::new(FnField { dim: 1, f });

    let domain = unit();
    let basis = make_basis(&BasisSpec::Monomial { degree }, &domain)?;
    let ens = sample_uniform_box(N_AGENTS, &domain, &domain, seed)?;
    let dynamics = DynamicsSpec::default().with_field(field.clone());
    let traj = simulate(&ens, &dynamics, T_END, H, &SimOptions::default())?;
    let truth = moment_series(&traj, &basis)?;

    let grid = QuadratureGrid::trapezoid(&domain, 401);
    let (model, report) = fit_linear(&basis, field.as_ref(), &grid, &FitOptions::default(), None)?;
    let nu = log_norm_2(&model.a)?;
    let eps = combined_eps(Some(&report), None, None, EPS_INFLATION);
    let sys = ReducedSystem {
        linear: Some(model),
        ..Default::default()
    };
    let flow = sys.integrate(truth[0].as_slice(), T_END, H, None)?;
    let errors: Vec<f64> = truth.iter().enumerate().map(|(i, m)| (m - flow.row(i)).norm()).collect();
    Ok(compare(seed, degree, nu, eps, &traj.times, &errors, T_END))
}

/// One quadratic-model instance: `x_i' = (1/N) sum_j g(x_i, x_j)` with
/// `g(x, y) = p(x, y) - a x` keeping `[-1, 1]` invariant. The bound rate is
/// `beta` over the reduced trajectory's hull inflated by 5%, and times are
/// compared up to the first exit of either trajectory from that box.
pub fn quadratic_instance(seed: u64, degree: usize) -> Result<DominanceOutcome> {
    let mut rng = SeededRng::new(seed);
    let p = RandomCubic::new(&mut rng, 2);
    let edge = (0..=200)
        .map(|i| -1.0 + i as f64 / 100.0)
        .map(|y| p.eval(1.0, y).max(-p.eval(-1.0, y)))
        .fold(0.0, f64::max);
    let a = edge + 0.1;
    let g = move |x: &[f64], y: &[f64], out: &mut [f64]| out[0] = p.eval(x[0], y[0]) - a * x[0];
    let pair = Arc::new(FnPair { dim: 1, f: g });

    let domain = unit();
    let basis = make_basis(&BasisSpec::Monomial { degree }, &domain)?;
    let ens = sample_uniform_box(N_AGENTS, &domain, &domain, seed)?;
    let dynamics = DynamicsSpec::default().with_interaction(pair.clone());
    let traj = simulate(&ens, &dynamics, T_END, H, &SimOptions::default())?;
    let truth = moment_series(&traj, &basis)?;

    let grid = PairGrid::square(&domain, 101);
    let (model, report) = fit_quadratic(&basis, pair.as_ref(), &grid, &FitOptions::default(), None)?;
    let sys = ReducedSystem {
        quadratic: Some(model.clone()),
        ..Default::default()
    };
    let flow = sys.integrate(truth[0].as_slice(), T_END, H, None)?;
    let d = MomentBox::of_trajectory(&flow)?.inflate(0.05, 0.0);
    let beta = estimate_beta(&model, &d)?;
    let eps = combined_eps(None, Some(&report), None, EPS_INFLATION);
    let mut horizon = T_END;
    for (i, m) in truth.iter().enumerate() {
        if !d.contains(m.as_slice()) || !d.contains(flow.row(i).as_slice()) {
            horizon = traj.times[i.saturating_sub(1)];
            break;
        }
    }
    let errors: Vec<f64> = truth.iter().enumerate().map(|(i, m)| (m - flow.row(i)).norm()).collect();
    Ok(compare(seed, degree, beta, eps, &traj.times, &errors, horizon))
}

/// Polynomial degree for instance `i` cycling through `3..=8`.
pub fn degree_for(i: usize) -> usize {
    3 + i % 6
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined_eps_weights_leaders() {
        let r = |v: Vec<f64>| FitReport {
            sup_residuals: v,
            ..Default::default()
        };
        let lin = r(vec![3.0, 0.0]);
        let lead = r(vec![0.0, 1.0]);
        let e = combined_eps(Some(&lin), None, Some((&lead, 4)), 1.0);
        assert!((e - 5.0).abs() < 1e-15);
        assert!((combined_eps(Some(&lin), Some(&lin), None, 2.0) - 12.0).abs() < 1e-15);
    }

    #[test]
    fn single_instances_are_dominated() {
        let l = linear_instance(1, 4).unwrap();
        assert!(l.checked == 201 && l.violations == 0, "{l:?}");
        let q = quadratic_instance(1, 4).unwrap();
        assert!(q.checked > 1 && q.violations == 0, "{q:?}");
    }
}
