//! Integration of reduced moment systems and their a-priori error bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::LeaderTrack;
use crate::error::{Error, Result};
use crate::linalg::{log_norm_2, sym_eig_range, sym_part};
use crate::ode::{step_count, Rk4};
use crate::reduction::{LeaderModel, LinearModel, QuadraticModel};

/// Below this magnitude a rate is treated as zero in the bound formulas.
pub const RATE_ZERO: f64 = 1e-12;
const BLOWUP: f64 = 1e150;

#[derive(Clone, Debug, PartialEq)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    /// Row `i` is the moment vector at `times[i]`.
    pub values: DMatrix<f64>,
    /// First time the trajectory left the monitored box, if any.
    pub exit_time: Option<f64>,
}

impl MomentTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn size(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// Moment vector at the recorded time nearest to `t`.
    pub fn at(&self, t: f64) -> DVector<f64> {
        let i = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map_or(0, |(i, _)| i);
        self.row(i)
    }

    pub fn last(&self) -> DVector<f64> {
        self.row(self.len() - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl MomentBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(a, b)| !(a <= b)) {
            return Err(Error::InvalidArgument("moment box needs lower <= upper componentwise".into()));
        }
        Ok(Self { lower, upper })
    }

    /// Componentwise hull of a set of moment vectors.
    pub fn hull<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut lower: Vec<f64> = Vec::new();
        let mut upper: Vec<f64> = Vec::new();
        for r in rows {
            if lower.is_empty() {
                lower = r.to_vec();
                upper = r.to_vec();
                continue;
            }
            if r.len() != lower.len() {
                return Err(Error::Dimension("moment vectors of different lengths".into()));
            }
            for (i, v) in r.iter().enumerate() {
                lower[i] = lower[i].min(*v);
                upper[i] = upper[i].max(*v);
            }
        }
        if lower.is_empty() {
            return Err(Error::InvalidArgument("hull of an empty set".into()));
        }
        Self::new(lower, upper)
    }

    pub fn of_trajectory(traj: &MomentTrajectory) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..traj.len()).map(|i| traj.row(i).as_slice().to_vec()).collect();
        Self::hull(rows.iter().map(|r| r.as_slice()))
    }

    /// Widens each side by `fraction` of the side length plus `absolute`.
    pub fn inflate(&self, fraction: f64, absolute: f64) -> Self {
        let (lower, upper) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| {
                let pad = fraction * (b - a) + absolute;
                (a - pad, b + pad)
            })
            .unzip();
        Self { lower, upper }
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        Self::hull([
            self.lower.as_slice(),
            self.upper.as_slice(),
            other.lower.as_slice(),
            other.upper.as_slice(),
        ])
    }

    pub fn contains(&self, m: &[f64]) -> bool {
        m.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }
}

/// Sum of the available moment models; leader terms need tracks.
#[derive(Clone, Debug, Default)]
pub struct ReducedSystem {
    pub linear: Option<LinearModel>,
    pub quadratic: Option<QuadraticModel>,
    pub leader: Option<(LeaderModel, Vec<LeaderTrack>)>,
}

impl ReducedSystem {
    pub fn size(&self) -> Option<usize> {
        self.linear
            .as_ref()
            .map(|m| m.size())
            .or_else(|| self.quadratic.as_ref().map(|m| m.size()))
            .or_else(|| self.leader.as_ref().map(|(m, _)| m.size()))
    }

    fn check(&self, m0: &[f64], t_end: f64) -> Result<()> {
        let sizes = [
            self.linear.as_ref().map(|m| m.size()),
            self.quadratic.as_ref().map(|m| m.size()),
            self.leader.as_ref().map(|(m, _)| m.size()),
        ];
        for s in sizes.into_iter().flatten() {
            if s != m0.len() {
                return Err(Error::Dimension(format!(
                    "model of size {s} with initial moments of length {}",
                    m0.len()
                )));
            }
        }
        if let Some((model, tracks)) = &self.leader {
            let domain = model.psi.domain();
            for (j, tr) in tracks.iter().enumerate() {
                if tr.dim() != model.psi.dim() {
                    return Err(Error::Dimension(format!("leader {j} has the wrong dimension")));
                }
                tr.validate(domain, t_end, 1000, j)?;
            }
        }
        Ok(())
    }

    /// `out = m'(t)`; `buf` holds leader positions.
    fn rhs(&self, t: f64, m: &[f64], out: &mut [f64], buf: &mut Vec<f64>) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mv = DVector::from_column_slice(m);
        if let Some(lin) = &self.linear {
            let d = &lin.a * &mv;
            for (o, v) in out.iter_mut().zip(d.iter()) {
                *o += v;
            }
        }
        if let Some(q) = &self.quadratic {
            let mut tmp = vec![0.0; m.len()];
            q.rhs(m, &mut tmp);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o += v;
            }
        }
        if let Some((model, tracks)) = &self.leader {
            let d = model.psi.dim();
            buf.resize(tracks.len() * d, 0.0);
            for (j, tr) in tracks.iter().enumerate() {
                tr.position(t, &mut buf[j * d..(j + 1) * d]);
            }
            let c = model.coefficient_matrix(buf);
            let v = c * &mv;
            for (o, x) in out.iter_mut().zip(v.iter()) {
                *o += x;
            }
        }
    }

    /// Classical RK4 with a fixed step; every step is recorded.
    pub fn integrate(&self, m0: &[f64], t_end: f64, h: f64, monitor: Option<&MomentBox>) -> Result<MomentTrajectory> {
        self.check(m0, t_end)?;
        let steps = step_count(t_end, h)?;
        let dt = if steps == 0 { 0.0 } else { t_end / steps as f64 };
        let n = m0.len();
        let mut y = m0.to_vec();
        let mut rk = Rk4::new(n);
        let mut data = Vec::with_capacity((steps + 1) * n);
        let mut times = Vec::with_capacity(steps + 1);
        data.extend_from_slice(&y);
        times.push(0.0);
        let mut exit_time = monitor.filter(|b| !b.contains(&y)).map(|_| 0.0);
        let mut buf = Vec::new();
        for s in 0..steps {
            let t = s as f64 * dt;
            let mut rhs = |tt: f64, m: &[f64], out: &mut [f64]| -> Result<()> {
                self.rhs(tt, m, out, &mut buf);
                Ok(())
            };
            rk.step(&mut rhs, t, dt, &mut y)?;
            let t_next = (s + 1) as f64 * dt;
            if y.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP) {
                return Err(Error::Diverged { time: t_next });
            }
            if exit_time.is_none() && monitor.is_some_and(|b| !b.contains(&y)) {
                exit_time = Some(t_next);
            }
            data.extend_from_slice(&y);
            times.push(t_next);
        }
        Ok(MomentTrajectory {
            values: DMatrix::from_row_slice(times.len(), n, &data),
            times,
            exit_time,
        })
    }
}

pub fn integrate_linear(a: &DMatrix<f64>, m0: &[f64], t_end: f64, h: f64) -> Result<MomentTrajectory> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    ReducedSystem {
        linear: Some(LinearModel { a: a.clone() }),
        ..Default::default()
    }
    .integrate(m0, t_end, h, None)
}

pub fn integrate_quadratic(
    model: &QuadraticModel,
    m0: &[f64],
    t_end: f64,
    h: f64,
    monitor: Option<&MomentBox>,
) -> Result<MomentTrajectory> {
    ReducedSystem {
        quadratic: Some(model.clone()),
        ..Default::default()
    }
    .integrate(m0, t_end, h, monitor)
}

pub fn integrate_leader(
    model: &LeaderModel,
    tracks: &[LeaderTrack],
    m0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<MomentTrajectory> {
    ReducedSystem {
        leader: Some((model.clone(), tracks.to_vec())),
        ..Default::default()
    }
    .integrate(m0, t_end, h, None)
}

/// `(e^{rate t} - 1) / rate`, continued by `t` at `rate = 0`.
pub fn growth_integral(rate: f64, t: f64) -> f64 {
    if rate.abs() < RATE_ZERO {
        t
    } else {
        (rate * t).exp_m1() / rate
    }
}

/// `dm0 e^{nu t} + (e^{nu t} - 1)/nu * eps_total`.
pub fn bound_linear(nu: f64, eps_total: f64, dm0: f64, t: f64) -> f64 {
    let decay = if nu.abs() < RATE_ZERO { 1.0 } else { (nu * t).exp() };
    dm0 * decay + growth_integral(nu, t) * eps_total
}

/// Same shape as [`bound_linear`] with the rate `beta` from [`estimate_beta`].
pub fn bound_quadratic(beta: f64, eps_total: f64, dm0: f64, t: f64) -> f64 {
    bound_linear(beta, eps_total, dm0, t)
}

/// Leader bound: the residual term is scaled by the number of leaders.
pub fn bound_leader_value(tau: f64, n_leaders: usize, eps_total: f64, dm0: f64, t: f64) -> f64 {
    bound_linear(tau, n_leaders as f64 * eps_total, dm0, t)
}

/// `max_{m in D} sum_l nu_2[m_l B~_l]`, attained at a box corner per term.
pub fn estimate_beta(model: &QuadraticModel, domain: &MomentBox) -> Result<f64> {
    if domain.lower.len() != model.size() {
        return Err(Error::Dimension(format!(
            "box of dimension {} for a model of size {}",
            domain.lower.len(),
            model.size()
        )));
    }
    let mut beta = 0.0;
    for (l, bt) in model.btilde.iter().enumerate() {
        let (lo_eig, hi_eig) = sym_eig_range(&sym_part(bt));
        let at = |c: f64| if c >= 0.0 { c * hi_eig } else { c * lo_eig };
        beta += at(domain.lower[l]).max(at(domain.upper[l]));
    }
    Ok(beta)
}

/// How the rate `tau` of the leader bound is maximized over leader positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauStrategy {
    /// Positions along the actual tracks only.
    Tracks { samples: usize },
    /// Product grid over the box of positions each leader visits, joined
    /// with the track samples.
    VisitedBox { per_axis: usize, samples: usize },
    /// `sum_j max_{y_j} nu_2[sum_r psi_r(y_j) Gamma_r]` over each visited box;
    /// an upper bound on the joint maximum by subadditivity of `nu_2`.
    Subadditive { per_axis: usize, samples: usize },
}

impl Default for TauStrategy {
    fn default() -> Self {
        TauStrategy::VisitedBox {
            per_axis: 3,
            samples: 1000,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || hi <= lo {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Calls `visit` on every point of the product of the per-axis samples.
fn for_each_product(axes: &[Vec<f64>], visit: &mut dyn FnMut(&[f64]) -> Result<()>) -> Result<()> {
    let mut idx = vec![0usize; axes.len()];
    let mut point: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    loop {
        visit(&point)?;
        let mut ax = 0;
        loop {
            if ax == axes.len() {
                return Ok(());
            }
            idx[ax] += 1;
            if idx[ax] < axes[ax].len() {
                point[ax] = axes[ax][idx[ax]];
                break;
            }
            idx[ax] = 0;
            point[ax] = axes[ax][0];
            ax += 1;
        }
    }
}

pub fn estimate_tau(model: &LeaderModel, tracks: &[LeaderTrack], t_end: f64, strategy: TauStrategy) -> Result<f64> {
    let d = model.psi.dim();
    if tracks.is_empty() {
        return Err(Error::InvalidArgument("no leader tracks".into()));
    }
    let track_max = |samples: usize| -> Result<f64> {
        let n = samples.max(2);
        let mut pos = vec![0.0; tracks.len() * d];
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            let t = t_end * i as f64 / (n - 1) as f64;
            for (j, tr) in tracks.iter().enumerate() {
                tr.position(t, &mut pos[j * d..(j + 1) * d]);
            }
            best = best.max(log_norm_2(&model.coefficient_matrix(&pos))?);
        }
        Ok(best)
    };
    match strategy {
        TauStrategy::Tracks { samples } => track_max(samples),
        TauStrategy::VisitedBox { per_axis, samples } => {
            let mut axes = Vec::with_capacity(tracks.len() * d);
            for tr in tracks {
                let (lo, hi) = tr.visited_box(t_end, samples.max(2));
                for c in 0..d {
                    axes.push(linspace(lo[c], hi[c], per_axis));
                }
            }
            let mut best = track_max(samples)?;
            for_each_product(&axes, &mut |p| {
                best = best.max(log_norm_2(&model.coefficient_matrix(p))?);
                Ok(())
            })?;
            Ok(best)
        }
        TauStrategy::Subadditive { per_axis, samples } => {
            let mut total = 0.0;
            for tr in tracks {
                let (lo, hi) = tr.visited_box(t_end, samples.max(2));
                let axes: Vec<Vec<f64>> = (0..d).map(|c| linspace(lo[c], hi[c], per_axis)).collect();
                let mut best = f64::NEG_INFINITY;
                for_each_product(&axes, &mut |p| {
                    best = best.max(log_norm_2(&model.coefficient_matrix(p))?);
                    Ok(())
                })?;
                total += best;
            }
            Ok(total)
        }
    }
}

/// Leader bound at time `t` with `tau` maximized according to `strategy`.
pub fn bound_leader(
    model: &LeaderModel,
    tracks: &[LeaderTrack],
    t_end: f64,
    strategy: TauStrategy,
    eps_total: f64,
    dm0: f64,
    t: f64,
) -> Result<f64> {
    let tau = estimate_tau(model, tracks, t_end, strategy)?;
    Ok(bound_leader_value(tau, tracks.len(), eps_total, dm0, t))
}

/// Bound values on a time grid together with the parameters used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `nu`, `beta` or `tau`.
    pub rate_name: String,
    pub rate: f64,
    pub eps_total: f64,
    pub dm0: f64,
    /// Scale on `eps_total` (number of leaders for leader bounds, else 1).
    pub eps_multiplier: f64,
    /// End of the validity window (exit time from the moment box).
    pub valid_until: Option<f64>,
}

impl ErrorBound {
    pub fn evaluate(rate_name: &str, rate: f64, eps_total: f64, eps_multiplier: f64, dm0: f64, times: &[f64]) -> Self {
        Self {
            values: times
                .iter()
                .map(|&t| bound_linear(rate, eps_multiplier * eps_total, dm0, t))
                .collect(),
            times: times.to_vec(),
            rate_name: rate_name.to_string(),
            rate,
            eps_total,
            dm0,
            eps_multiplier,
            valid_until: None,
        }
    }

    /// Drops the samples past `t_valid`.
    pub fn truncate(mut self, t_valid: Option<f64>) -> Self {
        if let Some(tv) = t_valid {
            let keep = self.times.iter().take_while(|&&t| t <= tv).count();
            self.times.truncate(keep);
            self.values.truncate(keep);
            self.valid_until = Some(tv);
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_basis, BasisSpec};
    use crate::geometry::BoxDomain;
    use proptest::prelude::*;

    #[test]
    fn linear_examples() {
        let tr = integrate_linear(&DMatrix::zeros(3, 3), &[1.0, 2.0, 3.0], 2.0, 0.1).unwrap();
        assert_eq!(tr.last().as_slice(), &[1.0, 2.0, 3.0]);
        let tr = integrate_linear(&DMatrix::from_element(1, 1, -1.0), &[1.0], 1.0, 0.01).unwrap();
        assert!((tr.last()[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(tr.len(), 101);

        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, -1.0, -2.0, -3.0]));
        let m0 = [1.0, 0.0, 1.0 / 3.0, 0.0];
        let tr = integrate_linear(&a, &m0, 1.5, 0.01).unwrap();
        for (i, &t) in tr.times.iter().enumerate() {
            for k in 0..4 {
                assert!((tr.values[(i, k)] - m0[k] * (-(k as f64) * t).exp()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 2.0, -2.0, -0.5]);
        let exact = (a.clone() * 2.0).exp() * DVector::from_vec(vec![1.0, 0.5]);
        let err = |h: f64| (integrate_linear(&a, &[1.0, 0.5], 2.0, h).unwrap().last() - &exact).norm();
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn riccati_and_zero_quadratic() {
        let q = QuadraticModel::from_b(vec![DMatrix::from_element(1, 1, -1.0)]).unwrap();
        let tr = integrate_quadratic(&q, &[1.0], 1.0, 0.01, None).unwrap();
        assert!((tr.last()[0] - 0.5).abs() < 1e-8);
        let z = QuadraticModel::from_b(vec![DMatrix::zeros(2, 2); 2]).unwrap();
        let tr = integrate_quadratic(&z, &[0.3, -0.2], 1.0, 0.1, None).unwrap();
        assert_eq!(tr.last().as_slice(), &[0.3, -0.2]);
    }

    #[test]
    fn blowup_and_exit_reported() {
        let q = QuadraticModel::from_b(vec![DMatrix::from_element(1, 1, 1.0)]).unwrap();
        // m' = m^2 from m = 1 blows up at t = 1
        match integrate_quadratic(&q, &[1.0], 2.0, 1e-3, None) {
            Err(Error::Diverged { time }) => assert!(time > 0.99 && time < 1.01, "{time}"),
            other => panic!("expected divergence, got {other:?}"),
        }
        let bx = MomentBox::new(vec![0.0], vec![2.0]).unwrap();
        let tr = integrate_quadratic(&q, &[1.0], 0.9, 1e-3, Some(&bx)).unwrap();
        // 1/(1-t) = 2 at t = 0.5
        let exit = tr.exit_time.unwrap();
        assert!((exit - 0.5).abs() < 2e-3);
    }

    fn constant_psi() -> crate::basis::KernelBasis {
        make_basis(&BasisSpec::Monomial { degree: 0 }, &BoxDomain::interval(-1.0, 1.0).unwrap()).unwrap()
    }

    fn still(y: f64) -> LeaderTrack {
        LeaderTrack::Waypoints {
            times: vec![0.0],
            points: vec![vec![y]],
        }
    }

    #[test]
    fn leader_examples() {
        let model = LeaderModel {
            gamma: vec![-DMatrix::identity(2, 2)],
            psi: constant_psi(),
        };
        let tr = integrate_leader(&model, &[still(0.2)], &[1.0, -2.0], 1.0, 0.01).unwrap();
        let e = (-1.0f64).exp();
        assert!((tr.last()[0] - e).abs() < 1e-8 && (tr.last()[1] + 2.0 * e).abs() < 1e-8);

        let zero = LeaderModel {
            gamma: vec![DMatrix::zeros(2, 2)],
            psi: constant_psi(),
        };
        let tr = integrate_leader(&zero, &[still(0.2)], &[1.0, -2.0], 1.0, 0.1).unwrap();
        assert_eq!(tr.last().as_slice(), &[1.0, -2.0]);

        let tau = estimate_tau(&model, &[still(0.2)], 1.0, TauStrategy::default()).unwrap();
        assert!((tau + 1.0).abs() < 1e-12);
        let b = bound_leader(&model, &[still(0.2)], 1.0, TauStrategy::default(), 0.3, 0.1, 2.0).unwrap();
        let expect = 0.1 * (-2.0f64).exp() + 0.3 * (1.0 - (-2.0f64).exp());
        assert!((b - expect).abs() < 1e-12);
        let b0 = bound_leader(&zero, &[still(0.2)], 1.0, TauStrategy::default(), 0.0, 0.7, 3.0).unwrap();
        assert!((b0 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn leader_leaving_domain_is_an_error() {
        let model = LeaderModel {
            gamma: vec![DMatrix::zeros(1, 1)],
            psi: constant_psi(),
        };
        let track = LeaderTrack::Waypoints {
            times: vec![0.0, 1.0],
            points: vec![vec![0.0], vec![3.0]],
        };
        assert!(matches!(
            integrate_leader(&model, &[track], &[1.0], 1.0, 0.1),
            Err(Error::LeaderExit { .. })
        ));
    }

    #[test]
    fn bound_examples() {
        assert_eq!(bound_linear(0.0, 0.3, 0.0, 2.0), 0.6);
        assert!((bound_linear(-1.0, 0.25, 0.0, 60.0) - 0.25).abs() < 1e-12);
        assert!((bound_linear(-2.0, 1.0, 0.0, 1.0) - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-15);
        assert!((bound_linear(-2.0, 1.0, 0.0, 1.0) - 0.432332).abs() < 1e-6);
        assert_eq!(bound_quadratic(0.0, 0.3, 0.0, 2.0), 0.6);
        assert!((bound_quadratic(-1.0, 0.25, 0.0, 60.0) - 0.25).abs() < 1e-12);
        assert!((bound_quadratic(-2.0, 1.0, 0.0, 1.0) - 0.432332).abs() < 1e-6);
        let one = bound_leader_value(0.4, 1, 0.2, 0.1, 1.5);
        let two = bound_leader_value(0.4, 2, 0.2, 0.1, 1.5);
        let dm_term = 0.1 * (0.6f64).exp();
        assert!(((two - dm_term) - 2.0 * (one - dm_term)).abs() < 1e-14);
    }

    #[test]
    fn beta_examples() {
        let id = QuadraticModel {
            b: vec![DMatrix::zeros(2, 2); 2],
            btilde: vec![DMatrix::identity(2, 2), DMatrix::zeros(2, 2)],
        };
        let bx = MomentBox::new(vec![0.0, 5.0], vec![1.0, 6.0]).unwrap();
        assert_eq!(estimate_beta(&id, &bx).unwrap(), 1.0);
        let bx = MomentBox::new(vec![-2.0, 5.0], vec![-1.0, 6.0]).unwrap();
        assert_eq!(estimate_beta(&id, &bx).unwrap(), -1.0);
        let zero = QuadraticModel::from_b(vec![DMatrix::zeros(2, 2); 2]).unwrap();
        assert_eq!(estimate_beta(&zero, &bx).unwrap(), 0.0);
    }

    #[test]
    fn box_helpers() {
        let b = MomentBox::hull([[0.0, 1.0].as_slice(), [2.0, -1.0].as_slice()]).unwrap();
        assert_eq!(b.lower, vec![0.0, -1.0]);
        assert_eq!(b.upper, vec![2.0, 1.0]);
        let i = b.inflate(0.1, 0.01);
        assert!((i.lower[0] + 0.21).abs() < 1e-15 && (i.upper[1] - 1.21).abs() < 1e-15);
        assert!(MomentBox::new(vec![1.0], vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn beta_dominates_sampled_log_norms(seed in 0u64..300) {
            let mut rng = crate::rng::SeededRng::new(seed);
            let m = 3;
            let b: Vec<DMatrix<f64>> = (0..m).map(|_| DMatrix::from_fn(m, m, |_, _| rng.uniform_in(-1.0, 1.0))).collect();
            let q = QuadraticModel::from_b(b).unwrap();
            let lo: Vec<f64> = (0..m).map(|_| rng.uniform_in(-1.0, 0.5)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.uniform_in(0.0, 1.0)).collect();
            let bx = MomentBox::new(lo.clone(), hi.clone()).unwrap();
            let beta = estimate_beta(&q, &bx).unwrap();
            for _ in 0..50 {
                let mv: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.uniform_in(*a, *b)).collect();
                prop_assert!(log_norm_2(&q.jacobian(&mv)).unwrap() <= beta + 1e-12);
            }
        }

        #[test]
        fn bound_is_continuous_at_zero_rate(eps in 0.0f64..10.0, dm in 0.0f64..10.0, t in 0.0f64..10.0) {
            prop_assert!((bound_linear(1e-13, eps, dm, t) - bound_linear(0.0, eps, dm, t)).abs() < 1e-9);
            prop_assert!((bound_linear(-1e-13, eps, dm, t) - bound_linear(0.0, eps, dm, t)).abs() < 1e-9);
        }

        #[test]
        fn bound_is_monotone(nu in -3.0f64..3.0, eps in 0.0f64..5.0, dm in 0.0f64..5.0, t in 0.01f64..5.0, d in 0.0f64..1.0) {
            let b = bound_linear(nu, eps, dm, t);
            prop_assert!(bound_linear(nu, eps + d, dm, t) >= b);
            prop_assert!(bound_linear(nu, eps, dm + d, t) >= b);
            prop_assert!(bound_linear(nu + d, eps, dm, t) >= b * (1.0 - 1e-14));
        }

        #[test]
        fn bound_nondecreasing_in_time_for_nonnegative_rate(nu in 0.0f64..3.0, eps in 0.0f64..5.0, t in 0.0f64..5.0, d in 0.0f64..1.0) {
            prop_assert!(bound_linear(nu, eps, 0.0, t + d) >= bound_linear(nu, eps, 0.0, t));
        }

        #[test]
        fn corollary_asymptote(nu in -5.0f64..-0.01, eps in 0.0f64..5.0, dm in 0.0f64..5.0, t in 0.0f64..100.0) {
            prop_assert!(bound_linear(nu, eps, dm, t) <= dm + eps / (-nu) + 1e-12);
        }
    }
}
