//! Ground-truth agent simulation and empirical moments.

use nalgebra::DVector;

use crate::basis::KernelBasis;
use crate::dynamics::DynamicsSpec;
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, PointSet};
use crate::ode::{step_count, Rk4};
use crate::rng::SeededRng;

#[derive(Clone, Debug)]
pub struct AgentEnsemble {
    pub states: PointSet,
    pub domain: BoxDomain,
    pub time: f64,
}

impl AgentEnsemble {
    pub fn new(states: PointSet, domain: BoxDomain) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one agent".into()));
        }
        if states.dim() != domain.dim() {
            return Err(Error::Dimension("states and domain differ in dimension".into()));
        }
        if states.coords().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: 0.0 });
        }
        if let Some(index) = states.first_outside(&domain, 1e-12) {
            return Err(Error::DomainViolation {
                index,
                point: states.point(index).to_vec(),
            });
        }
        Ok(Self {
            states,
            domain,
            time: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// `n` agents drawn independently and uniformly from `sample_box`, placed in `domain`.
pub fn sample_uniform_box(n: usize, sample_box: &BoxDomain, domain: &BoxDomain, seed: u64) -> Result<AgentEnsemble> {
    if n == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one agent".into()));
    }
    let mut rng = SeededRng::new(seed);
    let d = sample_box.dim();
    let mut coords = Vec::with_capacity(n * d);
    for _ in 0..n {
        for a in 0..d {
            coords.push(rng.uniform_in(sample_box.lower()[a], sample_box.upper()[a]));
        }
    }
    AgentEnsemble::new(PointSet::new(d, coords)?, domain.clone())
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<PointSet>,
}

impl Trajectory {
    /// Snapshot closest to time `t`.
    pub fn at(&self, t: f64) -> &PointSet {
        let i = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map_or(0, |(i, _)| i);
        &self.snapshots[i]
    }

    pub fn last(&self) -> &PointSet {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    /// Keep every `record_every`-th step (the initial state is always kept).
    pub record_every: usize,
    /// Fractional inflation of the domain tolerated before a domain-exit error.
    pub margin: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            record_every: 1,
            margin: 0.05,
        }
    }
}

/// Right-hand side of the agent system at time `t`.
pub fn agent_rhs(dynamics: &DynamicsSpec, t: f64, x: &[f64], dx: &mut [f64], d: usize, leader_buf: &mut [f64]) {
    let n = x.len() / d;
    dx.fill(0.0);
    if let Some(f) = &dynamics.field {
        for i in 0..n {
            f.eval(&x[i * d..(i + 1) * d], &mut dx[i * d..(i + 1) * d]);
        }
    }
    if let Some(g) = &dynamics.interaction {
        let inv_n = 1.0 / n as f64;
        let mut acc = vec![0.0; n * d];
        g.accumulate_all(x, &mut acc);
        for (o, a) in dx.iter_mut().zip(&acc) {
            *o += inv_n * a;
        }
    }
    if let Some(eta) = &dynamics.leader_influence {
        for (l, track) in dynamics.leaders.iter().enumerate() {
            track.position(t, &mut leader_buf[l * d..(l + 1) * d]);
        }
        let mut acc = vec![0.0; d];
        for i in 0..n {
            acc.fill(0.0);
            eta.accumulate(&x[i * d..(i + 1) * d], leader_buf, &mut acc);
            for c in 0..d {
                dx[i * d + c] += acc[c];
            }
        }
    }
}

/// Integrates the agents over `[0, t_end]` with classical RK4.
pub fn simulate(
    ensemble: &AgentEnsemble,
    dynamics: &DynamicsSpec,
    t_end: f64,
    h: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let d = ensemble.domain.dim();
    dynamics.check(d)?;
    let steps = step_count(t_end, h)?;
    let h = if steps > 0 { t_end / steps as f64 } else { h };
    let outer = ensemble.domain.inflate(opts.margin);
    for (l, track) in dynamics.leaders.iter().enumerate() {
        track.validate(&outer, t_end, 1000, l)?;
    }
    let mut y = ensemble.states.coords().to_vec();
    let mut leader_buf = vec![0.0; dynamics.leaders.len() * d];
    let mut rk = Rk4::new(y.len());
    let mut rhs = |t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
        agent_rhs(dynamics, t, x, dx, d, &mut leader_buf);
        Ok(())
    };
    let every = opts.record_every.max(1);
    let mut times = vec![ensemble.time];
    let mut snapshots = vec![ensemble.states.clone()];
    for s in 0..steps {
        let t = ensemble.time + s as f64 * h;
        rk.step(&mut rhs, t, h, &mut y)?;
        let t_next = ensemble.time + (s + 1) as f64 * h;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: t_next });
        }
        if let Some(agent) = y.chunks_exact(d).position(|p| !outer.contains(p, 0.0)) {
            return Err(Error::DomainExit { time: t_next, agent });
        }
        if (s + 1) % every == 0 || s + 1 == steps {
            times.push(t_next);
            snapshots.push(PointSet::new(d, y.clone())?);
        }
    }
    Ok(Trajectory { times, snapshots })
}

/// `m_k = (1/N) sum_i phi_k(x_i)`.
pub fn empirical_moments(states: &PointSet, basis: &KernelBasis) -> Result<DVector<f64>> {
    let values = basis.values(states)?;
    let n = states.len() as f64;
    let mut m = DVector::zeros(basis.size());
    for k in 0..basis.size() {
        m[k] = values.column(k).iter().sum::<f64>() / n;
    }
    if let Some(c) = basis.constant_index() {
        // exact: every entry is 1.0 and the sum of N ones is exact in binary
        m[c] = 1.0;
    }
    Ok(m)
}

/// Moments at every snapshot.
pub fn moment_series(traj: &Trajectory, basis: &KernelBasis) -> Result<Vec<DVector<f64>>> {
    traj.snapshots.iter().map(|s| empirical_moments(s, basis)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_basis, BasisSpec};
    use crate::dynamics::{FieldSpec, PairSpec};
    use std::sync::Arc;

    fn line(a: f64) -> BoxDomain {
        BoxDomain::interval(-a, a).unwrap()
    }

    #[test]
    fn decay_of_single_agent() {
        let ens = AgentEnsemble::new(PointSet::from_scalars(&[1.0]), line(2.0)).unwrap();
        let dynamics = DynamicsSpec::default().with_field(FieldSpec::Linear { rate: -1.0 }.build(1).unwrap());
        let tr = simulate(&ens, &dynamics, 1.0, 1e-3, &SimOptions::default()).unwrap();
        assert!((tr.last().point(0)[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(tr.times.len(), 1001);
    }

    #[test]
    fn zero_dynamics_is_constant() {
        let ens = sample_uniform_box(20, &line(1.5), &line(2.0), 3).unwrap();
        let dynamics = DynamicsSpec::default().with_field(FieldSpec::Zero.build(1).unwrap());
        let tr = simulate(&ens, &dynamics, 1.0, 0.1, &SimOptions::default()).unwrap();
        assert_eq!(tr.last(), &ens.states);
    }

    #[test]
    fn domain_exit_reported() {
        let ens = AgentEnsemble::new(PointSet::from_scalars(&[0.0, 1.0]), line(2.0)).unwrap();
        let dynamics = DynamicsSpec::default().with_field(FieldSpec::Linear { rate: 1.0 }.build(1).unwrap());
        match simulate(&ens, &dynamics, 2.0, 0.01, &SimOptions::default()) {
            Err(Error::DomainExit { agent, time }) => {
                assert_eq!(agent, 1);
                assert!((time - 2.2f64.ln()).abs() < 0.02);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sampling() {
        assert!(BoxDomain::interval(0.0, 0.0).is_err());
        let a = sample_uniform_box(100, &line(1.5), &line(2.0), 42).unwrap();
        let b = sample_uniform_box(100, &line(1.5), &line(2.0), 42).unwrap();
        assert_eq!(a.states, b.states);
        assert!(sample_uniform_box(0, &line(1.5), &line(2.0), 1).is_err());
        let big = sample_uniform_box(10_000, &line(1.5), &line(2.0), 42).unwrap();
        let basis = make_basis(&BasisSpec::Monomial { degree: 4 }, &line(2.0)).unwrap();
        let m = empirical_moments(&big.states, &basis).unwrap();
        // mean within 4 sigma / sqrt(N) of the center, sigma = 3 / sqrt(12)
        assert!(m[1].abs() < 4.0 * (3.0 / 12f64.sqrt()) / 100.0);
        assert!((m[2] - 0.75).abs() < 0.03);
        assert!((m[4] - 1.5f64.powi(4) / 5.0).abs() < 0.05);
    }

    #[test]
    fn moment_examples() {
        let basis = make_basis(&BasisSpec::Monomial { degree: 3 }, &line(2.0)).unwrap();
        let m = empirical_moments(&PointSet::from_scalars(&[0.0]), &basis).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        let m = empirical_moments(&PointSet::from_scalars(&[-1.0, 1.0]), &basis).unwrap();
        assert_eq!(&m.as_slice()[..3], &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn interaction_conserves_centroid() {
        let ens = sample_uniform_box(50, &line(1.5), &line(2.0), 9).unwrap();
        let g = PairSpec::GaussianRepulsion { amplitude: 2.0, rate: 0.6 }.build(1).unwrap();
        let dynamics = DynamicsSpec::default().with_interaction(g);
        let tr = simulate(&ens, &dynamics, 1.0, 0.01, &SimOptions::default()).unwrap();
        let mean = |p: &PointSet| p.coords().iter().sum::<f64>() / p.len() as f64;
        assert!((mean(tr.last()) - mean(&ens.states)).abs() < 1e-12);
    }

    #[test]
    fn leaders_pull_followers() {
        let k = BoxDomain::centered_cube(2, 2.0).unwrap();
        let ens = sample_uniform_box(30, &BoxDomain::centered_cube(2, 1.5).unwrap(), &k, 1).unwrap();
        let eta = PairSpec::crowd_leader().build(2).unwrap();
        let track = crate::dynamics::LeaderTrack::Waypoints {
            times: vec![0.0],
            points: vec![vec![1.0, 1.0]],
        };
        let dynamics = DynamicsSpec::default()
            .with_interaction(Arc::clone(&PairSpec::crowd_interaction().build(2).unwrap()))
            .with_leaders(eta, vec![track]);
        let tr = simulate(&ens, &dynamics, 2.0, 5e-3, &SimOptions { record_every: 100, margin: 0.05 }).unwrap();
        let c: Vec<f64> = (0..2)
            .map(|a| tr.last().iter().map(|p| p[a]).sum::<f64>() / 30.0)
            .collect();
        assert!(c[0] > 0.5 && c[1] > 0.5, "{c:?}");
    }
}
