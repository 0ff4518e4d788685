//! Agent dynamics: single-agent fields, pairwise maps and leader tracks.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::geometry::BoxDomain;

const DIST_FLOOR: f64 = 1e-12;

/// A map `f: R^d -> R^d`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
    /// Row-major `d x d` Jacobian.
    fn jacobian(&self, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::JacobianUnavailable)
    }
}

/// A map `g: R^d x R^d -> R^d`.
pub trait PairField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    /// `out += sum_j g(x, ys[j])`, `ys` row-major, summed in index order.
    fn accumulate(&self, x: &[f64], ys: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut tmp = vec![0.0; d];
        for y in ys.chunks_exact(d) {
            self.eval(x, y, &mut tmp);
            for c in 0..d {
                out[c] += tmp[c];
            }
        }
    }

    /// `out[i] += sum_j g(x_i, x_j)` over all ordered pairs of rows of `xs`.
    fn accumulate_all(&self, xs: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (x, o) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.accumulate(x, xs, o);
        }
    }
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `f(x) = rate * x`.
#[derive(Clone, Debug)]
pub struct LinearField {
    pub dim: usize,
    pub rate: f64,
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.rate * v;
        }
    }
    fn jacobian(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        for i in 0..self.dim {
            out[i * self.dim + i] = self.rate;
        }
        Ok(())
    }
}

/// One-dimensional polynomial `sum_i c_i x^i`.
#[derive(Clone, Debug)]
pub struct PolynomialField {
    pub coefficients: Vec<f64>,
}

impl VectorField for PolynomialField {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x[0] + c);
    }
    fn jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self
            .coefficients
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, c)| acc * x[0] + i as f64 * c);
        Ok(())
    }
}

/// `g(x, y) = amplitude * exp(-rate |x - y|^2) (x - y)`.
#[derive(Clone, Debug)]
pub struct GaussianRepulsion {
    pub dim: usize,
    pub amplitude: f64,
    pub rate: f64,
}

impl PairField for GaussianRepulsion {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let s = self.amplitude * (-self.rate * r2).exp();
        for c in 0..self.dim {
            out[c] = s * (x[c] - y[c]);
        }
    }
    fn accumulate(&self, x: &[f64], ys: &[f64], out: &mut [f64]) {
        if self.dim == 1 {
            let x0 = x[0];
            let mut acc = 0.0;
            for &y in ys {
                let r = x0 - y;
                acc += (-self.rate * r * r).exp() * r;
            }
            out[0] += self.amplitude * acc;
        } else {
            let mut tmp = vec![0.0; self.dim];
            for y in ys.chunks_exact(self.dim) {
                self.eval(x, y, &mut tmp);
                for c in 0..self.dim {
                    out[c] += tmp[c];
                }
            }
        }
    }

    fn accumulate_all(&self, xs: &[f64], out: &mut [f64]) {
        if self.dim != 1 {
            return odd_pairs(self, xs, out);
        }
        // g(x, y) = -g(y, x): each unordered pair is evaluated once
        let n = xs.len();
        for i in 0..n {
            let xi = xs[i];
            let mut acc = 0.0;
            let (_, rest) = out.split_at_mut(i + 1);
            for (&y, o) in xs[i + 1..].iter().zip(rest) {
                let r = xi - y;
                let w = self.amplitude * (-self.rate * r * r).exp() * r;
                acc += w;
                *o -= w;
            }
            out[i] += acc;
        }
    }
}

/// Pairwise sums for an odd map, `g(x, y) = -g(y, x)`.
fn odd_pairs<P: PairField + ?Sized>(g: &P, xs: &[f64], out: &mut [f64]) {
    let d = g.dim();
    let n = xs.len() / d;
    let mut tmp = vec![0.0; d];
    for i in 0..n {
        let xi = &xs[i * d..(i + 1) * d];
        for j in i + 1..n {
            g.eval(xi, &xs[j * d..(j + 1) * d], &mut tmp);
            for c in 0..d {
                out[i * d + c] += tmp[c];
                out[j * d + c] -= tmp[c];
            }
        }
    }
}

/// `g(x, y) = amplitude / (|x - y| + offset) * exp(-decay |x - y|) (x - y)`.
#[derive(Clone, Debug)]
pub struct CrowdInteraction {
    pub dim: usize,
    pub amplitude: f64,
    pub offset: f64,
    pub decay: f64,
}

impl PairField for CrowdInteraction {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let r = dist(x, y).max(DIST_FLOOR);
        let s = self.amplitude / (r + self.offset) * (-self.decay * r).exp();
        for c in 0..self.dim {
            out[c] = s * (x[c] - y[c]);
        }
    }

    fn accumulate_all(&self, xs: &[f64], out: &mut [f64]) {
        odd_pairs(self, xs, out)
    }
}

/// `eta(x, y) = (base + gain exp(-|x - y| / range) - push / (|x - y| + offset)) (y - x)`.
#[derive(Clone, Debug)]
pub struct CrowdLeader {
    pub dim: usize,
    pub base: f64,
    pub gain: f64,
    pub range: f64,
    pub push: f64,
    pub offset: f64,
}

impl PairField for CrowdLeader {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let r = dist(x, y).max(DIST_FLOOR);
        let s = self.base + self.gain * (-r / self.range).exp() - self.push / (r + self.offset);
        for c in 0..self.dim {
            out[c] = s * (y[c] - x[c]);
        }
    }
}

/// Field backed by a parsed expression.
#[derive(Clone, Debug)]
pub struct ExprField(pub Expression);

impl VectorField for ExprField {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.0.eval(x, out)
    }
    fn jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.0.jacobian(x, out);
        Ok(())
    }
}

/// Pair map backed by a parsed expression.
#[derive(Clone, Debug)]
pub struct ExprPair(pub Expression);

impl PairField for ExprPair {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let d = self.0.dim();
        let mut v = [0.0; 8];
        if 2 * d <= v.len() {
            v[..d].copy_from_slice(x);
            v[d..2 * d].copy_from_slice(y);
            self.0.eval(&v[..2 * d], out);
        } else {
            let v: Vec<f64> = x.iter().chain(y).copied().collect();
            self.0.eval(&v, out);
        }
    }
}

/// Field from a closure; handy for tests and ad-hoc experiments.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

pub struct FnPair<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync> PairField for FnPair<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.f)(x, y, out)
    }
}

// ---------------------------------------------------------------- catalog

fn default_one() -> f64 {
    -1.0
}

/// Serializable description of a single-agent field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    Zero,
    Linear {
        #[serde(default = "default_one")]
        rate: f64,
    },
    Polynomial { coefficients: Vec<f64> },
    Expr { expr: String },
}

impl FieldSpec {
    pub fn build(&self, dim: usize) -> Result<Arc<dyn VectorField>> {
        Ok(match self {
            FieldSpec::Zero => Arc::new(LinearField { dim, rate: 0.0 }),
            FieldSpec::Linear { rate } => Arc::new(LinearField { dim, rate: *rate }),
            FieldSpec::Polynomial { coefficients } => {
                if dim != 1 {
                    return Err(Error::InvalidArgument("polynomial fields are one-dimensional".into()));
                }
                Arc::new(PolynomialField {
                    coefficients: coefficients.clone(),
                })
            }
            FieldSpec::Expr { expr } => Arc::new(ExprField(Expression::field(expr, dim)?)),
        })
    }
}

/// Serializable description of a pair map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairSpec {
    Zero,
    GaussianRepulsion { amplitude: f64, rate: f64 },
    CrowdInteraction {
        #[serde(default = "crowd_amp")]
        amplitude: f64,
        #[serde(default = "crowd_offset")]
        offset: f64,
        #[serde(default = "crowd_decay")]
        decay: f64,
    },
    CrowdLeader {
        #[serde(default = "leader_base")]
        base: f64,
        #[serde(default = "leader_gain")]
        gain: f64,
        #[serde(default = "leader_range")]
        range: f64,
        #[serde(default = "leader_gain")]
        push: f64,
        #[serde(default = "crowd_offset")]
        offset: f64,
    },
    Expr { expr: String },
}

fn crowd_amp() -> f64 {
    4.8
}
fn crowd_offset() -> f64 {
    0.1
}
fn crowd_decay() -> f64 {
    0.4
}
fn leader_base() -> f64 {
    0.09
}
fn leader_gain() -> f64 {
    6.0
}
fn leader_range() -> f64 {
    50.0
}

impl PairSpec {
    pub fn crowd_interaction() -> Self {
        PairSpec::CrowdInteraction {
            amplitude: crowd_amp(),
            offset: crowd_offset(),
            decay: crowd_decay(),
        }
    }

    pub fn crowd_leader() -> Self {
        PairSpec::CrowdLeader {
            base: leader_base(),
            gain: leader_gain(),
            range: leader_range(),
            push: leader_gain(),
            offset: crowd_offset(),
        }
    }

    /// Expression text equivalent to the catalog entry.
    pub fn as_expression(&self) -> String {
        match self {
            PairSpec::Zero => "0".into(),
            PairSpec::GaussianRepulsion { amplitude, rate } => {
                format!("{amplitude}*exp(-{rate}*norm2(x-y)^2)*(x-y)")
            }
            PairSpec::CrowdInteraction {
                amplitude,
                offset,
                decay,
            } => format!("{amplitude}/(norm2(x-y)+{offset})*exp(-{decay}*norm2(x-y))*(x-y)"),
            PairSpec::CrowdLeader {
                base,
                gain,
                range,
                push,
                offset,
            } => format!(
                "({base} + {gain}*exp(-norm2(x-y)/{range}) - {push}/(norm2(x-y)+{offset}))*(y-x)"
            ),
            PairSpec::Expr { expr } => expr.clone(),
        }
    }

    pub fn build(&self, dim: usize) -> Result<Arc<dyn PairField>> {
        Ok(match self {
            PairSpec::Zero => Arc::new(GaussianRepulsion {
                dim,
                amplitude: 0.0,
                rate: 0.0,
            }),
            PairSpec::GaussianRepulsion { amplitude, rate } => Arc::new(GaussianRepulsion {
                dim,
                amplitude: *amplitude,
                rate: *rate,
            }),
            PairSpec::CrowdInteraction {
                amplitude,
                offset,
                decay,
            } => Arc::new(CrowdInteraction {
                dim,
                amplitude: *amplitude,
                offset: *offset,
                decay: *decay,
            }),
            PairSpec::CrowdLeader {
                base,
                gain,
                range,
                push,
                offset,
            } => Arc::new(CrowdLeader {
                dim,
                base: *base,
                gain: *gain,
                range: *range,
                push: *push,
                offset: *offset,
            }),
            PairSpec::Expr { expr } => Arc::new(ExprPair(Expression::pair(expr, dim)?)),
        })
    }
}

// ---------------------------------------------------------------- leaders

/// Prescribed leader trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeaderTrack {
    /// Piecewise-linear through `points` at increasing `times`; constant outside.
    Waypoints { times: Vec<f64>, points: Vec<Vec<f64>> },
    /// Straight traverse from `start` to `end` over `duration` plus a lateral
    /// offset `amplitude * sin(2 pi frequency s + phase)` perpendicular to the
    /// traverse, `s = t / duration` in `[0, 1]`. Constant after `duration`.
    Sinusoid {
        start: Vec<f64>,
        end: Vec<f64>,
        duration: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl LeaderTrack {
    pub fn dim(&self) -> usize {
        match self {
            LeaderTrack::Waypoints { points, .. } => points.first().map_or(0, Vec::len),
            LeaderTrack::Sinusoid { start, .. } => start.len(),
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            LeaderTrack::Waypoints { times, points } => {
                if times.is_empty() || times.len() != points.len() {
                    return Err(Error::InvalidArgument("waypoint times and points must match".into()));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidArgument("waypoint times must increase".into()));
                }
                let d = points[0].len();
                if d == 0 || points.iter().any(|p| p.len() != d) {
                    return Err(Error::InvalidArgument("ragged waypoints".into()));
                }
            }
            LeaderTrack::Sinusoid {
                start,
                end,
                duration,
                ..
            } => {
                if start.is_empty() || start.len() != end.len() || !(*duration > 0.0) {
                    return Err(Error::InvalidArgument("bad sinusoid track".into()));
                }
            }
        }
        Ok(())
    }

    pub fn position(&self, t: f64, out: &mut [f64]) {
        match self {
            LeaderTrack::Waypoints { times, points } => {
                let n = times.len();
                if t <= times[0] {
                    out.copy_from_slice(&points[0]);
                } else if t >= times[n - 1] {
                    out.copy_from_slice(&points[n - 1]);
                } else {
                    let i = times.partition_point(|&s| s <= t) - 1;
                    let w = (t - times[i]) / (times[i + 1] - times[i]);
                    for c in 0..out.len() {
                        out[c] = (1.0 - w) * points[i][c] + w * points[i + 1][c];
                    }
                }
            }
            LeaderTrack::Sinusoid {
                start,
                end,
                duration,
                amplitude,
                frequency,
                phase,
            } => {
                let s = (t / duration).clamp(0.0, 1.0);
                let lateral = amplitude * (TAU * frequency * s + phase).sin();
                let dir: Vec<f64> = start.iter().zip(end).map(|(a, b)| b - a).collect();
                let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                for c in 0..out.len() {
                    out[c] = start[c] + s * dir[c];
                }
                if out.len() == 2 && len > 0.0 {
                    out[0] += lateral * (-dir[1] / len);
                    out[1] += lateral * (dir[0] / len);
                }
            }
        }
    }

    /// Fails if the track leaves `domain` at any of `samples` equally spaced times in `[0, t_end]`.
    pub fn validate(&self, domain: &BoxDomain, t_end: f64, samples: usize, leader: usize) -> Result<()> {
        self.check()?;
        if self.dim() != domain.dim() {
            return Err(Error::Dimension(format!(
                "leader {leader} has dimension {}, domain {}",
                self.dim(),
                domain.dim()
            )));
        }
        let mut p = vec![0.0; self.dim()];
        for i in 0..=samples {
            let t = t_end * i as f64 / samples.max(1) as f64;
            self.position(t, &mut p);
            if !domain.contains(&p, 1e-12) {
                return Err(Error::LeaderExit { time: t, leader });
            }
        }
        Ok(())
    }

    /// `count` planar sinusoid traverses along directions `2 pi j / count`,
    /// each on a lane shifted by `offset` to the right of the center line,
    /// from `-half_length` to `+half_length` along its direction, with phases
    /// `2 pi j / count`. Four leaders give a rotating pattern around the origin.
    pub fn traverse_family(
        count: usize,
        offset: f64,
        half_length: f64,
        duration: f64,
        amplitude: f64,
        frequency: f64,
    ) -> Vec<LeaderTrack> {
        (0..count)
            .map(|j| {
                let theta = TAU * j as f64 / count as f64;
                let (s, c) = theta.sin_cos();
                // direction (c, s), left normal (-s, c)
                let lane = [offset * s, -offset * c];
                LeaderTrack::Sinusoid {
                    start: vec![lane[0] - half_length * c, lane[1] - half_length * s],
                    end: vec![lane[0] + half_length * c, lane[1] + half_length * s],
                    duration,
                    amplitude,
                    frequency,
                    phase: theta,
                }
            })
            .collect()
    }

    /// Componentwise range of the track over `[0, t_end]` (sampled).
    pub fn visited_box(&self, t_end: f64, samples: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        let mut p = vec![0.0; d];
        for i in 0..=samples {
            self.position(t_end * i as f64 / samples.max(1) as f64, &mut p);
            for c in 0..d {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        (lo, hi)
    }
}

/// Complete agent dynamics
/// `x_i' = f(x_i) + (1/N) sum_j g(x_i, x_j) + sum_l eta(x_i, y_l(t))`.
#[derive(Clone, Default)]
pub struct DynamicsSpec {
    pub field: Option<Arc<dyn VectorField>>,
    pub interaction: Option<Arc<dyn PairField>>,
    pub leader_influence: Option<Arc<dyn PairField>>,
    pub leaders: Vec<LeaderTrack>,
}

impl fmt::Debug for DynamicsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicsSpec")
            .field("field", &self.field.is_some())
            .field("interaction", &self.interaction.is_some())
            .field("leader_influence", &self.leader_influence.is_some())
            .field("leaders", &self.leaders.len())
            .finish()
    }
}

impl DynamicsSpec {
    pub fn with_field(mut self, f: Arc<dyn VectorField>) -> Self {
        self.field = Some(f);
        self
    }

    pub fn with_interaction(mut self, g: Arc<dyn PairField>) -> Self {
        self.interaction = Some(g);
        self
    }

    pub fn with_leaders(mut self, eta: Arc<dyn PairField>, tracks: Vec<LeaderTrack>) -> Self {
        self.leader_influence = Some(eta);
        self.leaders = tracks;
        self
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        if self.field.is_none() && self.interaction.is_none() && self.leader_influence.is_none() {
            return Err(Error::InvalidArgument("dynamics have no components".into()));
        }
        let dims = [
            self.field.as_ref().map(|f| f.dim()),
            self.interaction.as_ref().map(|g| g.dim()),
            self.leader_influence.as_ref().map(|e| e.dim()),
        ];
        if dims.iter().flatten().any(|&d| d != dim) {
            return Err(Error::Dimension(format!("dynamics do not match state dimension {dim}")));
        }
        if self.leader_influence.is_some() != !self.leaders.is_empty() {
            return Err(Error::InvalidArgument(
                "leader influence and leader tracks must be given together".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn fd_check_pair(e: &Expression, rng: &mut SeededRng, half_width: f64) {
        let n = e.n_vars();
        let d = e.dim();
        for _ in 0..100 {
            let v: Vec<f64> = (0..n).map(|_| rng.uniform_in(-half_width, half_width)).collect();
            let mut jac = vec![0.0; d * n];
            e.jacobian(&v, &mut jac);
            for var in 0..n {
                let h = 1e-6;
                let (mut vp, mut vm) = (v.clone(), v.clone());
                vp[var] += h;
                vm[var] -= h;
                let (mut fp, mut fm) = (vec![0.0; d], vec![0.0; d]);
                e.eval(&vp, &mut fp);
                e.eval(&vm, &mut fm);
                for c in 0..d {
                    let fd = (fp[c] - fm[c]) / (2.0 * h);
                    let an = jac[c * n + var];
                    let scale = an.abs().max(1.0);
                    assert!((fd - an).abs() <= 1e-6 * scale, "{}: d{c}/d{var} fd {fd} vs {an}", e.text());
                }
            }
        }
    }

    #[test]
    fn traverse_family_geometry() {
        let tracks = LeaderTrack::traverse_family(4, 1.0, 1.6, 10.0, 0.3, 1.0);
        let k = BoxDomain::centered_cube(2, 2.0).unwrap();
        let mut p = [0.0; 2];
        tracks[0].position(0.0, &mut p);
        assert!((p[0] + 1.6).abs() < 1e-12 && (p[1] + 1.0).abs() < 1e-12, "{p:?}");
        tracks[1].position(10.0, &mut p);
        // lateral offset 0.3 sin(2 pi + pi/2) to the left of +y
        assert!((p[0] - 0.7).abs() < 1e-12 && (p[1] - 1.6).abs() < 1e-12, "{p:?}");
        for (j, t) in tracks.iter().enumerate() {
            t.validate(&k, 10.0, 500, j).unwrap();
        }
    }

    #[test]
    fn catalog_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(11);
        let pairs = [
            (PairSpec::GaussianRepulsion { amplitude: 2.0, rate: 0.6 }, 1),
            (PairSpec::GaussianRepulsion { amplitude: 2.0, rate: 0.6 }, 2),
            (PairSpec::crowd_interaction(), 2),
            (PairSpec::crowd_leader(), 2),
            (PairSpec::Expr { expr: "2*exp(-0.6*(x-y)^2)*(x-y)".into() }, 1),
        ];
        for (spec, d) in pairs {
            let e = Expression::pair(&spec.as_expression(), d).unwrap();
            fd_check_pair(&e, &mut rng, 2.0);
        }
        for text in ["-x", "x - x^3", "[x2, -x1]"] {
            let d = if text.contains('[') { 2 } else { 1 };
            fd_check_pair(&Expression::field(text, d).unwrap(), &mut rng, 1.0);
        }
    }

    #[test]
    fn expressions_agree_with_native_maps() {
        let mut rng = SeededRng::new(5);
        let cases = [
            (PairSpec::GaussianRepulsion { amplitude: 2.0, rate: 0.6 }, 1),
            (PairSpec::crowd_interaction(), 2),
            (PairSpec::crowd_leader(), 2),
        ];
        for (spec, d) in cases {
            let native = spec.build(d).unwrap();
            let parsed = Expression::pair(&spec.as_expression(), d).unwrap();
            for _ in 0..50 {
                let x: Vec<f64> = (0..d).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
                let (mut a, mut b) = (vec![0.0; d], vec![0.0; d]);
                native.eval(&x, &y, &mut a);
                let v: Vec<f64> = x.iter().chain(&y).copied().collect();
                parsed.eval(&v, &mut b);
                for c in 0..d {
                    assert!((a[c] - b[c]).abs() <= 1e-12 * (1.0 + a[c].abs()));
                }
            }
        }
        // the crowd maps as written in the config examples
        let eta = Expression::pair(
            "(0.09 + 6*exp(-norm2(x-y)/50) - 6/(norm2(x-y)+0.1))*(y-x)",
            2,
        )
        .unwrap();
        let native = PairSpec::crowd_leader().build(2).unwrap();
        let (x, y) = ([0.3, -1.2], [1.1, 0.4]);
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        native.eval(&x, &y, &mut a);
        eta.eval(&[x[0], x[1], y[0], y[1]], &mut b);
        assert!((a[0] - b[0]).abs() < 1e-13 && (a[1] - b[1]).abs() < 1e-13);
    }

    #[test]
    fn batch_accumulation_matches_pointwise() {
        let g = GaussianRepulsion { dim: 1, amplitude: 2.0, rate: 0.6 };
        let ys = [0.1, -0.5, 1.3, 0.7];
        let mut fast = [0.0];
        g.accumulate(&[0.2], &ys, &mut fast);
        let mut slow = 0.0;
        for y in ys {
            let mut o = [0.0];
            g.eval(&[0.2], &[y], &mut o);
            slow += o[0];
        }
        assert!((fast[0] - slow).abs() < 1e-14);
    }

    #[test]
    fn polynomial_field() {
        let p = PolynomialField { coefficients: vec![1.0, -2.0, 0.0, 3.0] };
        let mut o = [0.0];
        p.eval(&[2.0], &mut o);
        assert_eq!(o[0], 1.0 - 4.0 + 24.0);
        p.jacobian(&[2.0], &mut o).unwrap();
        assert_eq!(o[0], -2.0 + 36.0);
    }

    #[test]
    fn tracks() {
        let w = LeaderTrack::Waypoints {
            times: vec![0.0, 1.0, 3.0],
            points: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 2.0]],
        };
        let mut p = [0.0; 2];
        w.position(2.0, &mut p);
        assert_eq!(p, [1.0, 1.0]);
        w.position(10.0, &mut p);
        assert_eq!(p, [1.0, 2.0]);
        let s = LeaderTrack::Sinusoid {
            start: vec![-1.5, 0.0],
            end: vec![1.5, 0.0],
            duration: 10.0,
            amplitude: 0.5,
            frequency: 1.0,
            phase: 0.0,
        };
        s.position(2.5, &mut p);
        assert!((p[0] + 0.75).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        let k = BoxDomain::centered_cube(2, 2.0).unwrap();
        s.validate(&k, 10.0, 1000, 0).unwrap();
        let tight = BoxDomain::centered_cube(2, 0.4).unwrap();
        assert!(matches!(s.validate(&tight, 10.0, 100, 3), Err(Error::LeaderExit { leader: 3, .. })));
    }
}
