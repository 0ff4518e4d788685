//! Best uniform polynomial approximation on an interval by the Remez exchange.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Highest degree accepted; above this the exchange is declined.
pub const MAX_DEGREE: usize = 48;

const MAX_ITER: usize = 60;

#[derive(Clone, Debug, Serialize)]
pub struct BestApproxResult {
    pub degree: usize,
    pub interval: [f64; 2],
    /// Coefficients in Chebyshev polynomials of `t = (x - mid) / half`.
    pub chebyshev: Vec<f64>,
    /// `E_n(f)`, the largest residual found on the interval.
    pub error: f64,
    /// Alternation points of the residual, in increasing order.
    pub reference: Vec<f64>,
    pub reference_residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The residual is at rounding level: `error` is only an upper estimate
    /// and the alternation set is not meaningful.
    pub below_resolution: bool,
}

impl BestApproxResult {
    fn to_t(&self, x: f64) -> f64 {
        let [a, b] = self.interval;
        (2.0 * x - a - b) / (b - a)
    }

    pub fn eval(&self, x: f64) -> f64 {
        clenshaw(&self.chebyshev, self.to_t(x))
    }

    /// Power-basis coefficients in `x`, lowest degree first. Ill-conditioned
    /// at high degree; meant for display.
    pub fn monomial_coefficients(&self) -> Vec<f64> {
        let n = self.chebyshev.len();
        // power coefficients in t
        let mut prev = vec![0.0; n];
        let mut cur = vec![0.0; n];
        prev[0] = 1.0;
        let mut pt = vec![0.0; n];
        pt[0] += self.chebyshev[0];
        if n > 1 {
            cur[1] = 1.0;
            pt[1] += self.chebyshev[1];
        }
        for k in 2..n {
            let mut next = vec![0.0; n];
            for j in 0..n - 1 {
                next[j + 1] += 2.0 * cur[j];
            }
            for j in 0..n {
                next[j] -= prev[j];
            }
            for j in 0..n {
                pt[j] += self.chebyshev[k] * next[j];
            }
            prev = std::mem::replace(&mut cur, next);
        }
        // t = s x + c
        let [a, b] = self.interval;
        let s = 2.0 / (b - a);
        let c = -(a + b) / (b - a);
        let mut out = vec![0.0; n];
        let mut power = vec![0.0; n];
        power[0] = 1.0;
        for (j, coef) in pt.iter().enumerate() {
            if j > 0 {
                for i in (0..j + 1).rev() {
                    let lower = if i > 0 { power[i - 1] } else { 0.0 };
                    power[i] = power[i] * c + lower * s;
                }
            }
            for i in 0..=j {
                out[i] += coef * power[i];
            }
        }
        out
    }

    /// Signs of the reference residuals alternate and each has magnitude at
    /// least `error - tol`.
    pub fn equioscillates(&self, tol: f64) -> bool {
        if self.reference.len() < self.degree + 2 {
            return false;
        }
        let alternates = self.reference_residuals.windows(2).all(|w| w[0] * w[1] < 0.0);
        let level = self.reference_residuals.iter().all(|r| r.abs() >= self.error - tol);
        alternates && level
    }
}

fn clenshaw(c: &[f64], t: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    c.first().copied().unwrap_or(0.0) + t * b1 - b2
}

fn golden_max(h: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    const R: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - R * (hi - lo);
    let mut x2 = lo + R * (hi - lo);
    let (mut f1, mut f2) = (h(x1), h(x2));
    for _ in 0..90 {
        if hi - lo <= 4.0 * f64::EPSILON * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + R * (hi - lo);
            f2 = h(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - R * (hi - lo);
            f1 = h(x1);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Local extrema of the residual on the sample grid, refined, with runs of
/// equal sign collapsed to their largest member.
fn alternating_extrema(r: &dyn Fn(f64) -> f64, ts: &[f64]) -> Vec<(f64, f64)> {
    let vals: Vec<f64> = ts.iter().map(|&t| r(t)).collect();
    let g = ts.len();
    let mut cand: Vec<(f64, f64)> = vec![(ts[0], vals[0])];
    for j in 1..g - 1 {
        let v = vals[j];
        if v != 0.0 && v.abs() >= vals[j - 1].abs() && v.abs() >= vals[j + 1].abs() {
            let s = v.signum();
            let (t, sv) = golden_max(|t| s * r(t), ts[j - 1], ts[j + 1]);
            if sv >= s * v {
                cand.push((t, s * sv));
            } else {
                cand.push((ts[j], v));
            }
        }
    }
    cand.push((ts[g - 1], vals[g - 1]));

    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(cand.len());
    for (t, v) in cand {
        if v == 0.0 {
            continue;
        }
        match merged.last_mut() {
            Some(last) if last.1.signum() == v.signum() => {
                if v.abs() > last.1.abs() {
                    *last = (t, v);
                }
            }
            _ => merged.push((t, v)),
        }
    }
    merged
}

/// Best uniform approximation of `f` on `interval` by polynomials of degree
/// `n`. Stops when the largest residual exceeds the smallest reference
/// residual by at most `tol` relative. Exchange stagnation is reported via
/// `converged = false`.
pub fn best_linf_poly(f: impl Fn(f64) -> f64, n: usize, interval: [f64; 2], tol: f64) -> Result<BestApproxResult> {
    let [a, b] = interval;
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(Error::InvalidArgument(format!("bad interval [{a}, {b}]")));
    }
    if !(tol >= 1e-12) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} below 1e-12")));
    }
    if n > MAX_DEGREE {
        return Err(Error::InvalidArgument(format!("degree {n} above the ceiling {MAX_DEGREE}")));
    }
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let g = |t: f64| f(mid + half * t);
    let to_x = |t: f64| mid + half * t;

    let npts = n + 2;
    let samples = (200 * npts).max(2000);
    let ts: Vec<f64> = (0..samples)
        .map(|j| -(std::f64::consts::PI * j as f64 / (samples - 1) as f64).cos())
        .collect();
    let scale = ts.iter().map(|&t| g(t).abs()).fold(0.0, f64::max);

    let mut reference: Vec<f64> = (0..npts)
        .map(|i| -(std::f64::consts::PI * i as f64 / (npts - 1) as f64).cos())
        .collect();
    let mut coeffs = vec![0.0; n + 1];
    let mut shifted_start = false;

    for iter in 1..=MAX_ITER {
        let mut mat = DMatrix::zeros(npts, npts);
        let mut rhs = DVector::zeros(npts);
        for (i, &t) in reference.iter().enumerate() {
            let (mut t0, mut t1) = (1.0, t);
            for k in 0..=n {
                mat[(i, k)] = t0;
                let t2 = 2.0 * t * t1 - t0;
                t0 = t1;
                t1 = t2;
            }
            mat[(i, n + 1)] = if i % 2 == 0 { 1.0 } else { -1.0 };
            rhs[i] = g(t);
        }
        let sol = mat
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Nonconvergence("singular reference system".into()))?;
        coeffs.copy_from_slice(&sol.as_slice()[..=n]);

        let resid = |t: f64| g(t) - clenshaw(&coeffs, t);
        let extrema = alternating_extrema(&resid, &ts);
        let max_err = extrema.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
        let rounding = 16.0 * f64::EPSILON * (scale + coeffs.iter().map(|c| c.abs()).sum::<f64>());
        let noise = 16.0 * rounding;

        let finish = |window: &[(f64, f64)], converged: bool, below: bool| BestApproxResult {
            degree: n,
            interval,
            chebyshev: coeffs.clone(),
            error: max_err,
            reference: window.iter().map(|e| to_x(e.0)).collect(),
            reference_residuals: window.iter().map(|e| e.1).collect(),
            iterations: iter,
            converged,
            below_resolution: below,
        };

        if max_err <= noise {
            return Ok(finish(&extrema, true, true));
        }
        if extrema.len() < npts && !shifted_start {
            // a symmetric start can force a zero level for even or odd f
            shifted_start = true;
            let m = npts + 1;
            reference = (0..npts)
                .map(|i| -(std::f64::consts::PI * i as f64 / (m - 1) as f64).cos())
                .collect();
            continue;
        }
        if extrema.len() < npts {
            log::debug!("Remez: {} alternations for degree {n}", extrema.len());
            return Ok(finish(&extrema, false, false));
        }
        let imax = extrema
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .1.abs().total_cmp(&y.1 .1.abs()))
            .map_or(0, |(i, _)| i);
        let first = imax.saturating_sub(npts - 1);
        let last = imax.min(extrema.len() - npts);
        let start = (first..=last)
            .max_by(|&p, &q| {
                let lp = extrema[p..p + npts].iter().map(|e| e.1.abs()).fold(f64::INFINITY, f64::min);
                let lq = extrema[q..q + npts].iter().map(|e| e.1.abs()).fold(f64::INFINITY, f64::min);
                lp.total_cmp(&lq)
            })
            .unwrap_or(first);
        let window = &extrema[start..start + npts];
        let level = window.iter().map(|e| e.1.abs()).fold(f64::INFINITY, f64::min);
        if max_err - level <= (tol * max_err).max(rounding) {
            return Ok(finish(window, true, false));
        }
        if iter == MAX_ITER {
            return Ok(finish(window, false, false));
        }
        reference = window.iter().map(|e| e.0).collect();
    }
    unreachable!("loop returns on its last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cubic_by_quadratic() {
        let r = best_linf_poly(|x| x * x * x, 2, [-1.0, 1.0], 1e-12).unwrap();
        assert!(r.converged && !r.below_resolution);
        assert!((r.error - 0.25).abs() < 1e-12);
        let c = r.monomial_coefficients();
        assert!(c[0].abs() < 1e-12 && (c[1] - 0.75).abs() < 1e-12 && c[2].abs() < 1e-12, "{c:?}");
        assert!(r.equioscillates(1e-9));
    }

    #[test]
    fn line_by_constant() {
        let r = best_linf_poly(|x| x, 0, [-1.0, 1.0], 1e-12).unwrap();
        assert!((r.error - 1.0).abs() < 1e-12);
        assert!(r.chebyshev[0].abs() < 1e-12);
    }

    #[test]
    fn monic_chebyshev() {
        for n in 0..=12 {
            let r = best_linf_poly(|x| x.powi(n as i32 + 1), n, [-1.0, 1.0], 1e-10).unwrap();
            assert!(r.converged);
            assert!((r.error - 0.5f64.powi(n as i32)).abs() < 1e-12, "n={n}: {}", r.error);
            assert!(r.equioscillates(1e-9));
        }
    }

    #[test]
    fn exp_has_n_plus_two_alternations() {
        for n in [1, 4, 8] {
            let r = best_linf_poly(f64::exp, n, [-1.0, 1.0], 1e-10).unwrap();
            assert!(r.converged && r.equioscillates(1e-9), "{r:?}");
            // sampled residual never exceeds the certified level
            let worst = (0..=5000)
                .map(|i| -1.0 + 2.0 * i as f64 / 5000.0)
                .map(|x| (x.exp() - r.eval(x)).abs())
                .fold(0.0, f64::max);
            assert!(worst <= r.error * (1.0 + 1e-9));
        }
    }

    #[test]
    fn shifted_interval() {
        // x^2 on [0, 2] by a line: error 1/2 by rescaling
        let r = best_linf_poly(|x| x * x, 1, [0.0, 2.0], 1e-12).unwrap();
        assert!((r.error - 0.5).abs() < 1e-12);
        let c = r.monomial_coefficients();
        assert!((c[0] + 0.5).abs() < 1e-12 && (c[1] - 2.0).abs() < 1e-12, "{c:?}");
    }

    #[test]
    fn exact_representation_is_below_resolution() {
        let r = best_linf_poly(|x| 3.0 * x * x - 1.0, 4, [-1.0, 1.0], 1e-10).unwrap();
        assert!(r.below_resolution && r.error < 1e-13);
        let z = best_linf_poly(|_| 0.0, 3, [-1.0, 1.0], 1e-10).unwrap();
        assert_eq!(z.error, 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(best_linf_poly(f64::exp, 49, [-1.0, 1.0], 1e-10).is_err());
        assert!(best_linf_poly(f64::exp, 3, [1.0, 1.0], 1e-10).is_err());
        assert!(best_linf_poly(f64::exp, 3, [-1.0, 1.0], 1e-13).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn equioscillation_for_random_smooth(a in -2.0f64..2.0, w in 0.5f64..3.0, n in 1usize..10) {
            let f = move |x: f64| (w * x + a).sin() + 0.3 * (x * a).exp();
            let r = best_linf_poly(f, n, [-1.0, 1.0], 1e-10).unwrap();
            prop_assume!(!r.below_resolution);
            prop_assert!(r.converged);
            prop_assert!(r.equioscillates(1e-9));
        }
    }
}
