//! Decay and divergence sequences for growing numbers of monomial moments.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lemmas::Check;
use crate::pkn::{p_kn, rational_text};
use crate::remez::{best_linf_poly, MAX_DEGREE};

const REMEZ_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct DecayTerm {
    pub m: u32,
    /// `max_{1 <= k <= 4M} E_{4M}(k x^{k-1} f)`.
    pub max_error: f64,
    pub argmax_k: u32,
    /// `M * max_error`.
    pub lemma_weighted: f64,
    /// `2 sqrt(M) * max_error`, the majorant of the moment-derivative error.
    pub majorant: f64,
    /// `M^ell * max_error`.
    pub rate_weighted: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecaySequence {
    pub ell: u32,
    pub terms: Vec<DecayTerm>,
    pub majorant_decreasing: bool,
    /// Set when a Remez solve failed; `terms` stops before the failing `M`.
    pub partial: bool,
}

/// Errors of the best degree-`4M` approximations of `f * d/dx x^k` on
/// `[-1, 1]` for each `M` in `ms`.
pub fn theorem3_decay(f: impl Fn(f64) -> f64, ms: impl IntoIterator<Item = u32>, ell: u32) -> Result<DecaySequence> {
    let mut terms: Vec<DecayTerm> = Vec::new();
    let mut partial = false;
    'outer: for m in ms {
        if m == 0 || 4 * m as usize > MAX_DEGREE {
            return Err(Error::InvalidArgument(format!("M = {m} outside 1..={}", MAX_DEGREE / 4)));
        }
        let deg = 4 * m;
        let mut max_error = 0.0;
        let mut argmax_k = 1;
        for k in 1..=deg {
            let g = |x: f64| k as f64 * x.powi(k as i32 - 1) * f(x);
            let r = best_linf_poly(g, deg as usize, [-1.0, 1.0], REMEZ_TOL)?;
            if !r.converged {
                log::warn!("Remez failed for k = {k}, M = {m}");
                partial = true;
                break 'outer;
            }
            if r.error > max_error {
                max_error = r.error;
                argmax_k = k;
            }
        }
        let mf = m as f64;
        terms.push(DecayTerm {
            m,
            max_error,
            argmax_k,
            lemma_weighted: mf * max_error,
            majorant: 2.0 * mf.sqrt() * max_error,
            rate_weighted: mf.powi(ell as i32) * max_error,
        });
    }
    let majorant_decreasing = terms.windows(2).all(|w| w[1].majorant < w[0].majorant);
    Ok(DecaySequence {
        ell,
        terms,
        majorant_decreasing,
        partial,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropositionTerm {
    pub m: u32,
    /// `M^ell P_{4M-1,2M}`.
    pub value: BigRational,
}

impl PropositionTerm {
    pub fn to_f64(&self) -> f64 {
        self.value.to_f64().unwrap_or(f64::NAN)
    }
}

impl Serialize for PropositionTerm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("PropositionTerm", 3)?;
        st.serialize_field("m", &self.m)?;
        st.serialize_field("value", &rational_text(&self.value))?;
        st.serialize_field("float", &self.to_f64())?;
        st.end()
    }
}

pub fn proposition_decay(ell: u32, ms: impl IntoIterator<Item = u32>) -> Result<Vec<PropositionTerm>> {
    ms.into_iter()
        .map(|m| {
            if m == 0 {
                return Err(Error::InvalidArgument("M must be positive".into()));
            }
            let p = p_kn(4 * m - 1, 2 * m)?.value;
            let weight = BigRational::from_integer(BigInt::from(m).pow(ell));
            Ok(PropositionTerm { m, value: p * weight })
        })
        .collect()
}

pub fn strictly_decreasing(terms: &[PropositionTerm]) -> bool {
    terms.windows(2).all(|w| w[1].value < w[0].value)
}

#[derive(Clone, Debug, Serialize)]
pub struct DivergenceTerm {
    pub n: u32,
    /// `E_n(x^{n+1})` on `[a, b]` by Remez.
    pub remez: f64,
    /// `((b - a) / 2)^{n+1} 2^{-n}`.
    pub identity: f64,
    pub rel_diff: f64,
    /// `identity_n / identity_{n-1}`; absent for the first term.
    pub ratio: Option<f64>,
    pub converged: bool,
}

/// `E_n(x^{n+1})` on `[a, b]`, computed directly and by rescaling the monic
/// Chebyshev error. Grows geometrically when `b - a > 4`.
pub fn interval_divergence(ns: impl IntoIterator<Item = u32>, interval: [f64; 2]) -> Result<Vec<DivergenceTerm>> {
    let [a, b] = interval;
    if !(b > a) {
        return Err(Error::InvalidArgument(format!("bad interval [{a}, {b}]")));
    }
    let half = 0.5 * (b - a);
    let mut out: Vec<DivergenceTerm> = Vec::new();
    for n in ns {
        let r = best_linf_poly(|x| x.powi(n as i32 + 1), n as usize, interval, REMEZ_TOL)?;
        let identity = half.powi(n as i32 + 1) * 0.5f64.powi(n as i32);
        let ratio = out.last().filter(|p| p.n + 1 == n).map(|p| identity / p.identity);
        out.push(DivergenceTerm {
            n,
            remez: r.error,
            identity,
            rel_diff: (r.error - identity).abs() / identity,
            ratio,
            converged: r.converged,
        });
    }
    Ok(out)
}

/// `(pi/2)^k (n-k)!/n! * sup |f^(k)|` for `n >= k`.
pub fn powell_bound(k: u32, n: u32, deriv_sup: f64) -> f64 {
    assert!(n >= k, "bound needs n >= k");
    let falling: f64 = (n - k + 1..=n).map(|j| j as f64).product();
    std::f64::consts::FRAC_PI_2.powi(k as i32) / falling * deriv_sup
}

/// `E_n(f) <= powell_bound(k, n, deriv_sup)` on `[-1, 1]` for each `n`.
pub fn verify_powell(
    f: impl Fn(f64) -> f64,
    k: u32,
    deriv_sup: f64,
    ns: impl IntoIterator<Item = u32>,
) -> Result<Vec<Check>> {
    ns.into_iter()
        .map(|n| {
            if n < k {
                return Err(Error::InvalidArgument(format!("n = {n} below k = {k}")));
            }
            let r = best_linf_poly(&f, n as usize, [-1.0, 1.0], REMEZ_TOL)?;
            if !r.converged {
                return Err(Error::Nonconvergence(format!("E_{n}(f)")));
            }
            let bound = powell_bound(k, n, deriv_sup);
            Ok(Check {
                property: "E_n(f) <= (pi/2)^k (n-k)!/n! |f^(k)|".into(),
                k,
                n,
                lhs: r.error,
                rhs: bound,
                margin: bound - r.error,
                pass: r.error <= bound,
            })
        })
        .collect()
}
