//! Inequalities between `E_n(x^k)` and `P_{k,n}` checked numerically
//! (Remez, with slack) or exactly (rationals).

use std::collections::HashMap;

use num_rational::BigRational;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pkn::{p_kn, rational_text, recurrence_holds, PknValue};
use crate::remez::best_linf_poly;

/// Slack for inequalities between Remez values.
pub const SLACK: f64 = 1e-9;
const REMEZ_TOL: f64 = 1e-10;

/// `lhs <= rhs` (or `lhs == rhs` for equalities) within `SLACK`.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub property: String,
    pub k: u32,
    pub n: u32,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs` for inequalities, `-|rhs - lhs|` for equalities.
    pub margin: f64,
    pub pass: bool,
}

impl Check {
    fn le(property: &str, k: u32, n: u32, lhs: f64, rhs: f64) -> Self {
        Self {
            property: property.into(),
            k,
            n,
            lhs,
            rhs,
            margin: rhs - lhs,
            pass: lhs <= rhs + SLACK,
        }
    }

    fn eq(property: &str, k: u32, n: u32, lhs: f64, rhs: f64) -> Self {
        Self {
            property: property.into(),
            k,
            n,
            lhs,
            rhs,
            margin: -(rhs - lhs).abs(),
            pass: (rhs - lhs).abs() <= SLACK,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExactCheck {
    pub property: String,
    pub k: u32,
    pub n: i64,
    pub lhs: String,
    pub rhs: String,
    pub pass: bool,
}

/// Memoized `E_n(x^k)` on `[-1, 1]`; zero whenever `n >= k`.
#[derive(Default)]
pub struct MonomialErrors {
    cache: HashMap<(u32, u32), f64>,
}

impl MonomialErrors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, k: u32, n: u32) -> Result<f64> {
        if n >= k {
            return Ok(0.0);
        }
        if let Some(&e) = self.cache.get(&(k, n)) {
            return Ok(e);
        }
        let r = best_linf_poly(|x| x.powi(k as i32), n as usize, [-1.0, 1.0], REMEZ_TOL)?;
        if !r.converged {
            return Err(Error::Nonconvergence(format!("E_{n}(x^{k})")));
        }
        self.cache.insert((k, n), r.error);
        Ok(r.error)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichReport {
    pub k: u32,
    pub n: u32,
    pub p: PknValue,
    pub lower: f64,
    pub error: f64,
    pub upper: f64,
    pub lower_margin: f64,
    pub upper_margin: f64,
    pub pass: bool,
}

/// `P_{k,n} / (4e) <= E_n(x^k) <= P_{k,n}` for `n < k`.
pub fn verify_sandwich(k: u32, n: u32) -> Result<SandwichReport> {
    verify_sandwich_with(&mut MonomialErrors::new(), k, n)
}

pub(crate) fn verify_sandwich_with(cache: &mut MonomialErrors, k: u32, n: u32) -> Result<SandwichReport> {
    if n >= k {
        return Err(Error::InvalidArgument(format!("sandwich needs n < k, got n={n} k={k}")));
    }
    let p = p_kn(k, n)?;
    let upper = p.to_f64();
    let lower = upper / (4.0 * std::f64::consts::E);
    let error = cache.get(k, n)?;
    Ok(SandwichReport {
        k,
        n,
        p,
        lower,
        error,
        upper,
        lower_margin: error - lower,
        upper_margin: upper - error,
        pass: lower <= error + SLACK && error <= upper + SLACK,
    })
}

/// `E_n(x^{n+1}) = 2^{-n}` for `n <= n_max`, within `tol`.
pub fn verify_chebyshev(n_max: u32, tol: f64) -> Result<Vec<Check>> {
    let mut cache = MonomialErrors::new();
    (0..=n_max)
        .map(|n| {
            let e = cache.get(n + 1, n)?;
            let target = 0.5f64.powi(n as i32);
            Ok(Check {
                property: "monic Chebyshev".into(),
                k: n + 1,
                n,
                lhs: e,
                rhs: target,
                margin: -(e - target).abs(),
                pass: (e - target).abs() <= tol,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertiesReport {
    pub k_max: u32,
    pub n_max: u32,
    pub checks: Vec<Check>,
    pub exact: Vec<ExactCheck>,
    pub pass: bool,
}

impl PropertiesReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

fn rat(v: &BigRational) -> String {
    rational_text(v)
}

/// Monotonicity of `E_n(x^k)` in `n` and `k` for `1 <= k <= k_max`,
/// `0 <= n <= n_max`; `P_{k,n} <= P_{k+2,n}` exactly for `1 <= n <= k <= k_max`
/// with `k + n` odd; and `E_{2n}(x^k) <= P_{2M-1,2n}` for `2M <= k_max`,
/// `2n <= n_max`, `k <= 2M`.
pub fn verify_en_properties(k_max: u32, n_max: u32) -> Result<PropertiesReport> {
    if k_max > 20 || n_max > 12 {
        return Err(Error::InvalidArgument(format!(
            "ranges ({k_max}, {n_max}) exceed (20, 12)"
        )));
    }
    let mut e = MonomialErrors::new();
    let mut checks = Vec::new();
    for k in 1..=k_max {
        for n in 0..=n_max {
            let en_k = e.get(k, n)?;
            checks.push(Check::le("E_{n+1}(x^k) <= E_n(x^k)", k, n, e.get(k, n + 1)?, en_k));
            checks.push(Check::le("E_{n+1}(x^{k+1}) <= E_n(x^k)", k, n, e.get(k + 1, n + 1)?, en_k));
            if n % 2 == 0 && k % 2 == 0 {
                checks.push(Check::eq("E_n(x^k) = E_{n+1}(x^k)", k, n, en_k, e.get(k, n + 1)?));
            }
            if (n + k) % 2 == 1 {
                checks.push(Check::le("E_n(x^{k+1}) <= E_n(x^k)", k, n, e.get(k + 1, n)?, en_k));
            }
        }
    }
    for m in 1..=k_max / 2 {
        for n in 1..=n_max / 2 {
            let p = p_kn(2 * m - 1, 2 * n)?.to_f64();
            for k in 0..=2 * m {
                checks.push(Check::le("E_{2n}(x^k) <= P_{2M-1,2n}", k, 2 * n, e.get(k, 2 * n)?, p));
            }
        }
    }
    let mut exact = Vec::new();
    for k in 1..=k_max {
        exact.extend(lemma8_checks(k));
    }
    let pass = checks.iter().all(|c| c.pass) && exact.iter().all(|c| c.pass);
    Ok(PropertiesReport {
        k_max,
        n_max,
        checks,
        exact,
        pass,
    })
}

fn lemma8_checks(k: u32) -> Vec<ExactCheck> {
    (1..=k)
        .filter(|n| (n + k) % 2 == 1)
        .map(|n| {
            let lhs = p_kn(k, n).expect("k >= 1").value;
            let rhs = p_kn(k + 2, n).expect("k >= 1").value;
            ExactCheck {
                property: "P_{k,n} <= P_{k+2,n}".into(),
                k,
                n: n as i64,
                pass: lhs <= rhs,
                lhs: rat(&lhs),
                rhs: rat(&rhs),
            }
        })
        .collect()
}

/// The coin-toss recurrence for `0 <= n <= k` and the `P_{k,n}` monotonicity
/// in `k`, both for `1 <= k <= k_max`, in exact arithmetic.
pub fn verify_p_identities(k_max: u32) -> Vec<ExactCheck> {
    let mut out = Vec::new();
    for k in 1..=k_max {
        for n in 0..=k as i64 {
            out.push(ExactCheck {
                property: "N_{k+2,n} = N_{k,n-2} + 2 N_{k,n} + N_{k,n+2}".into(),
                k,
                n,
                lhs: crate::pkn::n_kn(k + 2, n).to_string(),
                rhs: (crate::pkn::n_kn(k, n - 2) + num_bigint::BigInt::from(2) * crate::pkn::n_kn(k, n) + crate::pkn::n_kn(k, n + 2))
                    .to_string(),
                pass: recurrence_holds(k, n),
            });
        }
        out.extend(lemma8_checks(k));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sandwich_examples() {
        let r = verify_sandwich(3, 2).unwrap();
        assert!(r.pass);
        assert!((r.error - 0.25).abs() < 1e-12 && r.upper_margin.abs() < 1e-12);
        assert!((r.lower - 0.25 / (4.0 * std::f64::consts::E)).abs() < 1e-15);
        assert!((r.lower - 0.0230).abs() < 1e-4);
        let r = verify_sandwich(2, 1).unwrap();
        assert!(r.pass && (r.error - 0.5).abs() < 1e-12);
        assert!(verify_sandwich(2, 2).is_err());
    }

    #[test]
    fn sandwich_batch() {
        let mut cache = MonomialErrors::new();
        for k in 1..=15 {
            for n in 0..k {
                let r = verify_sandwich_with(&mut cache, k, n).unwrap();
                assert!(r.pass, "{r:?}");
            }
        }
    }

    #[test]
    fn property_examples() {
        let mut e = MonomialErrors::new();
        // (c) at k = 4, n = 2
        assert!((e.get(4, 2).unwrap() - e.get(4, 3).unwrap()).abs() < 1e-12);
        // (a) strictly decreasing at k = 5 over n = 1, 2, 3
        let s: Vec<f64> = (1..=3).map(|n| e.get(5, n).unwrap()).collect();
        assert!(s[0] > s[1] && s[1] > s[2], "{s:?}");
        let l8 = lemma8_checks(3);
        assert!(l8.iter().any(|c| c.n == 2 && c.lhs == "1/4" && c.rhs == "3/8" && c.pass));
    }

    #[test]
    fn properties_small_range_pass() {
        let r = verify_en_properties(8, 6).unwrap();
        assert!(r.pass, "{:?}", r.failures().collect::<Vec<_>>());
        assert!(verify_en_properties(21, 3).is_err());
    }

    #[test]
    fn chebyshev_values() {
        assert!(verify_chebyshev(12, 1e-8).unwrap().iter().all(|c| c.pass));
    }

    #[test]
    fn identities_exact() {
        assert!(verify_p_identities(20).iter().all(|c| c.pass));
    }
}
