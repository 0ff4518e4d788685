//! The binomial tail `P_{k,n} = 2^{-(k-1)} sum_{j > (n+k)/2} C(k, j)` in exact
//! rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// `C(k, 0), ..., C(k, k)`.
pub fn binomial_row(k: u32) -> Vec<BigInt> {
    let mut row = Vec::with_capacity(k as usize + 1);
    let mut c = BigInt::one();
    row.push(c.clone());
    for j in 0..k {
        c = c * BigInt::from(k - j) / BigInt::from(j + 1);
        row.push(c.clone());
    }
    row
}

/// Number of `k`-toss outcomes where heads exceed tails by more than `n`.
/// Defined for any integer `n`.
pub fn n_kn(k: u32, n: i64) -> BigInt {
    let first = (n + k as i64).div_euclid(2) + 1;
    let row = binomial_row(k);
    let lo = first.max(0);
    if lo > k as i64 {
        return BigInt::zero();
    }
    row[lo as usize..].iter().sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PknValue {
    pub k: u32,
    pub n: u32,
    pub value: BigRational,
}

impl PknValue {
    pub fn to_f64(&self) -> f64 {
        self.value.to_f64().unwrap_or(f64::NAN)
    }
}

impl Serialize for PknValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("PknValue", 4)?;
        st.serialize_field("k", &self.k)?;
        st.serialize_field("n", &self.n)?;
        st.serialize_field("value", &rational_text(&self.value))?;
        st.serialize_field("float", &self.to_f64())?;
        st.end()
    }
}

pub fn rational_text(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn p_raw(k: u32, n: i64) -> BigRational {
    BigRational::new(n_kn(k, n), BigInt::one() << (k - 1))
}

pub fn p_kn(k: u32, n: u32) -> Result<PknValue> {
    if k == 0 {
        return Err(Error::InvalidArgument("P_{k,n} needs k >= 1".into()));
    }
    Ok(PknValue {
        k,
        n,
        value: p_raw(k, n as i64),
    })
}

/// Conditioning on the first two tosses:
/// `N_{k+2,n} = N_{k,n-2} + 2 N_{k,n} + N_{k,n+2}`.
pub fn recurrence_holds(k: u32, n: i64) -> bool {
    n_kn(k + 2, n) == n_kn(k, n - 2) + BigInt::from(2) * n_kn(k, n) + n_kn(k, n + 2)
}
