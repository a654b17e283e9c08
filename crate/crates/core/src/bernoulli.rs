//! Bernoulli polynomials from exact rational coefficients.
//!
//! The Bernoulli numbers are generated once with big-integer rationals from
//! `sum_{k=0}^{m} C(m+1, k) B_k = 0`, then `B_q(u) = sum_k C(q, k) B_k u^{q-k}`
//! is expanded exactly and rounded to `f64` coefficients only at the end.

use std::sync::OnceLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Highest polynomial order kept in the coefficient table.
pub const MAX_ORDER: usize = 64;

fn binomial_row(m: usize) -> Vec<BigInt> {
    let mut row = vec![BigInt::one()];
    for k in 0..m {
        let next = &row[k] * BigInt::from(m - k) / BigInt::from(k + 1);
        row.push(next);
    }
    row
}

/// Exact Bernoulli numbers `B_0..=B_max` with the `B_1 = -1/2` convention.
pub fn bernoulli_numbers(max: usize) -> Vec<BigRational> {
    let mut b: Vec<BigRational> = Vec::with_capacity(max + 1);
    b.push(BigRational::one());
    for m in 1..=max {
        let binom = binomial_row(m + 1);
        let mut acc = BigRational::zero();
        for (k, bk) in b.iter().enumerate() {
            acc += BigRational::from_integer(binom[k].clone()) * bk;
        }
        // C(m+1, m) = m + 1
        b.push(-acc / BigRational::from_integer(BigInt::from(m + 1)));
    }
    b
}

/// Exact coefficients of `B_q`, ordered by ascending power of `u`.
pub fn polynomial_coefficients(q: usize) -> Vec<BigRational> {
    let b = bernoulli_numbers(q);
    let binom = binomial_row(q);
    let mut coeffs = vec![BigRational::zero(); q + 1];
    for k in 0..=q {
        coeffs[q - k] = BigRational::from_integer(binom[k].clone()) * &b[k];
    }
    coeffs
}

fn table() -> &'static Vec<Vec<f64>> {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let b = bernoulli_numbers(MAX_ORDER);
        (0..=MAX_ORDER)
            .map(|q| {
                let binom = binomial_row(q);
                let mut coeffs = vec![0.0; q + 1];
                for k in 0..=q {
                    let c = BigRational::from_integer(binom[k].clone()) * &b[k];
                    coeffs[q - k] = c.to_f64().unwrap_or(f64::NAN);
                }
                coeffs
            })
            .collect()
    })
}

pub(crate) fn check_order(q: i64) -> Result<usize> {
    if q <= 0 || q % 2 != 0 || q as usize > MAX_ORDER {
        return Err(Error::InvalidOrder(q));
    }
    Ok(q as usize)
}

/// `B_q(u)` for even `q` in `2..=64` and `u` in `[0, 1]`.
pub fn bernoulli_poly(q: i64, u: f64) -> Result<f64> {
    let q = check_order(q)?;
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::OutOfDomain { value: u });
    }
    Ok(eval_unchecked(q, u))
}

#[inline]
pub(crate) fn eval_unchecked(q: usize, u: f64) -> f64 {
    table()[q].iter().rev().fold(0.0, |acc, &c| acc * u + c)
}

/// `q!` as a float; exact for the orders used here up to rounding.
pub(crate) fn factorial(q: usize) -> f64 {
    (1..=q).fold(1.0, |acc, k| acc * k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Akiyama-Tanigawa: an independent route to the Bernoulli numbers
    /// (gives B_1 = +1/2, irrelevant for even orders).
    fn akiyama_tanigawa(n: usize) -> Vec<BigRational> {
        let mut out = Vec::new();
        let mut a: Vec<BigRational> = Vec::new();
        for m in 0..=n {
            a.push(BigRational::new(BigInt::one(), BigInt::from(m + 1)));
            for j in (1..=m).rev() {
                let diff = &a[j - 1] - &a[j];
                a[j - 1] = BigRational::from_integer(BigInt::from(j)) * diff;
            }
            out.push(a[0].clone());
        }
        out
    }

    #[test]
    fn numbers_match_independent_algorithm() {
        let rec = bernoulli_numbers(40);
        let at = akiyama_tanigawa(40);
        for k in (0..=40).filter(|k| *k != 1) {
            assert_eq!(rec[k], at[k], "B_{k}");
        }
    }

    #[test]
    fn small_values() {
        assert_eq!(bernoulli_poly(2, 0.0).unwrap(), 1.0 / 6.0);
        assert!((bernoulli_poly(2, 0.5).unwrap() + 1.0 / 12.0).abs() < 1e-16);
        assert!((bernoulli_poly(4, 0.0).unwrap() + 1.0 / 30.0).abs() < 1e-16);
        let c = polynomial_coefficients(2);
        assert_eq!(c[0], BigRational::new(1.into(), 6.into()));
        assert_eq!(c[1], BigRational::from_integer((-1).into()));
        assert_eq!(c[2], BigRational::one());
    }

    #[test]
    fn fourier_series_agrees() {
        // B_q(u) = (-1)^(q/2+1) 2 q! / (2 pi)^q sum_k cos(2 pi k u) / k^q
        for &q in &[4usize, 6, 8, 12, 22] {
            let scale = 2.0 * factorial(q) / (2.0 * std::f64::consts::PI).powi(q as i32);
            let sign = if (q / 2) % 2 == 1 { 1.0 } else { -1.0 };
            for i in 0..=20 {
                let u = i as f64 / 20.0;
                let series: f64 = (1..2000)
                    .map(|k| (2.0 * std::f64::consts::PI * k as f64 * u).cos() / (k as f64).powi(q as i32))
                    .sum();
                let expected = sign * scale * series;
                let got = bernoulli_poly(q as i64, u).unwrap();
                // truncation after N = 2000 terms leaves < scale * N^(1-q) / (q-1)
                let tail = scale * 2000f64.powi(1 - q as i32) / (q as f64 - 1.0);
                assert!(
                    (got - expected).abs() <= 1e-12 * (1.0 + scale) + tail,
                    "q={q} u={u}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_orders_and_inputs() {
        assert!(matches!(bernoulli_poly(3, 0.1), Err(Error::InvalidOrder(3))));
        assert!(bernoulli_poly(0, 0.1).is_err());
        assert!(bernoulli_poly(-2, 0.1).is_err());
        assert!(bernoulli_poly(66, 0.1).is_err());
        assert!(matches!(bernoulli_poly(2, 1.5), Err(Error::OutOfDomain { .. })));
    }
}
