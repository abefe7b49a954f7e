use std::f64::consts::{FRAC_PI_4, PI};

use crate::error::{Error, Result};

/// Below this magnitude the power series is used; above it, the Hankel
/// asymptotic expansion. Both are within ~1e-12 of J0 at the crossover.
const SERIES_LIMIT: f64 = 12.0;

/// Zeroth-order Bessel function of the first kind.
///
/// Absolute error is below 1e-10 for |x| ≤ 100 (and for all larger x the
/// asymptotic branch only improves).
pub fn bessel_j0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("bessel_j0 of non-finite argument {x}")));
    }
    let ax = x.abs();
    if ax < SERIES_LIMIT {
        Ok(j0_series(ax))
    } else {
        Ok(j0_asymptotic(ax))
    }
}

fn j0_series(x: f64) -> f64 {
    let y = 0.25 * x * x;
    let mut sum = 1.0;
    let mut term = 1.0;
    let mut k = 1.0;
    loop {
        term *= -y / (k * k);
        sum += term;
        if term.abs() < 1e-18 && k > y {
            return sum;
        }
        k += 1.0;
    }
}

fn j0_asymptotic(x: f64) -> f64 {
    // a_k = prod_{j<=k} -(2j-1)^2 / (k! 8^k); summed until terms stop shrinking.
    let mut p = 0.0;
    let mut q = 0.0;
    let mut a: f64 = 1.0;
    let mut xpow = 1.0;
    let mut prev = f64::INFINITY;
    for k in 0..64u32 {
        let t = a / xpow;
        if t.abs() >= prev {
            break;
        }
        prev = t.abs();
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            p += sign * t;
        } else {
            q += sign * t;
        }
        let kk = f64::from(k + 1);
        let odd = 2.0 * kk - 1.0;
        a *= -(odd * odd) / (8.0 * kk);
        xpow *= x;
    }
    let chi = x - FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}
