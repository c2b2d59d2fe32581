//! Bessel functions of the first kind for integer order, and their positive zeros.

use crate::error::{MtdError, Result};

/// Below this argument the ascending series is used directly.
const SERIES_LIMIT: f64 = 2.0;
const RESCALE_ABOVE: f64 = 1e250;

/// `J_order(x)` for integer `order >= 0` and `x >= 0`.
pub fn bessel_j(order: u32, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(MtdError::invalid(format!(
            "bessel_j argument must be finite, got {x}"
        )));
    }
    if x < 0.0 {
        return Err(MtdError::invalid(format!(
            "bessel_j argument must be nonnegative, got {x}"
        )));
    }
    Ok(bessel_j_unchecked(order, x))
}

pub(crate) fn bessel_j_unchecked(order: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    if x <= SERIES_LIMIT {
        ascending_series(order, x)
    } else {
        miller(order, x)
    }
}

fn ascending_series(order: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    for k in 1..=order {
        term *= half / k as f64;
    }
    let step = -half * half;
    let mut sum = term;
    let mut k = 0u32;
    loop {
        k += 1;
        term *= step / (k as f64 * (k + order) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() || term == 0.0 {
            break;
        }
    }
    sum
}

/// Backward recurrence from well above `max(order, x)`, normalized with
/// `1 = J_0 + 2 * sum_k J_{2k}`.
fn miller(order: u32, x: f64) -> f64 {
    let top = (order as f64).max(x);
    let mut start = (top + 12.0 * top.cbrt() + 30.0).ceil() as u32;
    start += start % 2;

    let two_over_x = 2.0 / x;
    let mut above = 0.0_f64;
    let mut current = 1e-30_f64;
    let mut norm = 0.0_f64;
    let mut answer = 0.0_f64;

    for k in (1..=start).rev() {
        // current = J_k (unnormalized), above = J_{k+1}
        let below = k as f64 * two_over_x * current - above;
        above = current;
        current = below;
        // current now holds J_{k-1}
        let idx = k - 1;
        if idx == order {
            answer = current;
        }
        if idx % 2 == 0 && idx > 0 {
            norm += 2.0 * current;
        }
        if current.abs() > RESCALE_ABOVE {
            current /= RESCALE_ABOVE;
            above /= RESCALE_ABOVE;
            norm /= RESCALE_ABOVE;
            answer /= RESCALE_ABOVE;
        }
    }
    norm += current;
    answer / norm
}

/// The `q`-th positive zero of `J_order` (`q >= 1`).
///
/// Sign changes are bracketed by a forward scan from a point where the
/// function is known to be positive, then refined by bisection.
pub fn bessel_root(order: u32, q: u32) -> Result<f64> {
    if q == 0 {
        return Err(MtdError::invalid("bessel_root index q must be >= 1"));
    }
    Ok(bessel_roots(order, q as usize)[q as usize - 1])
}

/// The first `count` positive zeros of `J_order`, increasing.
pub fn bessel_roots(order: u32, count: usize) -> Vec<f64> {
    // Consecutive zeros are more than 2.9 apart for every integer order,
    // and J_order is positive on (0, j_{order,1}) with j_{order,1} > order.
    const STEP: f64 = 0.25;
    let mut roots = Vec::with_capacity(count);
    let mut lo = if order == 0 { 0.0 } else { order as f64 };
    let mut f_lo = bessel_j_unchecked(order, lo);
    while roots.len() < count {
        let hi = lo + STEP;
        let f_hi = bessel_j_unchecked(order, hi);
        if f_hi == 0.0 {
            roots.push(hi);
            lo = hi + 1e-9;
            f_lo = bessel_j_unchecked(order, lo);
            continue;
        }
        if f_lo.signum() != f_hi.signum() {
            roots.push(bisect(order, lo, hi, f_lo));
        }
        lo = hi;
        f_lo = f_hi;
    }
    roots
}

fn bisect(order: u32, mut lo: f64, mut hi: f64, f_lo: f64) -> f64 {
    let sign_lo = f_lo.signum();
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = bessel_j_unchecked(order, mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_mid.signum() == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Bessel's integral `J_n(x) = (1/pi) int_0^pi cos(n t - x sin t) dt`,
    /// evaluated with the trapezoid rule, which converges geometrically for
    /// this periodic integrand.
    fn integral_oracle(order: u32, x: f64) -> f64 {
        let m = 2 * ((x + order as f64) as usize + 64);
        let h = PI / m as f64;
        let f = |t: f64| (order as f64 * t - x * t.sin()).cos();
        let mut s = 0.5 * (f(0.0) + f(PI));
        for k in 1..m {
            s += f(k as f64 * h);
        }
        s * h / PI
    }

    fn oracle_root(order: u32, q: u32) -> f64 {
        let mut lo = if order == 0 { 0.0 } else { order as f64 };
        let mut seen = 0;
        loop {
            let hi = lo + 0.05;
            if integral_oracle(order, lo).signum() != integral_oracle(order, hi).signum() {
                seen += 1;
                if seen == q {
                    let (mut a, mut b) = (lo, hi);
                    for _ in 0..60 {
                        let m = 0.5 * (a + b);
                        if integral_oracle(order, m).signum() == integral_oracle(order, a).signum()
                        {
                            a = m;
                        } else {
                            b = m;
                        }
                    }
                    return 0.5 * (a + b);
                }
            }
            lo = hi;
        }
    }

    #[test]
    fn values_at_zero() {
        assert_eq!(bessel_j(0, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_j(1, 0.0).unwrap(), 0.0);
        assert_eq!(bessel_j(7, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_negative_and_nan() {
        assert!(bessel_j(0, -1.0).is_err());
        assert!(bessel_j(0, f64::NAN).is_err());
        assert!(bessel_j(0, f64::INFINITY).is_err());
    }

    #[test]
    fn matches_integral_representation() {
        let mut worst: f64 = 0.0;
        for order in [0u32, 1, 2, 3, 5, 8, 13, 20, 33, 48, 64] {
            let mut x = 0.0;
            while x <= 100.0 {
                let got = bessel_j(order, x).unwrap();
                let want = integral_oracle(order, x);
                worst = worst.max((got - want).abs());
                x += 0.37;
            }
        }
        assert!(worst < 1e-12, "worst absolute error {worst:e}");
    }

    #[test]
    fn first_zero_of_j0() {
        let v = bessel_j(0, 2.404825557695773).unwrap();
        assert!(v.abs() < 1e-10, "{v}");
    }

    #[test]
    fn known_roots() {
        assert!((bessel_root(0, 1).unwrap() - 2.404825557695773).abs() < 1e-9);
        assert!((bessel_root(1, 1).unwrap() - 3.831705970207512).abs() < 1e-9);
        let r02 = bessel_root(0, 2).unwrap();
        assert!((r02 - 5.520078110286311).abs() < 1e-9);
        assert!(bessel_root(0, 1).unwrap() < bessel_root(1, 1).unwrap());
        assert!(bessel_root(1, 1).unwrap() < r02);
    }

    #[test]
    fn roots_agree_with_integral_oracle() {
        for (order, q) in [(0, 1), (0, 3), (2, 2), (5, 1), (9, 4), (20, 2)] {
            let got = bessel_root(order, q).unwrap();
            let want = oracle_root(order, q);
            assert!((got - want).abs() < 1e-10, "({order},{q}) {got} vs {want}");
        }
    }

    #[test]
    fn roots_are_zeros_and_increasing() {
        for order in 0..=10 {
            let roots = bessel_roots(order, 10);
            for w in roots.windows(2) {
                assert!(w[0] < w[1]);
            }
            for r in roots {
                assert!(bessel_j(order, r).unwrap().abs() < 1e-9);
            }
        }
    }

    #[test]
    fn large_index_roots() {
        let roots = bessel_roots(64, 64);
        assert_eq!(roots.len(), 64);
        assert!(roots[0] > 64.0);
        for w in roots.windows(2) {
            assert!(w[1] - w[0] > 2.9);
        }
    }

    #[test]
    fn q_zero_is_rejected() {
        assert!(bessel_root(0, 0).is_err());
    }
}
