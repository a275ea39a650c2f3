//! Standard normal distribution helpers evaluated in forms that stay
//! accurate far into the tails.
//!
//! `Φ` differences are the workhorse of the ordinal likelihood, so they
//! are computed on the log scale with the complementary error function
//! and reflected onto the lower tail where `Φ` has full relative
//! precision.

use std::f64::consts::{LN_2, PI, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal log-density.
pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    0.5 * erfc(-x / SQRT_2)
}

/// `ln Φ(x)`, accurate for all finite `x`.
pub fn ln_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else if x == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if x > 5.0 {
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else if x > -30.0 {
        (0.5 * erfc(-x / SQRT_2)).ln()
    } else {
        // Asymptotic expansion of the Mills ratio.
        let z2 = 1.0 / (x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..10 {
            term *= -((2 * k - 1) as f64) * z2;
            sum += term;
        }
        -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + sum.ln()
    }
}

/// Inverse of the standard normal CDF.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        -SQRT_2 * erfc_inv(2.0 * p)
    }
}

/// `ln(1 - e^x)` for `x <= 0`.
pub fn ln_1m_exp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln(e^a + e^b)`.
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Stable `ln Σ exp(x_i)`.
pub fn ln_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln(Φ(b) - Φ(a))` for `a < b`; either bound may be infinite.
/// Returns `-inf` for an empty interval.
pub fn ln_cdf_diff(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    if a == f64::NEG_INFINITY {
        return ln_cdf(b);
    }
    if b == f64::INFINITY {
        return ln_cdf(-a);
    }
    let width = b - a;
    if width < 1e-5 {
        // Midpoint rule with its leading correction; relative error O(width^4).
        let c = 0.5 * (a + b);
        return width.ln() + ln_pdf(c) + (width * width * (c * c - 1.0) / 24.0).ln_1p();
    }
    if a >= 0.0 {
        let hi = ln_cdf(-a);
        let lo = ln_cdf(-b);
        hi + ln_1m_exp(lo - hi)
    } else if b <= 0.0 {
        let hi = ln_cdf(b);
        let lo = ln_cdf(a);
        hi + ln_1m_exp(lo - hi)
    } else {
        (-cdf(a) - cdf(-b)).ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14);
        assert!((cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-16);
    }

    #[test]
    fn ln_cdf_matches_direct_and_asymptotic_branches() {
        for &x in &[-29.9, -10.0, -1.0, 0.0, 2.0, 5.5, 8.0] {
            let direct = (0.5 * erfc(-x / SQRT_2)).ln();
            assert!((ln_cdf(x) - direct).abs() < 1e-12 * direct.abs().max(1e-3), "x={x}");
        }
        // continuity across the asymptotic switch
        let x = -30.0 - 1e-9;
        let left = ln_cdf(x);
        let right = (0.5 * erfc(-x / SQRT_2)).ln();
        assert!((left - right).abs() < 1e-12 * right.abs());
        // far tail keeps going without underflow
        assert!(ln_cdf(-60.0).is_finite());
    }

    #[test]
    fn ln_cdf_diff_one_sigma_window() {
        let p = ln_cdf_diff(0.0, 1.0).exp();
        assert!((p - 0.341_344_746_068_542_9).abs() < 1e-14);
    }

    #[test]
    fn ln_cdf_diff_tail_windows() {
        // Φ(-8) - Φ(-9) computed with the reflected form
        let exact = cdf(-8.0) - cdf(-9.0);
        let got = ln_cdf_diff(-9.0, -8.0).exp();
        assert!((got / exact - 1.0).abs() < 1e-12);
        let mirrored = ln_cdf_diff(8.0, 9.0).exp();
        assert!((mirrored / exact - 1.0).abs() < 1e-12);
        // far beyond where naive differencing returns zero
        assert!(ln_cdf_diff(40.0, 41.0).is_finite());
        assert_eq!(ln_cdf_diff(1.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn ln_cdf_diff_narrow_window_uses_midpoint_rule() {
        let a = 0.3;
        let b = 0.3 + 1e-7;
        let got = ln_cdf_diff(a, b).exp();
        let reference = 1e-7 * pdf(0.3 + 5e-8);
        assert!((got / reference - 1.0).abs() < 1e-10);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-20, 1e-8, 0.01, 0.3, 0.5, 0.9, 0.999_999] {
            let x = quantile(p);
            assert!((cdf(x) / p - 1.0).abs() < 1e-10, "p={p}");
        }
    }

    #[test]
    fn ln_sum_exp_handles_infinities() {
        assert_eq!(ln_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = ln_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + LN_2)).abs() < 1e-12);
    }
}
