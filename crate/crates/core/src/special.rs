//! Logarithm of the modified Bessel function of the first kind.
//!
//! Two regimes, both carried in log space so nothing overflows for orders
//! up to a few hundred and arguments up to the estimator cap:
//! the ascending power series below `max(20, nu)` and Olver's uniform
//! asymptotic expansion (four correction terms) above it.

use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;

const SERIES_MIN_SWITCH: f64 = 20.0;

/// `ln I_nu(x)` for `nu >= 0`, `x > 0`.
pub(crate) fn ln_bessel_i(nu: f64, x: f64) -> f64 {
    debug_assert!(nu >= 0.0 && x > 0.0);
    if x < SERIES_MIN_SWITCH.max(nu) {
        ln_bessel_i_series(nu, x)
    } else {
        ln_bessel_i_uniform(nu, x)
    }
}

pub(crate) fn ln_bessel_i_series(nu: f64, x: f64) -> f64 {
    let half = 0.5 * x;
    let ln_half = half.ln();
    let q = half * half;
    // ln of term k, built by the ratio t_{k+1} / t_k = q / ((k + 1)(k + nu + 1)).
    let mut ln_t = nu * ln_half - libm::lgamma(nu + 1.0);
    let mut terms: Vec<f64> = Vec::with_capacity(64);
    let mut peak = ln_t;
    let mut k = 0.0f64;
    loop {
        terms.push(ln_t);
        if ln_t > peak {
            peak = ln_t;
        }
        let ratio = q / ((k + 1.0) * (k + nu + 1.0));
        if ratio < 1.0 && ln_t < peak - 40.0 {
            break;
        }
        ln_t += ratio.ln();
        k += 1.0;
        if k > 100_000.0 {
            break;
        }
    }
    let sum: f64 = terms.iter().map(|t| (t - peak).exp()).sum();
    peak + sum.ln()
}

pub(crate) fn ln_bessel_i_uniform(nu: f64, x: f64) -> f64 {
    // With r = sqrt(nu^2 + x^2), p = nu / r and q = 1 / r, every u_k(p) / nu^k
    // term becomes q^k times a polynomial in p^2, which stays finite at nu = 0
    // (where the expansion reduces to the large-argument Hankel series).
    let r = nu.hypot(x);
    let p = nu / r;
    let q = 1.0 / r;
    let p2 = p * p;
    let u1 = q * (3.0 - 5.0 * p2) / 24.0;
    let u2 = q.powi(2) * (81.0 + p2 * (-462.0 + p2 * 385.0)) / 1152.0;
    let u3 = q.powi(3) * (30375.0 + p2 * (-369603.0 + p2 * (765765.0 + p2 * -425425.0))) / 414720.0;
    let u4 = q.powi(4)
        * (4465125.0
            + p2 * (-94121676.0 + p2 * (349922430.0 + p2 * (-446185740.0 + p2 * 185910725.0))))
        / 39813120.0;
    let eta_term = if nu == 0.0 {
        0.0
    } else {
        nu * (x / (nu + r)).ln()
    };
    r + eta_term - 0.5 * (2.0 * core::f64::consts::PI).ln() - 0.5 * r.ln()
        + (1.0 + u1 + u2 + u3 + u4).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln_i_half(x: f64) -> f64 {
        // I_{1/2}(x) = sqrt(2 / (pi x)) sinh x
        0.5 * (2.0 / (core::f64::consts::PI * x)).ln() + x.sinh().ln()
    }

    #[test]
    fn half_order_matches_closed_form() {
        for &x in &[0.01, 0.5, 2.0, 10.0, 19.9, 20.0, 35.0, 300.0] {
            let got = ln_bessel_i(0.5, x);
            let want = ln_i_half(x);
            // The truncated asymptotic series is weakest right at the switch.
            assert!((got - want).abs() < 2e-7, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn order_zero_small_argument() {
        // I_0(1) = 1.2660658777520082
        assert!((ln_bessel_i(0.0, 1.0) - 1.2660658777520082f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn regimes_agree_at_the_switch() {
        for &nu in &[0.0, 0.5, 3.0, 31.0, 255.0] {
            for &x in &[20.0f64, 40.0, 255.0, 600.0] {
                let x = x.max(nu);
                let a = ln_bessel_i_series(nu, x);
                let b = ln_bessel_i_uniform(nu, x);
                assert!(
                    (a - b).abs() < 1e-7 * a.abs().max(1.0),
                    "nu={nu} x={x}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn large_arguments_stay_finite() {
        let v = ln_bessel_i(255.0, 1e7);
        assert!(v.is_finite());
        assert!(ln_bessel_i(255.0, 1e-3).is_finite());
    }
}
