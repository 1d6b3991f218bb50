//! Special functions and log-density helpers shared by the measurement
//! model and the filter.

use std::f64::consts::PI;

/// `ln(sqrt(2π))`
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Log density of a zero-mean Gaussian with standard deviation `sigma` at `x`.
#[inline]
pub fn ln_normal(x: f64, sigma: f64) -> f64 {
    let r = x / sigma;
    -0.5 * r * r - sigma.ln() - LN_SQRT_2PI
}

/// Numerically stable `ln(Σ exp(v))`. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(e^{-x} I0(x))` for `x >= 0`, the exponentially scaled modified Bessel
/// function of the first kind and order zero.
pub fn ln_i0e(x: f64) -> f64 {
    let x = x.abs();
    if x <= 30.0 {
        // power series; all terms positive so no cancellation
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
            k += 1.0;
        }
        sum.ln() - x
    } else {
        // Hankel asymptotic expansion
        let mut c = 1.0;
        let mut sum = 1.0;
        for k in 1..12 {
            let kf = k as f64;
            c *= (2.0 * kf - 1.0).powi(2) / (8.0 * kf * x);
            sum += c;
            if c < 1e-17 {
                break;
            }
        }
        sum.ln() - 0.5 * (2.0 * PI * x).ln()
    }
}

/// Log density of the Rice distribution with noncentrality `nu` and scale
/// `sigma` at `x`.
pub fn ln_rice_pdf(x: f64, nu: f64, sigma: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let s2 = sigma * sigma;
    let d = x - nu;
    x.ln() - s2.ln() - 0.5 * d * d / s2 + ln_i0e(x * nu / s2)
}

/// First-order Marcum Q function `Q1(a, b)`.
///
/// Uses the identity `Q1(a, b) = P(M <= N)` with independent
/// `N ~ Poisson(a²/2)` and `M ~ Poisson(b²/2)`.
pub fn marcum_q1(a: f64, b: f64) -> f64 {
    let a = a.abs();
    let b = b.abs();
    if b == 0.0 {
        return 1.0;
    }
    let la = 0.5 * a * a;
    let lb = 0.5 * b * b;
    if a == 0.0 {
        return (-lb).exp();
    }
    // far above threshold: 1 - Q1 < exp(-(a-b)²/2) is negligible
    if a - b > 9.0 {
        return 1.0;
    }
    let spread = 12.0 * la.sqrt() + 20.0;
    let k_lo = (la - spread).max(0.0).floor() as u64;
    let k_hi = (la + spread).ceil() as u64;
    let ln_la = la.ln();
    let ln_lb = lb.ln();

    // Poisson(lb) cdf accumulated term by term up to k_hi
    let mut ln_fact = 0.0; // ln k!
    let mut cdf_m = 0.0;
    let mut total = 0.0;
    for k in 0..=k_hi {
        let kf = k as f64;
        if k > 0 {
            ln_fact += kf.ln();
        }
        cdf_m += (-lb + kf * ln_lb - ln_fact).exp();
        if k >= k_lo {
            let pmf_n = (-la + kf * ln_la - ln_fact).exp();
            total += pmf_n * cdf_m.min(1.0);
        }
    }
    total.clamp(0.0, 1.0)
}
