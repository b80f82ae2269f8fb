//! Truncated normal sampling, stable in the far tails.
//!
//! The primary route is inverse-CDF: map a uniform draw through the normal
//! quantile restricted to the interval. Work always happens in the lower
//! tail (the interval is reflected when it leans right) so probabilities
//! stay representable. When the interval mass underflows entirely, a
//! shifted-exponential rejection sampler takes over.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::math::{norm_cdf, norm_quantile};

/// Draw from a normal restricted to `(lower, upper)`.
///
/// Either bound may be infinite. Panics if `lower >= upper` or `sd <= 0`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> f64 {
    assert!(sd > 0.0, "sd must be positive, got {sd}");
    assert!(lower < upper, "empty interval: [{lower}, {upper}]");

    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;

    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        let z: f64 = rng.sample(StandardNormal);
        return mean + sd * z;
    }

    // Reflect right-leaning intervals into the lower tail.
    let leans_right = match (a == f64::NEG_INFINITY, b == f64::INFINITY) {
        (true, false) => false,
        (false, true) => true,
        _ => a + b > 0.0,
    };
    let (lo, hi) = if leans_right { (-b, -a) } else { (a, b) };

    let z = standard_lower_tail(lo, hi, rng);
    let z = if leans_right { -z } else { z };
    let z = clamp_open(z, a, b);
    mean + sd * z
}

/// Sample a standard normal on (lo, hi) where the interval does not lean
/// into the upper tail (lo + hi <= 0, or lo = -inf).
fn standard_lower_tail<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let p_lo = if lo == f64::NEG_INFINITY {
        0.0
    } else {
        norm_cdf(lo)
    };
    let p_hi = norm_cdf(hi);
    let mass = p_hi - p_lo;

    if mass >= 1e-300 {
        let u: f64 = rng.gen_range(0.0..1.0);
        let p = p_lo + u * mass;
        if p > 0.0 && p < 1.0 {
            return norm_quantile(p);
        }
    }

    // Interval mass underflowed: the interval sits in the deep left tail
    // (hi far below zero). Sample the reflected right tail by rejection.
    -tail_rejection(-hi, -lo, rng)
}

/// Robert's shifted-exponential rejection sampler for a standard normal on
/// [lo, hi) with lo large and positive.
fn tail_rejection<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    loop {
        // Exp(rate) via inverse CDF.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let x = lo - u1.ln() / rate;
        if x >= hi {
            continue;
        }
        let u2: f64 = rng.gen_range(0.0_f64..1.0);
        let d = x - rate;
        if u2 <= (-0.5 * d * d).exp() {
            return x;
        }
    }
}

fn clamp_open(z: f64, a: f64, b: f64) -> f64 {
    // Rounding in the quantile can land exactly on a bound; nudge inward.
    if z <= a {
        let width = if b.is_finite() { b - a } else { 1.0 };
        a + 1e-14 * width.min(1.0) + f64::MIN_POSITIVE
    } else if z >= b {
        let width = if a.is_finite() { b - a } else { 1.0 };
        b - 1e-14 * width.min(1.0) - f64::MIN_POSITIVE
    } else {
        z
    }
}
