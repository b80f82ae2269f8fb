//! Scalar density functions and small numeric helpers shared across the crate.
//!
//! Everything here is deterministic and allocation-free. The normal CDF and
//! quantile are tail-stable: `ln_norm_cdf` stays finite down to arguments
//! around -1e7 and `norm_quantile` is polished in log-CDF space so that
//! probabilities near the subnormal range still map to sensible quantiles.

use statrs::function::erf::erfc;

pub const LN_2PI: f64 = 1.8378770664093453;
pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Log of the standard normal density.
pub fn ln_norm_pdf(x: f64) -> f64 {
    -0.5 * (LN_2PI + x * x)
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Log of the standard normal CDF, stable in the lower tail.
///
/// For x >= -36 the erfc route is exact to working precision; below that
/// erfc underflows and we switch to the asymptotic expansion
/// ln Phi(x) = -x^2/2 - ln(-x) - ln(2*pi)/2 + ln(1 - 1/x^2 + 3/x^4 - ...).
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > 6.0 {
        // ln(1 - Phi(-x)); Phi(-x) is tiny, ln_1p keeps precision.
        return (-norm_cdf(-x)).ln_1p();
    }
    if x >= -36.0 {
        return norm_cdf(x).ln();
    }
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - (-x).ln() - 0.5 * LN_2PI + series.ln()
}

/// Standard normal quantile.
///
/// Wraps the statrs inverse CDF with two Newton steps in log-CDF space,
/// which keeps the extreme tails (p near the subnormal range) accurate.
pub fn norm_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1), got {p}");
    use statrs::distribution::ContinuousCDF;
    let std_normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    let mut x = std_normal.inverse_cdf(p);
    if !x.is_finite() {
        // statrs can overflow for p in the deep subnormal range; seed the
        // Newton polish from the asymptotic inverse instead.
        let lp = p.ln();
        x = -(-2.0 * lp - (-2.0 * lp).ln() - LN_2PI).max(1.0).sqrt();
    }
    let ln_p = p.ln();
    for _ in 0..2 {
        let g = ln_norm_cdf(x) - ln_p;
        // d/dx ln Phi(x) = phi(x)/Phi(x)
        let slope = (ln_norm_pdf(x) - ln_norm_cdf(x)).exp();
        if slope <= 0.0 || !slope.is_finite() {
            break;
        }
        let step = g / slope;
        if !step.is_finite() {
            break;
        }
        x -= step;
    }
    x
}

/// Log density of a univariate normal with the given mean and variance.
pub fn ln_normal_density(x: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 || !var.is_finite() {
        return f64::NEG_INFINITY;
    }
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

/// Log density of a bivariate normal with covariance [[v1, c], [c, v2]].
///
/// Returns -inf when the covariance is not positive definite.
pub fn ln_bivariate_normal_density(
    x1: f64,
    x2: f64,
    m1: f64,
    m2: f64,
    v1: f64,
    v2: f64,
    c: f64,
) -> f64 {
    let det = v1 * v2 - c * c;
    if det <= 0.0 || v1 <= 0.0 || !det.is_finite() {
        return f64::NEG_INFINITY;
    }
    let r1 = x1 - m1;
    let r2 = x2 - m2;
    let quad = (v2 * r1 * r1 - 2.0 * c * r1 * r2 + v1 * r2 * r2) / det;
    -LN_2PI - 0.5 * det.ln() - 0.5 * quad
}

/// Log density of a half-Cauchy with the given scale, supported on x > 0.
pub fn ln_half_cauchy_density(x: f64, scale: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    let t = x / scale;
    (2.0 / std::f64::consts::PI).ln() - scale.ln() - (1.0 + t * t).ln()
}

/// Sample mean; NaN on empty input.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; NaN for fewer than two points.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Linear-interpolation quantile of a sorted slice (type-7 definition).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = h - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Draw from a bivariate normal via the 2x2 Cholesky factor.
pub fn sample_bivariate_normal<R: rand::Rng>(
    rng: &mut R,
    m1: f64,
    m2: f64,
    v1: f64,
    v2: f64,
    c: f64,
) -> (f64, f64) {
    use rand_distr::StandardNormal;
    let l11 = v1.sqrt();
    let l21 = c / l11;
    let l22 = (v2 - l21 * l21).max(0.0).sqrt();
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    (m1 + l11 * z1, m2 + l21 * z1 + l22 * z2)
}
