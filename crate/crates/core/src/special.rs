//! Scalar special functions used across the crate.

pub use std::f64::consts::{LN_2, PI};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln Γ(x + h) − ln Γ(x)`, accurate when `x` is large and `h` is moderate.
pub fn ln_gamma_ratio(x: f64, h: f64) -> f64 {
    if x < 1e4 {
        return ln_gamma(x + h) - ln_gamma(x);
    }
    // Stirling: (x−½)ln x − x + ½ln 2π + 1/(12x) − 1/(360x³)
    let y = x + h;
    let tail = |t: f64| 1.0 / (12.0 * t) - 1.0 / (360.0 * t * t * t);
    (x - 0.5) * (h / x).ln_1p() + h * y.ln() - h + tail(y) - tail(x)
}

/// `2·(1 − Φ(z))` for `z ≥ 0`, i.e. `erfc(z/√2)`.
pub fn two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Natural log of [`two_sided_p`], finite for arbitrarily large `z`.
pub fn ln_two_sided_p(z: f64) -> f64 {
    let z = z.abs();
    let p = two_sided_p(z);
    if p > 1e-300 {
        return p.ln();
    }
    // erfc(x) ~ exp(-x²)/(x√π) · (1 - 1/(2x²) + 3/(4x⁴) - 15/(8x⁶))
    let x = z / std::f64::consts::SQRT_2;
    let x2 = x * x;
    let series = 1.0 - 0.5 / x2 + 0.75 / (x2 * x2) - 1.875 / (x2 * x2 * x2);
    -x2 - (x * PI.sqrt()).ln() + series.ln()
}

/// `ln Σ exp(xᵢ)` with max-shift stabilization.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
