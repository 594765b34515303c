//! Normal densities, distribution functions and quantiles evaluated stably
//! in the log domain.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::erf::{erfc, erfc_inv};

/// `0.5 * ln(2π)`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Above this standardized value the upper tail uses the Mills-ratio continued fraction.
const TAIL_SWITCH: f64 = 5.0;

pub fn std_normal_logpdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `Φ(z)`.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `1 - Φ(z)` without cancellation.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Mills ratio `(1 - Φ(z)) / φ(z)` for `z >= TAIL_SWITCH`, by backward
/// evaluation of the continued fraction `1/(z + 1/(z + 2/(z + 3/(z + ...))))`.
fn mills_ratio_tail(z: f64) -> f64 {
    let mut acc = z;
    for k in (1..=200).rev() {
        acc = z + k as f64 / acc;
    }
    1.0 / acc
}

/// `ln(1 - Φ(z))`, accurate from the far lower tail up to `z` of several hundred.
pub fn std_normal_logsf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if z >= TAIL_SWITCH {
        std_normal_logpdf(z) + mills_ratio_tail(z).ln()
    } else if z > -1.0 {
        std_normal_sf(z).ln()
    } else {
        (-std_normal_cdf(z)).ln_1p()
    }
}

/// `ln Φ(z)`.
pub fn std_normal_logcdf(z: f64) -> f64 {
    std_normal_logsf(-z)
}

/// `Φ⁻¹(p)`.
pub fn std_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Upper-tail quantile: the `z` with `1 - Φ(z) = q`.
pub fn std_normal_upper_quantile(q: f64) -> f64 {
    SQRT_2 * erfc_inv(2.0 * q)
}

pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - LN_SQRT_2PI - sd.ln()
}

pub fn normal_logsf(x: f64, mean: f64, sd: f64) -> f64 {
    std_normal_logsf((x - mean) / sd)
}

pub fn normal_logcdf(x: f64, mean: f64, sd: f64) -> f64 {
    std_normal_logcdf((x - mean) / sd)
}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
