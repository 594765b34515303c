//! Seeded random streams and the scalar/vector samplers used by the Gibbs
//! sampler, the simulator and the estimand engine.

pub mod normal;
pub mod stats;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{Error, Result};
pub use normal::{
    log_sum_exp, normal_logcdf, normal_logpdf, normal_logsf, std_normal_cdf, std_normal_logsf,
    std_normal_quantile, std_normal_sf, std_normal_upper_quantile,
};

/// Beyond this many standard deviations the truncated normal switches from
/// inverse-CDF to rejection sampling.
pub const TAIL_REJECTION_SD: f64 = 4.0;

/// Diagonal jitter added once when a Cholesky factorisation fails.
pub const CHOLESKY_JITTER: f64 = 1e-10;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Streams with the same seed and different ids are independent ChaCha8
/// streams; the same pair always replays the same sequence.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Deterministic child stream keyed by `(a, b)`, independent of how much
    /// of the parent has been consumed.
    pub fn child(&self, a: u64, b: u64) -> RngStream {
        let seed = splitmix64(self.seed ^ splitmix64(self.stream_id ^ splitmix64(a)));
        RngStream::new(seed, b)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

pub fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Open-interval uniform on (0, 1).
fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard normal restricted to `(a, b)`.
fn std_truncated_normal<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b <= 0.0 {
        return -std_truncated_normal(-b, -a, rng);
    }
    if a >= 0.0 {
        if a > TAIL_REJECTION_SD {
            return tail_rejection(a, b, rng);
        }
        // Upper-tail inverse CDF avoids cancellation in Φ near 1.
        let qa = std_normal_sf(a);
        let qb = std_normal_sf(b);
        for _ in 0..64 {
            let q = qb + open_uniform(rng) * (qa - qb);
            let x = std_normal_upper_quantile(q);
            if x > a && x < b {
                return x;
            }
        }
        return 0.5 * (a + b.min(a + 1.0));
    }
    // a < 0 < b
    let pa = std_normal_cdf(a);
    let pb = std_normal_cdf(b);
    for _ in 0..64 {
        let p = pa + open_uniform(rng) * (pb - pa);
        let x = std_normal_quantile(p);
        if x > a && x < b {
            return x;
        }
    }
    0.0
}

/// Rejection sampler for `(a, b)` with `a > 4`.
fn tail_rejection<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b.is_finite() && a * (b - a) < 1.0 {
        // Narrow slab: uniform proposal, acceptance exp((a² - x²)/2) >= e^-1.
        loop {
            let x = a + open_uniform(rng) * (b - a);
            if x < b && open_uniform(rng).ln() < 0.5 * (a * a - x * x) {
                return x;
            }
        }
    }
    // Shifted exponential proposal with the optimal rate.
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let x = a + e / lambda;
        if x <= a || x >= b {
            continue;
        }
        let d = x - lambda;
        if open_uniform(rng).ln() < -0.5 * d * d {
            return x;
        }
    }
}

/// Draws from `N(mean, sd²)` conditioned on `(lower, upper)`; bounds may be infinite.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    if !mean.is_finite() || !sd.is_finite() || sd <= 0.0 {
        return Err(Error::numerical(format!("truncated normal with mean {mean}, sd {sd}")));
    }
    if lower.is_nan() || upper.is_nan() || lower >= upper {
        return Err(Error::numerical(format!("truncated normal with empty interval ({lower}, {upper})")));
    }
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    for _ in 0..16 {
        let x = mean + sd * std_truncated_normal(a, b, rng);
        if x > lower && x < upper {
            return Ok(x);
        }
    }
    // Interval narrower than the rounding grid at this magnitude.
    let x = if lower.is_finite() { lower.next_up() } else { upper.next_down() };
    Ok(x)
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(Error::numerical(format!("gamma with shape {shape}, rate {rate}")));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::numerical(e.to_string()))?;
    Ok(g.sample(rng))
}

pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(Error::numerical(format!("inverse gamma with shape {shape}, rate {rate}")));
    }
    loop {
        let x = sample_gamma(shape, rate, rng)?;
        if x > 0.0 {
            return Ok(1.0 / x);
        }
    }
}

pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::numerical(format!("beta with parameters ({a}, {b})")));
    }
    let d = Beta::new(a, b).map_err(|e| Error::numerical(e.to_string()))?;
    Ok(d.sample(rng))
}

/// Index drawn with probability proportional to `weights`.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::numerical("categorical weights must be nonnegative with positive sum"));
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return Ok(k);
            }
            u -= w;
            last = k;
        }
    }
    Ok(last)
}

/// Index drawn with probability proportional to `exp(log_weights)`.
pub fn sample_categorical_log<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::numerical("all categorical log-weights are -inf or NaN"));
    }
    let mut total = 0.0;
    for &lw in log_weights {
        total += (lw - m).exp();
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, &lw) in log_weights.iter().enumerate() {
        let w = (lw - m).exp();
        if w > 0.0 {
            if u < w {
                return Ok(k);
            }
            u -= w;
            last = k;
        }
    }
    Ok(last)
}

/// Cholesky factor, retrying once with [`CHOLESKY_JITTER`] on the diagonal.
pub fn cholesky_with_jitter(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let jittered = m + DMatrix::<f64>::identity(n, n) * CHOLESKY_JITTER;
    Cholesky::new(jittered).ok_or_else(|| Error::numerical("matrix is not positive definite after jitter"))
}

/// Draws from `MVN(mean, covariance)`.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &[f64], covariance: &DMatrix<f64>, rng: &mut R) -> Result<Vec<f64>> {
    let d = mean.len();
    if covariance.nrows() != d || covariance.ncols() != d {
        return Err(Error::validation("covariance dimension does not match mean"));
    }
    if (covariance - covariance.transpose()).amax() > 1e-10 * covariance.amax().max(1.0) {
        return Err(Error::numerical("covariance is not symmetric"));
    }
    let chol = cholesky_with_jitter(covariance.clone())?;
    let z = DVector::from_fn(d, |_, _| sample_std_normal(rng));
    let x = chol.l() * z;
    Ok(mean.iter().zip(x.iter()).map(|(m, e)| m + e).collect())
}

/// Draws from `N(P⁻¹ b, s² P⁻¹)` given the precision-like matrix `P`, the
/// linear term `b` and the scale `s²`; returns `(draw, mean)`.
///
/// This is the form every conjugate regression update takes, and avoids
/// forming `P⁻¹` explicitly.
pub fn sample_canonical_gaussian<R: Rng + ?Sized>(
    precision: DMatrix<f64>,
    linear: &DVector<f64>,
    scale2: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = linear.len();
    let chol = cholesky_with_jitter(precision)?;
    let mean = chol.solve(linear);
    let z = DVector::from_fn(d, |_, _| sample_std_normal(rng) * scale2.sqrt());
    // L Lᵀ = P  ⇒  Lᵀ⁻¹ z has covariance P⁻¹.
    let e = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
    let draw = mean.iter().zip(e.iter()).map(|(m, e)| m + e).collect();
    Ok((draw, mean.iter().copied().collect()))
}
