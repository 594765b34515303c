//! Shared fixtures and independent oracles for the sampler test suites.
//!
//! Nothing here calls into the sampler's conditional formulas. Densities are
//! written out from the model definition and normalised numerically.

#![allow(dead_code)]

pub mod blocks;

use recurstrata::data::{Dataset, GapCovariates, SubjectRecord};
use recurstrata::gibbs::{stick_weights, ChainState, Hyperparameters, ModelData, ModelVariant};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn subject(id: &str, followup: f64, death: bool, z: u8, x: &[f64], events: &[f64]) -> SubjectRecord {
    SubjectRecord {
        id: id.into(),
        followup_time: followup,
        death_observed: death,
        censored: !death,
        treatment: z,
        covariates: x.to_vec(),
        event_times: events.to_vec(),
    }
}

/// Three subjects, one covariate, no gap covariates: one death with two
/// events, one censored treated subject with one event, one early death.
pub fn toy_dataset() -> Dataset {
    Dataset::new(
        vec![
            subject("a", 400.0, true, 0, &[0.5], &[100.0, 250.0]),
            subject("b", 600.0, false, 1, &[-1.0], &[200.0]),
            subject("c", 150.0, true, 1, &[0.3], &[]),
        ],
        GapCovariates::None,
    )
    .unwrap()
}

pub fn toy_hyperparameters(k: usize, l: usize) -> Hyperparameters {
    Hyperparameters {
        k,
        l,
        ..Default::default()
    }
}

/// A hand-set state for the toy data: subjects a and b in cluster 0, c in
/// cluster 1; gaps alternate between the first two nested cells.
pub fn toy_state(data: &ModelData, k: usize, l: usize) -> ChainState {
    let mut s = ChainState::empty(k, l, data.du, data.dy, data.n, data.total_gaps());
    for (kk, v) in s.v_phi.iter_mut().enumerate() {
        *v = if kk + 1 == k { 1.0 } else { 0.45 };
    }
    for kk in 0..k {
        for ll in 0..l {
            s.v_theta[kk * l + ll] = if ll + 1 == l { 1.0 } else { 0.6 - 0.1 * kk as f64 };
        }
    }
    s.refresh_weights();
    s.alpha_phi = 1.3;
    s.alpha_theta.iter_mut().enumerate().for_each(|(kk, a)| *a = 0.8 + 0.2 * kk as f64);
    for kk in 0..k {
        s.tau2[kk] = 0.5 + 0.1 * kk as f64;
        s.gamma[kk] = [5.5 - 0.3 * kk as f64, 5.8 + 0.2 * kk as f64];
        for d in 0..data.du {
            s.beta_u[kk * data.du + d] = 0.3 + 0.2 * d as f64 - 0.1 * kk as f64;
        }
    }
    for c in 0..k * l {
        s.sigma2[c] = 0.4 + 0.05 * c as f64;
        s.psi[c] = 0.8 - 0.05 * c as f64;
        for d in 0..data.dy {
            s.beta_y[c * data.dy + d] = 0.1 + 0.1 * d as f64 - 0.02 * c as f64;
        }
    }
    for i in 0..data.n {
        s.g[i] = if i < 2 || k == 1 { 0 } else { 1 };
        s.imputed_u[i] = data.log_followup[i] + if data.censored[i] { 0.4 } else { 0.0 };
        s.imputed_open_gap[i] = data.y[data.open_gap(i)] + 0.3;
    }
    for g in 0..data.total_gaps() {
        s.h[g] = if l == 1 { 0 } else { g % 2 };
    }
    s
}

pub fn toy(variant: ModelVariant, k: usize, l: usize) -> (ModelData, Hyperparameters, ChainState) {
    let data = ModelData::new(&toy_dataset(), variant).unwrap();
    let hp = toy_hyperparameters(k, l);
    let state = toy_state(&data, k, l);
    (data, hp, state)
}

fn norm_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
}

fn inv_gamma_logpdf(x: f64, a: f64, b: f64) -> f64 {
    -(a + 1.0) * x.ln() - b / x
}

fn gamma_logpdf(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() - b * x
}

/// Beta(1, alpha) log density including the normaliser `ln alpha`, since
/// alpha varies in the concentration oracle.
fn stick_logpdf(v: f64, alpha: f64) -> f64 {
    alpha.ln() + (alpha - 1.0) * (1.0 - v).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gap_value(data: &ModelData, s: &ChainState, g: usize) -> f64 {
    let i = data.gap_subject[g];
    if g == data.open_gap(i) {
        s.imputed_open_gap[i]
    } else {
        data.y[g]
    }
}

/// Complete-data log likelihood: terminal times (imputed where censored),
/// every gap including the imputed open gap, and the label terms.
pub fn complete_loglik(data: &ModelData, s: &ChainState) -> f64 {
    let mut ll = 0.0;
    let mut w_phi = vec![0.0; s.k];
    stick_weights(&s.v_phi, &mut w_phi);
    let mut w_theta = vec![0.0; s.k * s.l];
    for k in 0..s.k {
        stick_weights(&s.v_theta[k * s.l..(k + 1) * s.l], &mut w_theta[k * s.l..(k + 1) * s.l]);
    }
    for i in 0..data.n {
        let k = s.g[i];
        let z = data.z[i] as usize;
        let mean = dot(data.xu_row(i), &s.beta_u[k * s.du..(k + 1) * s.du]) + s.gamma[k][z];
        ll += norm_logpdf(s.imputed_u[i], mean, s.tau2[k]) + w_phi[k].ln();
    }
    for g in 0..data.total_gaps() {
        let i = data.gap_subject[g];
        let k = s.g[i];
        let c = k * s.l + s.h[g];
        let z = data.z[i] as usize;
        let mean = dot(data.xy_row(g), &s.beta_y[c * s.dy..(c + 1) * s.dy]) + s.psi[c] * s.gamma[k][z];
        ll += norm_logpdf(gap_value(data, s, g), mean, s.sigma2[c]) + w_theta[c].ln();
    }
    ll
}

/// Log prior of every atom, stick and concentration (base measures with a
/// diagonal `beta_prior_var` covariance and zero means).
pub fn log_prior(hp: &Hyperparameters, s: &ChainState) -> f64 {
    let mut lp = gamma_logpdf(s.alpha_phi, hp.a_alpha, hp.b_alpha);
    for k in 0..s.k.saturating_sub(1) {
        lp += stick_logpdf(s.v_phi[k], s.alpha_phi);
    }
    for k in 0..s.k {
        let a = s.alpha_theta[k];
        lp += gamma_logpdf(a, hp.a_alpha, hp.b_alpha);
        for l in 0..s.l - 1 {
            lp += stick_logpdf(s.v_theta[k * s.l + l], a);
        }
        lp += inv_gamma_logpdf(s.tau2[k], hp.a_tau, hp.b_tau);
        lp += s.beta_u[k * s.du..(k + 1) * s.du]
            .iter()
            .map(|b| norm_logpdf(*b, 0.0, hp.beta_prior_var))
            .sum::<f64>();
        // Bivariate normal frailty prior, written as marginal x conditional.
        let [g0, g1] = s.gamma[k];
        let (s0, s1, rho) = (hp.sigma_gamma0, hp.sigma_gamma1, hp.rho);
        let cond_mean = hp.mu_gamma[1] + rho * s1 / s0 * (g0 - hp.mu_gamma[0]);
        lp += norm_logpdf(g0, hp.mu_gamma[0], s0 * s0) + norm_logpdf(g1, cond_mean, s1 * s1 * (1.0 - rho * rho));
    }
    for c in 0..s.k * s.l {
        lp += inv_gamma_logpdf(s.sigma2[c], hp.a_sigma, hp.b_sigma);
        lp += s.beta_y[c * s.dy..(c + 1) * s.dy]
            .iter()
            .map(|b| norm_logpdf(*b, 0.0, hp.beta_prior_var))
            .sum::<f64>();
        lp += norm_logpdf(s.psi[c], hp.mu_psi, hp.sigma_psi * hp.sigma_psi);
    }
    lp
}

pub fn log_joint(data: &ModelData, hp: &Hyperparameters, s: &ChainState) -> f64 {
    complete_loglik(data, s) + log_prior(hp, s)
}

/// Numerically normalised CDF of an unnormalised log density on `[lo, hi]`
/// (trapezoid rule on a uniform grid).
pub struct GridCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridCdf {
    pub fn new(lo: f64, hi: f64, n: usize, mut logdens: impl FnMut(f64) -> f64) -> Self {
        let h = (hi - lo) / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|j| lo + h * j as f64).collect();
        // An integrable singularity at an end point (a stick density with
        // alpha < 1) contributes nothing at the node itself.
        let ld: Vec<f64> = xs
            .iter()
            .map(|&x| logdens(x))
            .map(|v| if v == f64::INFINITY || v.is_nan() { f64::NEG_INFINITY } else { v })
            .collect();
        let m = ld.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        let d: Vec<f64> = ld.iter().map(|v| (v - m).exp()).collect();
        Self::from_density(xs, d)
    }

    /// From density values already on a grid.
    pub fn from_density(xs: Vec<f64>, d: Vec<f64>) -> Self {
        let mut cdf = vec![0.0; xs.len()];
        for j in 1..xs.len() {
            cdf[j] = cdf[j - 1] + 0.5 * (d[j] + d[j - 1]) * (xs[j] - xs[j - 1]);
        }
        let total = *cdf.last().unwrap();
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { xs, cdf }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= *self.xs.last().unwrap() {
            return 1.0;
        }
        let j = self.xs.partition_point(|&g| g <= x);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let t = (x - x0) / (x1 - x0);
        self.cdf[j - 1] + t * (self.cdf[j] - self.cdf[j - 1])
    }

    pub fn mean(&self) -> f64 {
        let mut m = 0.0;
        for j in 1..self.xs.len() {
            m += 0.5 * (self.xs[j] + self.xs[j - 1]) * (self.cdf[j] - self.cdf[j - 1]);
        }
        m
    }
}

/// One-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(j, &x)| {
            let f = cdf(x);
            assert!(f.is_finite(), "oracle CDF is {f} at {x}");
            (f - j as f64 / n).abs().max(((j + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Grid bounds covering a sample with generous margins, clipped to
/// `[floor, ceil]`.
pub fn bracket(samples: &[f64], floor: f64, ceil: f64) -> (f64, f64) {
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.5 * (hi - lo);
    ((lo - pad).max(floor), (hi + pad).min(ceil))
}

/// Draws `n` values of one scalar coordinate by repeatedly applying a block
/// update to a fresh copy of `state`.
pub fn frozen_draws(
    state: &ChainState,
    n: usize,
    mut step: impl FnMut(&mut ChainState),
    pick: impl Fn(&ChainState) -> f64,
) -> Vec<f64> {
    let mut s = state.clone();
    (0..n)
        .map(|_| {
            s.clone_from(state);
            step(&mut s);
            pick(&s)
        })
        .collect()
}

/// KS distance between frozen-block draws of one coordinate and its full
/// conditional, evaluated from the log joint on a grid.
pub fn conditional_ks(
    data: &ModelData,
    hp: &Hyperparameters,
    state: &ChainState,
    draws: &[f64],
    support: (f64, f64),
    set: impl Fn(&mut ChainState, f64),
) -> f64 {
    let mut s = state.clone();
    if support == (0.0, f64::INFINITY) {
        // Scale parameters: integrate on the log scale, where the grid
        // resolves both the bulk and a heavy right tail.
        let logs: Vec<f64> = draws.iter().map(|x| x.ln()).collect();
        let (lo, hi) = bracket(&logs, f64::NEG_INFINITY, f64::INFINITY);
        let grid = GridCdf::new(lo, hi, 40_001, |u| {
            set(&mut s, u.exp());
            log_joint(data, hp, &s) + u
        });
        return ks_distance(&logs, |u| grid.cdf(u));
    }
    let (lo, hi) = bracket(draws, support.0, support.1);
    let grid = GridCdf::new(lo, hi, 40_001, |x| {
        set(&mut s, x);
        log_joint(data, hp, &s)
    });
    ks_distance(draws, |x| grid.cdf(x))
}

/// Marginal CDF of the first coordinate of a two-dimensional conditional,
/// integrating the second out on a grid.
pub fn marginal_ks_2d(
    data: &ModelData,
    hp: &Hyperparameters,
    state: &ChainState,
    first: &[f64],
    second: &[f64],
    set: impl Fn(&mut ChainState, f64, f64),
) -> f64 {
    let (lo1, hi1) = bracket(first, f64::NEG_INFINITY, f64::INFINITY);
    let (lo2, hi2) = bracket(second, f64::NEG_INFINITY, f64::INFINITY);
    let (n1, n2) = (1201, 801);
    let xs: Vec<f64> = (0..n1).map(|j| lo1 + (hi1 - lo1) * j as f64 / (n1 - 1) as f64).collect();
    let h2 = (hi2 - lo2) / (n2 - 1) as f64;
    let mut s = state.clone();
    let mut ld = vec![0.0; n1 * n2];
    for (a, &x) in xs.iter().enumerate() {
        for b in 0..n2 {
            set(&mut s, x, lo2 + h2 * b as f64);
            ld[a * n2 + b] = log_joint(data, hp, &s);
        }
    }
    let m = ld.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = (0..n1)
        .map(|a| {
            let row = &ld[a * n2..(a + 1) * n2];
            row.windows(2).map(|w| 0.5 * ((w[0] - m).exp() + (w[1] - m).exp()) * h2).sum()
        })
        .collect();
    let grid = GridCdf::from_density(xs, dens);
    ks_distance(first, |x| grid.cdf(x))
}

/// Log of `sum exp`, for the label oracles.
pub fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `P(G_i = k | everything except G_i and subject i's gap labels)` by
/// enumerating every nested labelling of the subject's gaps.
pub fn brute_force_label_probs(data: &ModelData, hp: &Hyperparameters, state: &ChainState, i: usize) -> Vec<f64> {
    let gaps: Vec<usize> = data.gaps_of(i).collect();
    let combos = state.l.pow(gaps.len() as u32);
    let mut s = state.clone();
    let per_k: Vec<f64> = (0..state.k)
        .map(|k| {
            s.g[i] = k;
            let terms: Vec<f64> = (0..combos)
                .map(|mut code| {
                    for &g in &gaps {
                        s.h[g] = code % state.l;
                        code /= state.l;
                    }
                    log_joint(data, hp, &s)
                })
                .collect();
            lse(&terms)
        })
        .collect();
    let z = lse(&per_k);
    per_k.iter().map(|v| (v - z).exp()).collect()
}

/// `P(H_g = l | G and everything else)` by direct normalisation.
pub fn brute_force_sublabel_probs(data: &ModelData, hp: &Hyperparameters, state: &ChainState, g: usize) -> Vec<f64> {
    let mut s = state.clone();
    let terms: Vec<f64> = (0..state.l)
        .map(|l| {
            s.h[g] = l;
            log_joint(data, hp, &s)
        })
        .collect();
    let z = lse(&terms);
    terms.iter().map(|v| (v - z).exp()).collect()
}

/// Sample mean and a batch-means standard error for an autocorrelated series.
pub fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len() / batches * batches;
    let size = n / batches;
    let mean = xs[..n].iter().sum::<f64>() / n as f64;
    let bm: Vec<f64> = xs[..n].chunks(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let var = bm.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

/// All set partitions of `items` as lists of blocks (restricted growth
/// strings).
pub fn set_partitions(items: &[usize]) -> Vec<Vec<Vec<usize>>> {
    let n = items.len();
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    loop {
        let blocks = labels.iter().max().unwrap() + 1;
        let mut p = vec![Vec::new(); blocks];
        for (i, &b) in labels.iter().enumerate() {
            p[b].push(items[i]);
        }
        out.push(p);
        // Next restricted growth string.
        let mut i = n - 1;
        loop {
            if i == 0 {
                return out;
            }
            let max_prefix = *labels[..i].iter().max().unwrap();
            if labels[i] <= max_prefix {
                labels[i] += 1;
                labels[i + 1..].iter_mut().for_each(|l| *l = 0);
                break;
            }
            i -= 1;
        }
    }
}

/// Nested partitions: a top-level set partition and, inside each top block,
/// a set partition of its members.
pub fn nested_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    let items: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    for top in set_partitions(&items) {
        let mut acc: Vec<Vec<Vec<usize>>> = vec![vec![]];
        for block in &top {
            let inner: Vec<Vec<usize>> =
                set_partitions(block).iter().map(|p| p.iter().map(Vec::len).collect()).collect();
            acc = acc
                .into_iter()
                .flat_map(|prefix| {
                    inner.iter().map(move |sizes| {
                        let mut v = prefix.clone();
                        v.push(sizes.clone());
                        v
                    })
                })
                .collect();
        }
        out.extend(acc);
    }
    out
}
