use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::model::{dot, Hyperparameters, ModelData, ModelVariant};
use super::state::ChainState;
use crate::error::{Error, Result};
use crate::kernel::normal::{log_sum_exp, LN_SQRT_2PI};
use crate::kernel::{
    cholesky_with_jitter, sample_beta, sample_canonical_gaussian, sample_categorical, sample_categorical_log,
    sample_gamma, sample_inverse_gamma, sample_std_normal, sample_truncated_normal,
};

/// Stick fractions are kept inside `[STICK_FLOOR, 1 - STICK_FLOOR]` so that
/// `ln(1 - v)` stays finite in the concentration updates.
pub const STICK_FLOOR: f64 = 1e-12;

/// Multivariate normal base measure with its factorisations cached.
#[derive(Debug, Clone)]
struct GaussianBase {
    mean: Vec<f64>,
    chol_lower: DMatrix<f64>,
    precision: DMatrix<f64>,
    precision_mean: DVector<f64>,
}

impl GaussianBase {
    fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let chol = cholesky_with_jitter(cov)?;
        let precision = chol.inverse();
        let precision_mean = &precision * DVector::from_column_slice(&mean);
        Ok(Self {
            mean,
            chol_lower: chol.l(),
            precision,
            precision_mean,
        })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.mean.len();
        let z: Vec<f64> = (0..d).map(|_| sample_std_normal(rng)).collect();
        for r in 0..d {
            let mut acc = self.mean[r];
            for c in 0..=r {
                acc += self.chol_lower[(r, c)] * z[c];
            }
            out[r] = acc;
        }
    }
}

/// Blocked Gibbs sampler bound to one prepared dataset.
///
/// Each update is a public method so that single blocks can be exercised
/// with everything else frozen; [`GibbsSampler::sweep`] runs them in order.
#[derive(Debug, Clone)]
pub struct GibbsSampler<'a> {
    data: &'a ModelData,
    hp: Hyperparameters,
    variant: ModelVariant,
    k: usize,
    l: usize,
    base_u: GaussianBase,
    base_y: GaussianBase,
    frailty_chol: [[f64; 2]; 2],
    // label-update caches, refreshed once per sweep
    log_w_phi: Vec<f64>,
    tau_const: Vec<f64>,
    tau_inv2: Vec<f64>,
    cell_const: Vec<f64>,
    cell_inv2: Vec<f64>,
    cell_gap_coef: Vec<f64>,
    subject_part: Vec<f64>,
    scratch_k: Vec<f64>,
    scratch_l: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(data: &'a ModelData, hp: &Hyperparameters, variant: ModelVariant) -> Result<Self> {
        hp.validate()?;
        let (k, l) = variant.truncation(hp.k, hp.l);
        let (mu_u, cov_u) =
            Hyperparameters::gaussian_prior(&hp.mu_beta_u, &hp.sigma_beta_u, hp.beta_prior_var, data.du, "beta_u")?;
        let (mu_y, cov_y) =
            Hyperparameters::gaussian_prior(&hp.mu_beta_y, &hp.sigma_beta_y, hp.beta_prior_var, data.dy, "beta_y")?;
        let cov = hp.frailty_cov();
        let l00 = cov[0][0].sqrt();
        let l10 = cov[1][0] / l00;
        let l11 = (cov[1][1] - l10 * l10).sqrt();
        Ok(Self {
            data,
            hp: hp.clone(),
            variant,
            k,
            l,
            base_u: GaussianBase::new(mu_u, cov_u)?,
            base_y: GaussianBase::new(mu_y, cov_y)?,
            frailty_chol: [[l00, 0.0], [l10, l11]],
            log_w_phi: vec![0.0; k],
            tau_const: vec![0.0; k],
            tau_inv2: vec![0.0; k],
            cell_const: vec![0.0; k * l],
            cell_inv2: vec![0.0; k * l],
            cell_gap_coef: Vec::new(),
            subject_part: vec![0.0; k * l],
            scratch_k: vec![0.0; k],
            scratch_l: vec![0.0; l],
        })
    }

    pub fn truncation(&self) -> (usize, usize) {
        (self.k, self.l)
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn data(&self) -> &ModelData {
        self.data
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    /// Draws a starting state from the prior (except `psi`, which starts at
    /// its prior mean), then labels and latent outcomes given those atoms.
    pub fn init_chain<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ChainState> {
        let (k, l, data, hp) = (self.k, self.l, self.data, &self.hp);
        let mut s = ChainState::empty(k, l, data.du, data.dy, data.n, data.total_gaps());
        s.alpha_phi = sample_gamma(hp.a_alpha, hp.b_alpha, rng)?;
        for a in s.alpha_theta.iter_mut() {
            *a = sample_gamma(hp.a_alpha, hp.b_alpha, rng)?;
        }
        prior_sticks(&mut s.v_phi, s.alpha_phi, rng)?;
        for kk in 0..k {
            let alpha = s.alpha_theta[kk];
            prior_sticks(&mut s.v_theta[kk * l..(kk + 1) * l], alpha, rng)?;
        }
        s.refresh_weights();
        for kk in 0..k {
            self.draw_survival_prior(&mut s, kk, rng)?;
            s.gamma[kk] = self.draw_frailty_prior(rng);
        }
        for c in 0..k * l {
            self.draw_recurrent_prior(&mut s, c, rng)?;
            // Prior mean rather than a draw: with a random sign, psi * gamma
            // tends to lock onto the gap level and strand gamma.
            s.psi[c] = hp.mu_psi;
        }
        for i in 0..data.n {
            let g = sample_categorical(&s.w_phi, rng)?;
            s.g[i] = g;
            for gi in data.gaps_of(i) {
                s.h[gi] = sample_categorical(s.w_theta_row(g), rng)?;
            }
            s.imputed_u[i] = data.log_followup[i];
            s.imputed_open_gap[i] = data.y[data.open_gap(i)];
        }
        self.impute_terminal(&mut s, rng)?;
        self.impute_open_gap(&mut s, rng)?;
        Ok(s)
    }

    /// One full sweep in the fixed block order.
    pub fn sweep<R: Rng + ?Sized>(&mut self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        self.impute_terminal(s, rng)?;
        self.impute_open_gap(s, rng)?;
        self.update_parameters(s, rng)
    }

    /// A sweep without the two imputation blocks, used for the first burn-in
    /// sweeps so that `tau²` and the censored imputations cannot inflate each
    /// other while the atoms are still prior draws.
    pub fn warmup_sweep<R: Rng + ?Sized>(&mut self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        self.update_parameters(s, rng)
    }

    fn update_parameters<R: Rng + ?Sized>(&mut self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        self.update_labels(s, rng)?;
        self.update_weights(s, rng)?;
        self.update_concentrations(s, rng)?;
        self.update_survival_atoms(s, rng)?;
        self.update_recurrent_atoms(s, rng)?;
        self.update_frailties(s, rng)?;
        self.update_modulation(s, rng)?;
        Ok(())
    }

    fn terminal_mean(&self, s: &ChainState, i: usize, k: usize) -> f64 {
        dot(self.data.xu_row(i), s.beta_u_row(k)) + s.gamma[k][self.data.z[i] as usize]
    }

    fn gap_mean(&self, s: &ChainState, g: usize, k: usize, c: usize) -> f64 {
        let i = self.data.gap_subject[g];
        dot(self.data.xy_row(g), s.beta_y_row(c)) + s.psi[c] * s.gamma[k][self.data.z[i] as usize]
    }

    fn gap_value(&self, s: &ChainState, g: usize) -> f64 {
        let i = self.data.gap_subject[g];
        if g == self.data.open_gap(i) {
            s.imputed_open_gap[i]
        } else {
            self.data.y[g]
        }
    }

    /// Censored subjects: `U* ~ N(mean, tau²)` restricted to `(log followup, ∞)`.
    pub fn impute_terminal<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        for i in 0..self.data.n {
            if !self.data.censored[i] {
                s.imputed_u[i] = self.data.log_followup[i];
                continue;
            }
            let k = s.g[i];
            let mean = self.terminal_mean(s, i, k);
            s.imputed_u[i] =
                sample_truncated_normal(mean, s.tau2[k].sqrt(), self.data.log_followup[i], f64::INFINITY, rng)?;
        }
        Ok(())
    }

    /// Open gap of every subject: `N(mean, sigma²)` restricted to `(log(followup - T_N), ∞)`.
    pub fn impute_open_gap<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        for i in 0..self.data.n {
            let g = self.data.open_gap(i);
            let k = s.g[i];
            let c = k * self.l + s.h[g];
            let mean = self.gap_mean(s, g, k, c);
            s.imputed_open_gap[i] =
                sample_truncated_normal(mean, s.sigma2[c].sqrt(), self.data.y[g], f64::INFINITY, rng)?;
        }
        Ok(())
    }

    fn prepare_label_cache(&mut self, s: &ChainState) {
        for k in 0..self.k {
            self.log_w_phi[k] = s.w_phi[k].ln();
            self.tau_const[k] = -0.5 * s.tau2[k].ln() - LN_SQRT_2PI;
            self.tau_inv2[k] = 0.5 / s.tau2[k];
        }
        let (p, q) = self.gap_layout();
        let dy = self.data.dy;
        self.cell_gap_coef.resize(self.k * self.l * q, 0.0);
        for c in 0..self.k * self.l {
            self.cell_const[c] = s.w_theta[c].ln() - 0.5 * s.sigma2[c].ln() - LN_SQRT_2PI;
            self.cell_inv2[c] = 0.5 / s.sigma2[c];
            self.cell_gap_coef[c * q..(c + 1) * q].copy_from_slice(&s.beta_y[c * dy + p..c * dy + p + q]);
        }
    }

    /// Fills `subject_part[c]` with the part of every cell's gap mean that is
    /// shared by all gaps of subject `i` (baseline covariates, treatment,
    /// frailty); only the gap-covariate columns then vary within a subject.
    fn prepare_subject(&mut self, s: &ChainState, i: usize) {
        let d = self.data;
        let dy = d.dy;
        let z = d.z[i] as usize;
        let row = d.xy_row(d.gap_start[i]);
        let (p, _) = self.gap_layout();
        for k in 0..self.k {
            let gam = s.gamma[k][z];
            for l in 0..self.l {
                let c = k * self.l + l;
                let b = &s.beta_y[c * dy..(c + 1) * dy];
                let mut acc = dot(&row[..p], &b[..p]);
                acc += row[dy - 1] * b[dy - 1];
                self.subject_part[c] = acc + s.psi[c] * gam;
            }
        }
    }

    /// `(p, q)`: baseline columns and gap-covariate columns of a gap row.
    fn gap_layout(&self) -> (usize, usize) {
        let d = self.data;
        if d.design.include_covariates {
            (d.design.p, d.dy - d.design.p - 1)
        } else {
            (0, 0)
        }
    }

    /// Gap covariates of gap `g`.
    fn gap_features(&self, g: usize) -> &[f64] {
        let (p, q) = self.gap_layout();
        let dy = self.data.dy;
        &self.data.xy[g * dy + p..g * dy + p + q]
    }

    /// `ln w_{l|k} + ln N(y; mean_{l|k}, sigma²_{l|k})` for every `l` of
    /// cluster `k`, written to `out`; returns the maximum.
    #[inline]
    fn nested_logdens(&self, y: f64, v: &[f64], k: usize, out: &mut [f64]) -> f64 {
        let range = k * self.l..(k + 1) * self.l;
        let sp = &self.subject_part[range.clone()];
        let cc = &self.cell_const[range.clone()];
        let inv = &self.cell_inv2[range];
        let mut m = f64::NEG_INFINITY;
        match v.len() {
            0 => {
                for (((o, &sp), &cc), &inv) in out.iter_mut().zip(sp).zip(cc).zip(inv) {
                    let r = y - sp;
                    *o = cc - r * r * inv;
                    if *o > m {
                        m = *o;
                    }
                }
            }
            1 => {
                let coef = &self.cell_gap_coef[k * self.l..(k + 1) * self.l];
                let v0 = v[0];
                for ((((o, &sp), &cc), &inv), &b) in out.iter_mut().zip(sp).zip(cc).zip(inv).zip(coef) {
                    let r = y - sp - v0 * b;
                    *o = cc - r * r * inv;
                    if *o > m {
                        m = *o;
                    }
                }
            }
            q => {
                let coef = &self.cell_gap_coef[k * self.l * q..(k + 1) * self.l * q];
                for (l, o) in out.iter_mut().enumerate() {
                    let r = y - sp[l] - dot(v, &coef[l * q..(l + 1) * q]);
                    *o = cc[l] - r * r * inv[l];
                    if *o > m {
                        m = *o;
                    }
                }
            }
        }
        m
    }

    /// Log posterior of `G_i = k` (up to a constant) for every `k`, with the
    /// nested labels summed out. Caches must be prepared for subject `i`.
    fn subject_label_logpost(&mut self, s: &ChainState, i: usize) {
        let d = self.data;
        let u = s.imputed_u[i];
        let xu = d.xu_row(i);
        let z = d.z[i] as usize;
        let mut acc = std::mem::take(&mut self.scratch_k);
        let mut lt = std::mem::take(&mut self.scratch_l);
        for k in 0..self.k {
            acc[k] = if s.w_phi[k] > 0.0 {
                let r = u - dot(xu, s.beta_u_row(k)) - s.gamma[k][z];
                self.log_w_phi[k] + self.tau_const[k] - r * r * self.tau_inv2[k]
            } else {
                f64::NEG_INFINITY
            };
        }
        for g in d.gaps_of(i) {
            let y = self.gap_value(s, g);
            let v = self.gap_features(g);
            for k in 0..self.k {
                if acc[k] == f64::NEG_INFINITY {
                    continue;
                }
                let m = self.nested_logdens(y, v, k, &mut lt);
                if self.l == 1 {
                    acc[k] += m;
                } else {
                    let sum: f64 = lt.iter().map(|t| (t - m).exp()).sum();
                    acc[k] += m + sum.ln();
                }
            }
        }
        self.scratch_k = acc;
        self.scratch_l = lt;
    }

    /// Normalised `P(G_i = k | rest)` with the nested labels marginalised.
    pub fn label_probabilities(&mut self, s: &ChainState, i: usize) -> Vec<f64> {
        self.prepare_label_cache(s);
        self.prepare_subject(s, i);
        self.subject_label_logpost(s, i);
        let lse = log_sum_exp(&self.scratch_k);
        self.scratch_k.iter().map(|v| (v - lse).exp()).collect()
    }

    /// `P(H_ij = l | G_i = k, rest)` for gap `g`.
    pub fn sublabel_probabilities(&mut self, s: &ChainState, g: usize) -> Vec<f64> {
        let i = self.data.gap_subject[g];
        self.prepare_label_cache(s);
        self.prepare_subject(s, i);
        let mut lt = vec![0.0; self.l];
        self.nested_logdens(self.gap_value(s, g), self.gap_features(g), s.g[i], &mut lt);
        let lse = log_sum_exp(&lt);
        lt.iter().map(|v| (v - lse).exp()).collect()
    }

    /// `G_i` with the nested labels marginalised, then every `H_ij | G_i`.
    pub fn update_labels<R: Rng + ?Sized>(&mut self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let d = self.data;
        self.prepare_label_cache(s);
        for i in 0..d.n {
            self.prepare_subject(s, i);
            if self.k == 1 {
                s.g[i] = 0;
            } else {
                self.subject_label_logpost(s, i);
                s.g[i] = sample_categorical_log(&self.scratch_k, rng)
                    .map_err(|e| Error::numerical(format!("subject {i} labels: {e}")))?;
            }
            let k = s.g[i];
            if self.l == 1 {
                for g in d.gaps_of(i) {
                    s.h[g] = 0;
                }
                continue;
            }
            let mut lt = std::mem::take(&mut self.scratch_l);
            for g in d.gaps_of(i) {
                self.nested_logdens(self.gap_value(s, g), self.gap_features(g), k, &mut lt);
                s.h[g] = sample_categorical_log(&lt, rng)?;
            }
            self.scratch_l = lt;
        }
        Ok(())
    }

    /// Stick fractions of both layers given the labels; the last fraction of
    /// each layer is fixed at one.
    pub fn update_weights<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let (k, l) = (self.k, self.l);
        let mut n_k = vec![0usize; k];
        for &g in &s.g {
            n_k[g] += 1;
        }
        draw_sticks(&mut s.v_phi, &n_k, s.alpha_phi, rng)?;
        let mut m = vec![0usize; k * l];
        for (gi, &h) in s.h.iter().enumerate() {
            let kk = s.g[self.data.gap_subject[gi]];
            m[kk * l + h] += 1;
        }
        for kk in 0..k {
            let alpha = s.alpha_theta[kk];
            draw_sticks(&mut s.v_theta[kk * l..(kk + 1) * l], &m[kk * l..(kk + 1) * l], alpha, rng)?;
        }
        s.refresh_weights();
        Ok(())
    }

    /// `alpha ~ Ga(a + K - 1, b - Σ_{k<K} ln(1 - v_k))` for each layer.
    pub fn update_concentrations<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let (a, b) = (self.hp.a_alpha, self.hp.b_alpha);
        s.alpha_phi = concentration_draw(a, b, &s.v_phi, rng)?;
        for kk in 0..self.k {
            let v = &s.v_theta[kk * self.l..(kk + 1) * self.l];
            s.alpha_theta[kk] = concentration_draw(a, b, v, rng)?;
        }
        Ok(())
    }

    fn draw_survival_prior<R: Rng + ?Sized>(&self, s: &mut ChainState, k: usize, rng: &mut R) -> Result<()> {
        s.tau2[k] = sample_inverse_gamma(self.hp.a_tau, self.hp.b_tau, rng)?;
        let du = self.data.du;
        self.base_u.sample(rng, &mut s.beta_u[k * du..(k + 1) * du]);
        Ok(())
    }

    fn draw_recurrent_prior<R: Rng + ?Sized>(&self, s: &mut ChainState, c: usize, rng: &mut R) -> Result<()> {
        s.sigma2[c] = sample_inverse_gamma(self.hp.a_sigma, self.hp.b_sigma, rng)?;
        let dy = self.data.dy;
        self.base_y.sample(rng, &mut s.beta_y[c * dy..(c + 1) * dy]);
        Ok(())
    }

    fn draw_frailty_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let (e0, e1) = (sample_std_normal(rng), sample_std_normal(rng));
        let l = &self.frailty_chol;
        [
            self.hp.mu_gamma[0] + l[0][0] * e0,
            self.hp.mu_gamma[1] + l[1][0] * e0 + l[1][1] * e1,
        ]
    }

    /// `tau_k² | beta_u,k, rest`; empty clusters draw from the prior.
    pub fn update_tau2<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let mut n = vec![0usize; self.k];
        let mut rss = vec![0.0; self.k];
        for i in 0..self.data.n {
            let k = s.g[i];
            let r = s.imputed_u[i] - self.terminal_mean(s, i, k);
            n[k] += 1;
            rss[k] += r * r;
        }
        for k in 0..self.k {
            let shape = self.hp.a_tau + 0.5 * n[k] as f64;
            let rate = self.hp.b_tau + 0.5 * rss[k];
            s.tau2[k] = sample_inverse_gamma(shape, rate, rng)?;
        }
        Ok(())
    }

    /// `beta_u,k | tau_k², rest`; empty clusters draw from the base measure.
    pub fn update_beta_u<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let du = self.data.du;
        let mut stats = RegressionStats::new(self.k, du);
        for i in 0..self.data.n {
            let k = s.g[i];
            let r = s.imputed_u[i] - s.gamma[k][self.data.z[i] as usize];
            stats.add(k, self.data.xu_row(i), r);
        }
        for k in 0..self.k {
            let out = &mut s.beta_u[k * du..(k + 1) * du];
            if stats.n[k] == 0 {
                self.base_u.sample(rng, out);
                continue;
            }
            let draw = stats.posterior_draw(k, &self.base_u, s.tau2[k], rng)?;
            out.copy_from_slice(&draw);
        }
        Ok(())
    }

    /// `(tau², beta_u)` block: variance given coefficients, then coefficients
    /// given the new variance.
    pub fn update_survival_atoms<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        self.update_tau2(s, rng)?;
        self.update_beta_u(s, rng)
    }

    /// `sigma_{l|k}² | beta_y, rest`; empty cells draw from the prior.
    pub fn update_sigma2<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let cells = self.k * self.l;
        let mut n = vec![0usize; cells];
        let mut rss = vec![0.0; cells];
        for g in 0..self.data.total_gaps() {
            let k = s.g[self.data.gap_subject[g]];
            let c = k * self.l + s.h[g];
            let r = self.gap_value(s, g) - self.gap_mean(s, g, k, c);
            n[c] += 1;
            rss[c] += r * r;
        }
        for c in 0..cells {
            let shape = self.hp.a_sigma + 0.5 * n[c] as f64;
            let rate = self.hp.b_sigma + 0.5 * rss[c];
            s.sigma2[c] = sample_inverse_gamma(shape, rate, rng)?;
        }
        Ok(())
    }

    /// `beta_y,l|k | sigma², rest` with response `Y - psi * gamma`.
    pub fn update_beta_y<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let dy = self.data.dy;
        let cells = self.k * self.l;
        let mut stats = RegressionStats::new(cells, dy);
        for g in 0..self.data.total_gaps() {
            let i = self.data.gap_subject[g];
            let k = s.g[i];
            let c = k * self.l + s.h[g];
            let r = self.gap_value(s, g) - s.psi[c] * s.gamma[k][self.data.z[i] as usize];
            stats.add(c, self.data.xy_row(g), r);
        }
        for c in 0..cells {
            let out = &mut s.beta_y[c * dy..(c + 1) * dy];
            if stats.n[c] == 0 {
                self.base_y.sample(rng, out);
                continue;
            }
            let draw = stats.posterior_draw(c, &self.base_y, s.sigma2[c], rng)?;
            out.copy_from_slice(&draw);
        }
        Ok(())
    }

    pub fn update_recurrent_atoms<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        self.update_sigma2(s, rng)?;
        self.update_beta_y(s, rng)
    }

    /// `gamma_k^0` then `gamma_k^1`, each given the other through the
    /// bivariate-normal prior with correlation `rho`.
    pub fn update_frailties<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let (k, l) = (self.k, self.l);
        // Per (cluster, arm): precision contribution and linear term.
        let mut prec = vec![[0.0f64; 2]; k];
        let mut lin = vec![[0.0f64; 2]; k];
        for i in 0..self.data.n {
            let kk = s.g[i];
            let z = self.data.z[i] as usize;
            let r = s.imputed_u[i] - dot(self.data.xu_row(i), s.beta_u_row(kk));
            prec[kk][z] += 1.0 / s.tau2[kk];
            lin[kk][z] += r / s.tau2[kk];
        }
        for g in 0..self.data.total_gaps() {
            let i = self.data.gap_subject[g];
            let kk = s.g[i];
            let z = self.data.z[i] as usize;
            let c = kk * l + s.h[g];
            let psi = s.psi[c];
            let r = self.gap_value(s, g) - dot(self.data.xy_row(g), s.beta_y_row(c));
            prec[kk][z] += psi * psi / s.sigma2[c];
            lin[kk][z] += psi * r / s.sigma2[c];
        }
        let rho = self.hp.rho;
        let one_m = 1.0 - rho * rho;
        let sd = [self.hp.sigma_gamma0, self.hp.sigma_gamma1];
        let mu = self.hp.mu_gamma;
        for kk in 0..k {
            for z in 0..2 {
                let o = 1 - z;
                let p0 = 1.0 / (one_m * sd[z] * sd[z]);
                let b0 = mu[z] * p0 + rho * (s.gamma[kk][o] - mu[o]) / (one_m * sd[z] * sd[o]);
                let p = p0 + prec[kk][z];
                let b = b0 + lin[kk][z];
                s.gamma[kk][z] = b / p + sample_std_normal(rng) / p.sqrt();
            }
        }
        Ok(())
    }

    /// `psi_{l|k} | rest`, a scalar regression of `Y - x'beta` on `gamma`.
    pub fn update_modulation<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let cells = self.k * self.l;
        let mut prec = vec![0.0; cells];
        let mut lin = vec![0.0; cells];
        for g in 0..self.data.total_gaps() {
            let i = self.data.gap_subject[g];
            let kk = s.g[i];
            let c = kk * self.l + s.h[g];
            let gam = s.gamma[kk][self.data.z[i] as usize];
            let r = self.gap_value(s, g) - dot(self.data.xy_row(g), s.beta_y_row(c));
            prec[c] += gam * gam / s.sigma2[c];
            lin[c] += gam * r / s.sigma2[c];
        }
        let p0 = 1.0 / (self.hp.sigma_psi * self.hp.sigma_psi);
        for c in 0..cells {
            let p = p0 + prec[c];
            let b = self.hp.mu_psi * p0 + lin[c];
            s.psi[c] = b / p + sample_std_normal(rng) / p.sqrt();
        }
        Ok(())
    }
}

/// Per-group `X'X`, `X'r` and counts for the conjugate regression updates.
struct RegressionStats {
    d: usize,
    n: Vec<usize>,
    xtx: Vec<f64>,
    xtr: Vec<f64>,
}

impl RegressionStats {
    fn new(groups: usize, d: usize) -> Self {
        Self {
            d,
            n: vec![0; groups],
            xtx: vec![0.0; groups * d * d],
            xtr: vec![0.0; groups * d],
        }
    }

    fn add(&mut self, group: usize, x: &[f64], r: f64) {
        let d = self.d;
        self.n[group] += 1;
        let m = &mut self.xtx[group * d * d..(group + 1) * d * d];
        for a in 0..d {
            for b in 0..d {
                m[a * d + b] += x[a] * x[b];
            }
        }
        for a in 0..d {
            self.xtr[group * d + a] += x[a] * r;
        }
    }

    /// Draw from `N(P⁻¹ b, s² P⁻¹)` with `P = X'X + s² Σ⁻¹`, `b = X'r + s² Σ⁻¹ μ`.
    fn posterior_draw<R: Rng + ?Sized>(
        &self,
        group: usize,
        base: &GaussianBase,
        scale2: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let d = self.d;
        let xtx = DMatrix::from_row_slice(d, d, &self.xtx[group * d * d..(group + 1) * d * d]);
        let precision = xtx + &base.precision * scale2;
        let linear = DVector::from_column_slice(&self.xtr[group * d..(group + 1) * d]) + &base.precision_mean * scale2;
        let (draw, _) = sample_canonical_gaussian(precision, &linear, scale2, rng)?;
        if draw.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite regression draw"));
        }
        Ok(draw)
    }
}

fn prior_sticks<R: Rng + ?Sized>(v: &mut [f64], alpha: f64, rng: &mut R) -> Result<()> {
    let last = v.len() - 1;
    for (j, vj) in v.iter_mut().enumerate() {
        *vj = if j == last {
            1.0
        } else {
            sample_beta(1.0, alpha, rng)?.clamp(STICK_FLOOR, 1.0 - STICK_FLOOR)
        };
    }
    Ok(())
}

/// `v_j ~ Be(1 + n_j, alpha + Σ_{j' > j} n_j')`, last fraction fixed at one.
fn draw_sticks<R: Rng + ?Sized>(v: &mut [f64], counts: &[usize], alpha: f64, rng: &mut R) -> Result<()> {
    let last = v.len() - 1;
    let mut above: usize = counts.iter().sum();
    for j in 0..v.len() {
        above -= counts[j];
        v[j] = if j == last {
            1.0
        } else {
            sample_beta(1.0 + counts[j] as f64, alpha + above as f64, rng)?.clamp(STICK_FLOOR, 1.0 - STICK_FLOOR)
        };
    }
    Ok(())
}

fn concentration_draw<R: Rng + ?Sized>(a: f64, b: f64, v: &[f64], rng: &mut R) -> Result<f64> {
    let m = v.len() - 1;
    let s: f64 = v[..m].iter().map(|x| (-x).ln_1p()).sum();
    sample_gamma(a + m as f64, b - s, rng)
}
