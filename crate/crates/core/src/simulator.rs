//! Mixture-model data generator and Monte Carlo ground truth for the
//! survivor-average estimands.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GapCovariates, SubjectRecord};
use crate::error::{Error, Result};
use crate::kernel::{sample_categorical, sample_std_normal, RngStream};

/// Upper bound on simulated events per subject and world.
pub const MAX_SIMULATED_EVENTS: usize = 10_000;

/// Subjects simulated per independent stream by the ground-truth oracle.
pub const ORACLE_CHUNK: usize = 10_000;

/// Law of the subject frailty pair `(gamma^0, gamma^1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum FrailtyLaw {
    /// `gamma = exp(gamma')`, `gamma' ~ MVN(0, log_variance * [[1, rho], [rho, 1]])`.
    LogNormal { log_variance: f64, rho: f64 },
    /// Every subject gets the same pair.
    Fixed { values: [f64; 2] },
}

/// Parameters of the three-component generating mixture. Variances (not
/// standard deviations) are used for the residual terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub n: usize,
    pub treatment_prob: f64,
    pub alpha_u: f64,
    pub alpha_y: f64,
    /// Terminal-time component weights.
    pub w: Vec<f64>,
    /// Gap-time component weights; drawn independently for every gap.
    pub pi: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub beta_u: Vec<f64>,
    pub beta_y: Vec<f64>,
    pub psi: f64,
    pub residual_var_u: f64,
    pub residual_var_y: f64,
    pub frailty: FrailtyLaw,
    pub censor_min: f64,
    pub censor_max: f64,
    pub gap_covariates: GapCovariates,
}

impl Default for DgpConfig {
    fn default() -> Self {
        let phi1 = [0.2, 0.15, -0.1];
        let theta1 = [0.25, -0.10, -0.15];
        let scaled = |v: &[f64], s: f64| v.iter().map(|x| x * s).collect::<Vec<_>>();
        Self {
            n: 500,
            treatment_prob: 0.5,
            alpha_u: 6.5,
            alpha_y: 5.0,
            w: vec![0.3, 0.4, 0.3],
            pi: vec![0.3, 0.4, 0.3],
            phi: vec![phi1.to_vec(), scaled(&phi1, -0.5), scaled(&phi1, 0.3)],
            theta: vec![theta1.to_vec(), scaled(&theta1, -0.5), scaled(&theta1, 0.3)],
            beta_u: vec![1.0, 0.5, 1.3],
            beta_y: vec![0.5, 0.25, 0.65],
            psi: 0.1,
            residual_var_u: 0.2,
            residual_var_y: 0.2,
            frailty: FrailtyLaw::LogNormal {
                log_variance: 0.2,
                rho: 0.5,
            },
            censor_min: 300.0,
            censor_max: 1000.0,
            gap_covariates: GapCovariates::EventIndex,
        }
    }
}

impl DgpConfig {
    /// Same generator with every treatment coefficient set to zero, so both
    /// arms share one law and every survivor-average ratio equals one.
    pub fn null_effect() -> Self {
        Self {
            beta_u: vec![0.0; 3],
            beta_y: vec![0.0; 3],
            ..Self::default()
        }
    }

    pub fn covariate_dim(&self) -> usize {
        self.phi.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(format!("dgp: {m}")));
        let k = self.w.len();
        let p = self.covariate_dim();
        if k == 0 || self.phi.len() != k || self.beta_u.len() != k {
            return bad("w, phi and beta_u must have one entry per terminal component");
        }
        let m = self.pi.len();
        if m == 0 || self.theta.len() != m || self.beta_y.len() != m {
            return bad("pi, theta and beta_y must have one entry per gap component");
        }
        if self.phi.iter().chain(&self.theta).any(|v| v.len() != p) {
            return bad("all component coefficient vectors need the same length");
        }
        for wts in [&self.w, &self.pi] {
            if wts.iter().any(|x| !(*x >= 0.0)) || (wts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("component weights must be nonnegative and sum to one");
            }
        }
        if !(0.0..=1.0).contains(&self.treatment_prob) {
            return bad("treatment_prob must lie in [0, 1]");
        }
        if !(self.residual_var_u >= 0.0 && self.residual_var_y >= 0.0) {
            return bad("residual variances must be nonnegative");
        }
        if !(self.censor_min > 0.0 && self.censor_max >= self.censor_min) {
            return bad("need 0 < censor_min <= censor_max");
        }
        if let FrailtyLaw::LogNormal { log_variance, rho } = self.frailty {
            if !(log_variance >= 0.0 && rho.abs() <= 1.0) {
                return bad("frailty needs log_variance >= 0 and |rho| <= 1");
            }
        }
        Ok(())
    }

    fn draw_frailty<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        match self.frailty {
            FrailtyLaw::LogNormal { log_variance, rho } => {
                let sd = log_variance.sqrt();
                let e0 = sample_std_normal(rng);
                let e1 = rho * e0 + (1.0 - rho * rho).sqrt() * sample_std_normal(rng);
                [(sd * e0).exp(), (sd * e1).exp()]
            }
            FrailtyLaw::Fixed { values } => values,
        }
    }

    /// Draws the treatment-free part of a subject: covariates, terminal
    /// component, frailties and both potential log death times.
    fn draw_potential<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Potential> {
        let p = self.covariate_dim();
        let x: Vec<f64> = (0..p).map(|_| sample_std_normal(rng)).collect();
        let k = sample_categorical(&self.w, rng)?;
        let gamma = self.draw_frailty(rng);
        let sd = self.residual_var_u.sqrt();
        let base = self.alpha_u + dot(&x, &self.phi[k]);
        let u = [0, 1].map(|z| base + z as f64 * self.beta_u[k] + gamma[z] + sd * sample_std_normal(rng));
        Ok(Potential { x, k, gamma, u })
    }

    /// Event times of world `z` strictly before `horizon`, plus the gap
    /// components used.
    fn draw_events<R: Rng + ?Sized>(
        &self,
        pot: &Potential,
        z: usize,
        horizon: f64,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<usize>)> {
        let sd = self.residual_var_y.sqrt();
        let mut times = Vec::new();
        let mut comps = Vec::new();
        let mut t = 0.0;
        loop {
            let c = sample_categorical(&self.pi, rng)?;
            let y = self.alpha_y
                + dot(&pot.x, &self.theta[c])
                + z as f64 * self.beta_y[c]
                + self.psi * pot.gamma[z]
                + sd * sample_std_normal(rng);
            t += y.exp();
            if t >= horizon {
                return Ok((times, comps));
            }
            if times.len() == MAX_SIMULATED_EVENTS {
                return Err(Error::numerical(format!("more than {MAX_SIMULATED_EVENTS} simulated events")));
            }
            times.push(t);
            comps.push(c);
        }
    }
}

struct Potential {
    x: Vec<f64>,
    k: usize,
    gamma: [f64; 2],
    u: [f64; 2],
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Latent quantities behind one simulated subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSubject {
    pub id: String,
    pub terminal_component: usize,
    /// Component of every observed gap (the open gap excluded).
    pub gap_components: Vec<usize>,
    pub gamma: [f64; 2],
    /// Potential log death times `(U^0, U^1)`.
    pub u: [f64; 2],
    pub censoring_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTruth {
    pub seed: u64,
    pub subjects: Vec<LatentSubject>,
}

/// Simulates `config.n` subjects from the stream `(seed, 0)`.
pub fn simulate_dataset(config: &DgpConfig, seed: u64) -> Result<(Dataset, LatentTruth)> {
    config.validate()?;
    let mut rng = RngStream::new(seed, 0);
    let width = (config.n.max(1) as f64).log10().floor() as usize + 1;
    let mut subjects = Vec::with_capacity(config.n);
    let mut latent = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let pot = config.draw_potential(&mut rng)?;
        let z = usize::from(rng.random::<f64>() < config.treatment_prob);
        let death = pot.u[z].exp();
        let c = config.censor_min + (config.censor_max - config.censor_min) * rng.random::<f64>();
        let followup = death.min(c);
        let (times, comps) = config.draw_events(&pot, z, followup, &mut rng)?;
        let id = format!("s{:0width$}", i + 1);
        subjects.push(SubjectRecord {
            id: id.clone(),
            followup_time: followup,
            death_observed: death <= c,
            censored: death > c,
            treatment: z as u8,
            covariates: pot.x.clone(),
            event_times: times,
        });
        latent.push(LatentSubject {
            id,
            terminal_component: pot.k,
            gap_components: comps,
            gamma: pot.gamma,
            u: pot.u,
            censoring_time: c,
        });
    }
    let dataset = Dataset::new(subjects, config.gap_covariates)?;
    Ok((dataset, LatentTruth { seed, subjects: latent }))
}

/// Ground-truth `mu^0`, `mu^1`, ratio and always-survivor rate at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueEstimand {
    pub t: f64,
    pub r: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub sanr: f64,
    pub as_rate: f64,
    pub se_mu0: f64,
    pub se_mu1: f64,
    /// Delta-method standard error of the ratio.
    pub se_sanr: f64,
    pub as_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueEstimandTable {
    pub seed: u64,
    pub n_mc: usize,
    /// Residual and frailty spreads in the generator are variances.
    pub variance_convention: String,
    pub config: DgpConfig,
    pub rows: Vec<TrueEstimand>,
}

impl TrueEstimandTable {
    pub fn get(&self, t: f64, r: f64) -> Option<&TrueEstimand> {
        self.rows.iter().find(|e| e.t == t && e.r == r)
    }
}

#[derive(Clone)]
struct Moments {
    count: Vec<usize>,
    s0: Vec<f64>,
    s1: Vec<f64>,
    s00: Vec<f64>,
    s11: Vec<f64>,
    s01: Vec<f64>,
}

impl Moments {
    fn new(m: usize) -> Self {
        Self {
            count: vec![0; m],
            s0: vec![0.0; m],
            s1: vec![0.0; m],
            s00: vec![0.0; m],
            s11: vec![0.0; m],
            s01: vec![0.0; m],
        }
    }

    fn merge(mut self, o: &Moments) -> Self {
        for j in 0..self.count.len() {
            self.count[j] += o.count[j];
            self.s0[j] += o.s0[j];
            self.s1[j] += o.s1[j];
            self.s00[j] += o.s00[j];
            self.s11[j] += o.s11[j];
            self.s01[j] += o.s01[j];
        }
        self
    }
}

/// Monte Carlo truth over `grid` of `(t, r)` pairs from `n_mc` subjects
/// followed in both worlds without censoring.
///
/// Subjects are simulated in chunks of [`ORACLE_CHUNK`], chunk `c` on the
/// child stream `(c, 0)` of `(seed, 1)`, and merged in chunk order, so the
/// result does not depend on the number of threads.
pub fn oracle_true_estimands(
    config: &DgpConfig,
    grid: &[(f64, f64)],
    n_mc: usize,
    seed: u64,
) -> Result<TrueEstimandTable> {
    config.validate()?;
    if grid.iter().any(|&(t, r)| !(t >= 0.0 && r >= 0.0 && t <= r)) {
        return Err(Error::validation("grid points need 0 <= t <= r"));
    }
    let horizon = grid.iter().map(|g| g.0).fold(0.0, f64::max);
    let root = RngStream::new(seed, 1);
    let chunks = n_mc.div_ceil(ORACLE_CHUNK);
    let partial: Vec<Result<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = root.child(c as u64, 0);
            let size = ORACLE_CHUNK.min(n_mc - c * ORACLE_CHUNK);
            let mut m = Moments::new(grid.len());
            for _ in 0..size {
                let pot = config.draw_potential(&mut rng)?;
                let d = [pot.u[0].exp(), pot.u[1].exp()];
                let (e0, _) = config.draw_events(&pot, 0, horizon, &mut rng)?;
                let (e1, _) = config.draw_events(&pot, 1, horizon, &mut rng)?;
                for (j, &(t, r)) in grid.iter().enumerate() {
                    if d[0] > r && d[1] > r {
                        let n0 = e0.iter().take_while(|&&x| x <= t).count() as f64;
                        let n1 = e1.iter().take_while(|&&x| x <= t).count() as f64;
                        m.count[j] += 1;
                        m.s0[j] += n0;
                        m.s1[j] += n1;
                        m.s00[j] += n0 * n0;
                        m.s11[j] += n1 * n1;
                        m.s01[j] += n0 * n1;
                    }
                }
            }
            Ok(m)
        })
        .collect();
    let mut total = Moments::new(grid.len());
    for m in partial {
        total = total.merge(&m?);
    }
    let mut rows = Vec::with_capacity(grid.len());
    for (j, &(t, r)) in grid.iter().enumerate() {
        let n = total.count[j];
        if n == 0 {
            return Err(Error::numerical(format!("no always-survivors at r = {r} in {n_mc} draws")));
        }
        let nf = n as f64;
        let (m0, m1) = (total.s0[j] / nf, total.s1[j] / nf);
        let v0 = (total.s00[j] / nf - m0 * m0).max(0.0) / nf;
        let v1 = (total.s11[j] / nf - m1 * m1).max(0.0) / nf;
        let c01 = (total.s01[j] / nf - m0 * m1) / nf;
        let (sanr, se_sanr) = if m0 > 0.0 {
            let var = v1 / (m0 * m0) + m1 * m1 * v0 / m0.powi(4) - 2.0 * m1 * c01 / m0.powi(3);
            (m1 / m0, var.max(0.0).sqrt())
        } else {
            (f64::NAN, f64::NAN)
        };
        rows.push(TrueEstimand {
            t,
            r,
            mu0: m0,
            mu1: m1,
            sanr,
            as_rate: nf / n_mc as f64,
            se_mu0: v0.sqrt(),
            se_mu1: v1.sqrt(),
            se_sanr,
            as_count: n,
        });
    }
    Ok(TrueEstimandTable {
        seed,
        n_mc,
        variance_convention: "residual_var_* and frailty log_variance are variances".into(),
        config: config.clone(),
        rows,
    })
}
