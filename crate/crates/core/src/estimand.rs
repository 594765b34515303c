//! Survivor-average estimands by g-computation over posterior draws.
//!
//! For each draw, subject `i` keeps its current cluster `G_i`. The survival
//! probability `eta_r(z)` is closed form; the expected count `kappa_t(z)` is
//! a Monte Carlo average over simulated gap sequences. Population averages
//! weight each subject by `eta_r(1) eta_r(0)`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gibbs::{run_chain_escalating, ChainState, Hyperparameters, ModelData, ModelVariant, PosteriorDraw};
use crate::kernel::normal::{std_normal_logcdf, std_normal_logsf, std_normal_sf};
use crate::kernel::stats::quantile;
use crate::kernel::{sample_categorical, sample_std_normal, RngStream};

/// Cap on simulated events per replicate in `kappa`.
pub const MAX_KAPPA_EVENTS: usize = 10_000;

pub const DEFAULT_MC_REPS: usize = 50;

/// Fewest draws accepted by [`summarize`].
pub const MIN_SUMMARY_DRAWS: usize = 10;

/// Smallest always-survivor weight total accepted by [`compute_mu`].
pub const MIN_SURVIVOR_WEIGHT: f64 = 1e-12;

/// Contrast `g(mu1, mu0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Ratio,
    Difference,
}

impl Scale {
    pub fn apply(self, mu1: f64, mu0: f64) -> f64 {
        match self {
            Scale::Ratio => mu1 / mu0,
            Scale::Difference => mu1 - mu0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandGrid {
    pub points: Vec<(f64, f64)>,
    pub scale: Scale,
}

impl EstimandGrid {
    pub fn new(points: Vec<(f64, f64)>, scale: Scale) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::validation("estimand grid is empty"));
        }
        for &(t, r) in &points {
            if !(t > 0.0 && r > 0.0 && t <= r && r.is_finite()) {
                return Err(Error::validation(format!("grid point (t={t}, r={r}) needs 0 < t <= r")));
            }
        }
        Ok(Self { points, scale })
    }

    /// `t, r ∈ {360, 450, ..., 1440}` with `t <= r`.
    pub fn yearly_grid(scale: Scale) -> Self {
        let values: Vec<f64> = (0..13).map(|i| 360.0 + 90.0 * i as f64).collect();
        let mut points = Vec::new();
        for &r in &values {
            for &t in values.iter().filter(|&&t| t <= r) {
                points.push((t, r));
            }
        }
        Self { points, scale }
    }

    fn times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.points.iter().map(|p| p.0).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }
}

/// `Pr(D_i > r | z, x_i, gamma^z)` under subject `i`'s current cluster.
pub fn eta(data: &ModelData, state: &ChainState, i: usize, z: u8, r: f64) -> f64 {
    std_normal_sf(eta_z(data, state, i, z, r))
}

/// `ln eta`; finite exactly when `eta > 0` is representable.
pub fn log_eta(data: &ModelData, state: &ChainState, i: usize, z: u8, r: f64) -> f64 {
    std_normal_logsf(eta_z(data, state, i, z, r))
}

/// `ln(1 - eta)`, finite where `eta` itself rounds to 1.
pub fn log1m_eta(data: &ModelData, state: &ChainState, i: usize, z: u8, r: f64) -> f64 {
    std_normal_logcdf(eta_z(data, state, i, z, r))
}

fn eta_z(data: &ModelData, state: &ChainState, i: usize, z: u8, r: f64) -> f64 {
    let k = state.g[i];
    let mut row = data.xu_row(i).to_vec();
    *row.last_mut().expect("design has a treatment column") = f64::from(z);
    let mean: f64 = row.iter().zip(state.beta_u_row(k)).map(|(a, b)| a * b).sum::<f64>()
        + state.gamma[k][z as usize];
    (r.ln() - mean) / state.tau2[k].sqrt()
}

/// Simulated event counts `N(t)` for every `t` in `times` (sorted), from
/// `mc_reps` gap sequences under arm `z`; returns per-time means and
/// variances of the count.
pub fn kappa_curve<R: Rng + ?Sized>(
    data: &ModelData,
    state: &ChainState,
    i: usize,
    z: u8,
    times: &[f64],
    mc_reps: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if mc_reps == 0 {
        return Err(Error::validation("mc_reps must be at least 1"));
    }
    let horizon = times.last().copied().unwrap_or(0.0);
    let k = state.g[i];
    let l = state.l;
    let weights = state.w_theta_row(k);
    let gam = state.gamma[k][z as usize];
    let x = &data.covariates[i];
    let mut row = vec![0.0; data.dy];
    let mut sum = vec![0.0; times.len()];
    let mut sumsq = vec![0.0; times.len()];
    for _ in 0..mc_reps {
        let mut clock = 0.0;
        let mut count = 0usize;
        let mut next = 0usize;
        loop {
            let cell = k * l + if l == 1 { 0 } else { sample_categorical(weights, rng)? };
            data.design.gap_row(x, count + 1, z, &mut row);
            let mean: f64 =
                row.iter().zip(state.beta_y_row(cell)).map(|(a, b)| a * b).sum::<f64>() + state.psi[cell] * gam;
            let y = mean + state.sigma2[cell].sqrt() * sample_std_normal(rng);
            clock += y.exp();
            while next < times.len() && times[next] < clock {
                sum[next] += count as f64;
                sumsq[next] += (count * count) as f64;
                next += 1;
            }
            if clock > horizon {
                break;
            }
            count += 1;
            if count > MAX_KAPPA_EVENTS {
                return Err(Error::EventCap {
                    subject: i,
                    cap: MAX_KAPPA_EVENTS,
                    horizon,
                });
            }
        }
    }
    let m = mc_reps as f64;
    let means: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let vars = sumsq.iter().zip(&means).map(|(ss, mu)| (ss / m - mu * mu).max(0.0)).collect();
    Ok((means, vars))
}

/// `E[N_i(t) | z, x_i, gamma^z]` by simulation: the number of simulated gaps
/// whose cumulative sum stays at or below `t`, averaged over `mc_reps`.
pub fn kappa<R: Rng + ?Sized>(
    data: &ModelData,
    state: &ChainState,
    i: usize,
    z: u8,
    t: f64,
    mc_reps: usize,
    rng: &mut R,
) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    Ok(kappa_curve(data, state, i, z, &[t], mc_reps, rng)?.0[0])
}

/// `mu^z(t; r) = Σ_i kappa_i η_i(1) η_i(0) / Σ_i η_i(1) η_i(0)`.
pub fn compute_mu<R: Rng + ?Sized>(
    data: &ModelData,
    state: &ChainState,
    z: u8,
    point: (f64, f64),
    mc_reps: usize,
    rng: &mut R,
) -> Result<f64> {
    let (t, r) = point;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..data.n {
        let w = eta(data, state, i, 1, r) * eta(data, state, i, 0, r);
        num += kappa(data, state, i, z, t, mc_reps, rng)? * w;
        den += w;
    }
    if den < MIN_SURVIVOR_WEIGHT {
        return Err(Error::numerical(format!("no always-survivor mass at r = {r}")));
    }
    Ok(num / den)
}

/// Estimands of one draw at every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawEstimands {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub sanr: Vec<f64>,
    pub as_rate: Vec<f64>,
    /// Monte Carlo standard error of `mu0` / `mu1` from the `kappa` simulation.
    pub mc_se_mu0: Vec<f64>,
    pub mc_se_mu1: Vec<f64>,
}

/// Evaluates one draw. Both arms of subject `i` simulate from fresh copies
/// of the child stream `(draw_index, i)` of `root` (common random numbers),
/// so results do not depend on the order in which draws are processed and
/// an arm-symmetric draw gives identical counts in both arms.
pub fn draw_estimands(
    data: &ModelData,
    state: &ChainState,
    draw_index: usize,
    grid: &EstimandGrid,
    mc_reps: usize,
    root: &RngStream,
) -> Result<DrawEstimands> {
    let times = grid.times();
    let m = grid.points.len();
    let t_index: Vec<usize> = grid
        .points
        .iter()
        .map(|p| times.iter().position(|&t| t == p.0).expect("time is on the grid"))
        .collect();
    let mut num = [vec![0.0; m], vec![0.0; m]];
    let mut var = [vec![0.0; m], vec![0.0; m]];
    let mut den = vec![0.0; m];
    let mut den_sq = vec![0.0; m];
    let mut eta_w = vec![0.0; m];
    for i in 0..data.n {
        for (j, p) in grid.points.iter().enumerate() {
            eta_w[j] = eta(data, state, i, 1, p.1) * eta(data, state, i, 0, p.1);
            den[j] += eta_w[j];
            den_sq[j] += eta_w[j] * eta_w[j];
        }
        for z in 0..2u8 {
            let mut rng = root.child(draw_index as u64, i as u64);
            let (means, vars) = kappa_curve(data, state, i, z, &times, mc_reps, &mut rng)?;
            for j in 0..m {
                num[z as usize][j] += means[t_index[j]] * eta_w[j];
                var[z as usize][j] += vars[t_index[j]] / mc_reps as f64 * eta_w[j] * eta_w[j];
            }
        }
    }
    let mut out = DrawEstimands {
        mu0: Vec::with_capacity(m),
        mu1: Vec::with_capacity(m),
        sanr: Vec::with_capacity(m),
        as_rate: Vec::with_capacity(m),
        mc_se_mu0: Vec::with_capacity(m),
        mc_se_mu1: Vec::with_capacity(m),
    };
    for j in 0..m {
        if den[j] < MIN_SURVIVOR_WEIGHT {
            return Err(Error::numerical(format!(
                "draw {draw_index}: no always-survivor mass at r = {}",
                grid.points[j].1
            )));
        }
        let (mu0, mu1) = (num[0][j] / den[j], num[1][j] / den[j]);
        out.mu0.push(mu0);
        out.mu1.push(mu1);
        out.sanr.push(grid.scale.apply(mu1, mu0));
        out.as_rate.push(den[j] / data.n as f64);
        out.mc_se_mu0.push(var[0][j].sqrt() / den[j]);
        out.mc_se_mu1.push(var[1][j].sqrt() / den[j]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q025: quantile(&v, 0.025),
            q975: quantile(&v, 0.975),
        }
    }

    pub fn covers(&self, x: f64) -> bool {
        self.q025 <= x && x <= self.q975
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub t: f64,
    pub r: f64,
    pub mu0: Summary,
    pub mu1: Summary,
    pub sanr: Summary,
    pub as_rate: Summary,
    /// Posterior mean of `ln SANR` (ratio scale) or of the difference.
    pub mean_log_sanr: f64,
    /// Average Monte Carlo standard error of `mu0` and `mu1` across draws.
    pub mc_se_mu0: f64,
    pub mc_se_mu1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandDraws {
    pub grid: EstimandGrid,
    pub draws: Vec<DrawEstimands>,
    pub summary: Vec<PointSummary>,
    /// Indices of posterior draws left out because a simulated event path
    /// hit [`MAX_KAPPA_EVENTS`].
    #[serde(default)]
    pub capped_draws: Vec<usize>,
}

impl EstimandDraws {
    pub fn point(&self, t: f64, r: f64) -> Option<&PointSummary> {
        self.summary.iter().find(|s| s.t == t && s.r == r)
    }

    /// Per-draw values of one grid point.
    pub fn column(&self, t: f64, r: f64, pick: fn(&DrawEstimands) -> &Vec<f64>) -> Option<Vec<f64>> {
        let j = self.grid.points.iter().position(|&p| p == (t, r))?;
        Some(self.draws.iter().map(|d| pick(d)[j]).collect())
    }
}

pub fn summarize(draws: Vec<DrawEstimands>, grid: &EstimandGrid) -> Result<EstimandDraws> {
    if draws.len() < MIN_SUMMARY_DRAWS {
        return Err(Error::validation(format!(
            "need at least {MIN_SUMMARY_DRAWS} draws to summarise, got {}",
            draws.len()
        )));
    }
    let col = |j: usize, f: fn(&DrawEstimands) -> &Vec<f64>| draws.iter().map(|d| f(d)[j]).collect::<Vec<_>>();
    let mut summary = Vec::with_capacity(grid.points.len());
    for (j, &(t, r)) in grid.points.iter().enumerate() {
        let sanr = col(j, |d| &d.sanr);
        let log_sanr: Vec<f64> = match grid.scale {
            Scale::Ratio => sanr.iter().map(|s| s.ln()).collect(),
            Scale::Difference => sanr.clone(),
        };
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        summary.push(PointSummary {
            t,
            r,
            mu0: Summary::of(&col(j, |d| &d.mu0)),
            mu1: Summary::of(&col(j, |d| &d.mu1)),
            sanr: Summary::of(&sanr),
            as_rate: Summary::of(&col(j, |d| &d.as_rate)),
            mean_log_sanr: mean(log_sanr),
            mc_se_mu0: mean(col(j, |d| &d.mc_se_mu0)),
            mc_se_mu1: mean(col(j, |d| &d.mc_se_mu1)),
        });
    }
    Ok(EstimandDraws {
        grid: grid.clone(),
        draws,
        summary,
        capped_draws: Vec::new(),
    })
}

/// Evaluates every draw (in parallel) and summarises. Draws in which some
/// subject's simulated event path runs past the event cap are dropped and
/// listed in `capped_draws`; any other failure aborts.
pub fn estimate(
    data: &ModelData,
    draws: &[PosteriorDraw],
    grid: &EstimandGrid,
    mc_reps: usize,
    seed: u64,
) -> Result<EstimandDraws> {
    let root = RngStream::new(seed, 2);
    let per_draw: Vec<Result<DrawEstimands>> = draws
        .par_iter()
        .enumerate()
        .map(|(d, draw)| draw_estimands(data, &draw.state, d, grid, mc_reps, &root))
        .collect();
    let mut kept = Vec::with_capacity(per_draw.len());
    let mut capped = Vec::new();
    for (d, res) in per_draw.into_iter().enumerate() {
        match res {
            Ok(e) => kept.push(e),
            Err(Error::EventCap { .. }) => capped.push(d),
            Err(e) => return Err(e),
        }
    }
    if !capped.is_empty() {
        eprintln!(
            "warning: {} of {} draw(s) dropped after hitting the {MAX_KAPPA_EVENTS}-event cap",
            capped.len(),
            draws.len()
        );
    }
    let mut out = summarize(kept, grid)?;
    out.capped_draws = capped;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub t: f64,
    pub r: f64,
    /// Sign (-1, 0, 1) of the posterior-mean log SANR at each `rho`.
    pub signs: Vec<i8>,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub rho_grid: Vec<f64>,
    pub fits: Vec<EstimandDraws>,
    pub points: Vec<SensitivityPoint>,
    pub all_stable: bool,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Refits the chain at each `rho` (seed `seeds[j]`, or `seeds[0]` for
/// all) and reports whether the sign of the log-SANR posterior mean is the
/// same across `rho` at each grid point.
pub fn sensitivity_scan(
    dataset: &Dataset,
    hp_base: &Hyperparameters,
    rho_grid: &[f64],
    variant: ModelVariant,
    seeds: &[u64],
    grid: &EstimandGrid,
    mc_reps: usize,
) -> Result<SensitivityReport> {
    if rho_grid.is_empty() || seeds.is_empty() {
        return Err(Error::validation("sensitivity scan needs at least one rho and one seed"));
    }
    if seeds.len() != 1 && seeds.len() != rho_grid.len() {
        return Err(Error::validation("give one seed, or one seed per rho"));
    }
    let data = ModelData::new(dataset, variant)?;
    let mut fits = Vec::with_capacity(rho_grid.len());
    for (j, &rho) in rho_grid.iter().enumerate() {
        if !(rho.abs() < 1.0) {
            return Err(Error::validation(format!("rho = {rho} is outside (-1, 1)")));
        }
        let seed = seeds[if seeds.len() == 1 { 0 } else { j }];
        let hp = Hyperparameters { rho, ..hp_base.clone() };
        let mut draws: Vec<PosteriorDraw> = Vec::new();
        run_chain_escalating(&data, &hp, variant, seed, &mut draws)?;
        fits.push(estimate(&data, &draws, grid, mc_reps, seed)?);
    }
    let points: Vec<SensitivityPoint> = grid
        .points
        .iter()
        .enumerate()
        .map(|(j, &(t, r))| {
            let signs: Vec<i8> = fits.iter().map(|f| sign(f.summary[j].mean_log_sanr)).collect();
            let stable = signs.iter().all(|&s| s == signs[0] && s != 0);
            SensitivityPoint { t, r, signs, stable }
        })
        .collect();
    let all_stable = points.iter().all(|p| p.stable);
    Ok(SensitivityReport {
        rho_grid: rho_grid.to_vec(),
        fits,
        points,
        all_stable,
    })
}

/// Writes `rho,t,r,stat,mu0,mu1,sanr,as_rate` rows for each `(rho, fit)`.
pub fn write_estimands_csv(path: &Path, fits: &[(f64, &EstimandDraws)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rho", "t", "r", "stat", "mu0", "mu1", "sanr", "as_rate"])?;
    for (rho, fit) in fits {
        for s in &fit.summary {
            let stats: [(&str, fn(&Summary) -> f64); 3] =
                [("mean", |x| x.mean), ("q025", |x| x.q025), ("q975", |x| x.q975)];
            for (name, f) in stats {
                w.write_record([
                    rho.to_string(),
                    s.t.to_string(),
                    s.r.to_string(),
                    name.to_string(),
                    f(&s.mu0).to_string(),
                    f(&s.mu1).to_string(),
                    f(&s.sanr).to_string(),
                    f(&s.as_rate).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Plain-text stability table for a sensitivity scan.
pub fn write_stability_report(path: &Path, report: &SensitivityReport) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let rhos: Vec<String> = report.rho_grid.iter().map(|r| format!("rho={r}")).collect();
    writeln!(f, "t,r,{},stable", rhos.join(","))?;
    for p in &report.points {
        let signs: Vec<String> = p.signs.iter().map(|s| s.to_string()).collect();
        writeln!(f, "{},{},{},{}", p.t, p.r, signs.join(","), p.stable)?;
    }
    writeln!(f, "all_stable,{}", report.all_stable)?;
    Ok(())
}
