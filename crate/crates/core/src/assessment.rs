//! Predictive model comparison (CPO/LPML) and random-partition diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::gibbs::{ChainState, ModelData, ModelVariant, PosteriorDraw};
use crate::kernel::normal::{log_sum_exp, normal_logpdf, normal_logsf};

/// Fewest draws accepted by [`lpml`].
pub const MIN_LPML_DRAWS: usize = 100;

/// Observed-data log likelihood of subject `i` given the draw, conditional
/// on its top-level label: terminal density (death) or survival
/// (censored) of `log followup`, then each gap with the nested label summed
/// out, the open gap entering through its survival function.
pub fn observed_loglik(data: &ModelData, state: &ChainState, i: usize) -> f64 {
    let k = state.g[i];
    let z = data.z[i] as usize;
    let mean_u: f64 = dot(data.xu_row(i), state.beta_u_row(k)) + state.gamma[k][z];
    let tau = state.tau2[k].sqrt();
    let mut ll = if data.censored[i] {
        normal_logsf(data.log_followup[i], mean_u, tau)
    } else {
        normal_logpdf(data.log_followup[i], mean_u, tau)
    };
    let open = data.open_gap(i);
    let mut terms = vec![0.0; state.l];
    for g in data.gaps_of(i) {
        for (l, t) in terms.iter_mut().enumerate() {
            let c = k * state.l + l;
            let mean = dot(data.xy_row(g), state.beta_y_row(c)) + state.psi[c] * state.gamma[k][z];
            let sd = state.sigma2[c].sqrt();
            let dens = if g == open {
                normal_logsf(data.y[g], mean, sd)
            } else {
                normal_logpdf(data.y[g], mean, sd)
            };
            *t = state.w_theta[c].ln() + dens;
        }
        ll += log_sum_exp(&terms);
    }
    ll
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conditional predictive ordinates and their sum of logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpoTable {
    pub n_draws: usize,
    /// `log CPO_i`; `None` for subjects excluded after a non-finite likelihood.
    pub log_cpo: Vec<Option<f64>>,
    /// Effective sample size of the inverse-likelihood weights per subject.
    pub ess: Vec<f64>,
    pub excluded: Vec<usize>,
    pub lpml: f64,
}

impl CpoTable {
    pub fn cpo(&self, i: usize) -> Option<f64> {
        self.log_cpo[i].map(f64::exp)
    }
}

/// Streaming accumulator of `log Σ_m exp(-ℓ_im)` and `log Σ_m exp(-2 ℓ_im)`.
///
/// Accumulators over disjoint chunks of a draw stream can be merged.
#[derive(Debug, Clone, PartialEq)]
pub struct CpoAccumulator {
    n_draws: usize,
    log_inv: Vec<f64>,
    log_inv_sq: Vec<f64>,
    bad: Vec<bool>,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl CpoAccumulator {
    pub fn new(n: usize) -> Self {
        Self {
            n_draws: 0,
            log_inv: vec![f64::NEG_INFINITY; n],
            log_inv_sq: vec![f64::NEG_INFINITY; n],
            bad: vec![false; n],
        }
    }

    /// Adds one draw given its per-subject log likelihoods.
    pub fn add_logliks(&mut self, ll: &[f64]) {
        self.n_draws += 1;
        for (i, &l) in ll.iter().enumerate() {
            if !l.is_finite() {
                self.bad[i] = true;
                continue;
            }
            self.log_inv[i] = log_add(self.log_inv[i], -l);
            self.log_inv_sq[i] = log_add(self.log_inv_sq[i], -2.0 * l);
        }
    }

    pub fn add_draw(&mut self, data: &ModelData, state: &ChainState) {
        let ll: Vec<f64> = (0..data.n).map(|i| observed_loglik(data, state, i)).collect();
        self.add_logliks(&ll);
    }

    pub fn merge(&mut self, other: &CpoAccumulator) {
        self.n_draws += other.n_draws;
        for i in 0..self.log_inv.len() {
            self.log_inv[i] = log_add(self.log_inv[i], other.log_inv[i]);
            self.log_inv_sq[i] = log_add(self.log_inv_sq[i], other.log_inv_sq[i]);
            self.bad[i] |= other.bad[i];
        }
    }

    pub fn finish(&self) -> CpoTable {
        let ln_m = (self.n_draws as f64).ln();
        let mut log_cpo = Vec::with_capacity(self.log_inv.len());
        let mut ess = Vec::with_capacity(self.log_inv.len());
        let mut excluded = Vec::new();
        for i in 0..self.log_inv.len() {
            let v = -(self.log_inv[i] - ln_m);
            if self.bad[i] || !v.is_finite() {
                excluded.push(i);
                log_cpo.push(None);
                ess.push(0.0);
            } else {
                log_cpo.push(Some(v));
                ess.push((2.0 * self.log_inv[i] - self.log_inv_sq[i]).exp());
            }
        }
        let lpml = log_cpo.iter().flatten().sum();
        CpoTable {
            n_draws: self.n_draws,
            log_cpo,
            ess,
            excluded,
            lpml,
        }
    }
}

/// `CPO_i = (M⁻¹ Σ_m 1 / f(obs_i | draw_m))⁻¹`, `LPML = Σ_i log CPO_i`.
/// Subjects with a non-finite likelihood in any draw are excluded and listed.
pub fn lpml(draws: &[PosteriorDraw], data: &ModelData) -> Result<CpoTable> {
    if draws.len() < MIN_LPML_DRAWS {
        return Err(Error::validation(format!(
            "LPML needs at least {MIN_LPML_DRAWS} draws, got {}",
            draws.len()
        )));
    }
    let mut acc = CpoAccumulator::new(data.n);
    for d in draws {
        acc.add_draw(data, &d.state);
    }
    let table = acc.finish();
    if !table.excluded.is_empty() {
        eprintln!(
            "warning: {} subject(s) excluded from LPML after non-finite likelihoods",
            table.excluded.len()
        );
    }
    Ok(table)
}

/// Log prior probability of a flat partition with block sizes `sizes`
/// under a DP with concentration `alpha`.
pub fn dp_log_eppf(sizes: &[usize], alpha: f64) -> f64 {
    let n: usize = sizes.iter().sum();
    ln_gamma(alpha) - ln_gamma(alpha + n as f64)
        + sizes.len() as f64 * alpha.ln()
        + sizes.iter().map(|&s| ln_gamma(s as f64)).sum::<f64>()
}

/// Log prior probability of a nested partition under the enriched DP with
/// a constant nested concentration. `blocks[j]` lists the sub-block sizes
/// `n_{l|j}` of top-level block `j`.
pub fn edp_log_eppf(blocks: &[Vec<usize>], alpha_phi: f64, alpha_theta: f64) -> f64 {
    let sizes: Vec<usize> = blocks.iter().map(|b| b.iter().sum()).collect();
    let mut lp = dp_log_eppf(&sizes, alpha_phi);
    for b in blocks {
        lp += dp_log_eppf(b, alpha_theta);
    }
    lp
}

/// Partition of one draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawPartition {
    /// Number of occupied top-level clusters `M_n`.
    pub m_n: usize,
    /// Subjects per occupied cluster, largest first.
    pub sizes: Vec<usize>,
    /// Occupied nested cells `M_{n,j}` per cluster (same order as `sizes`).
    pub nested_counts: Vec<usize>,
    /// Gaps per occupied nested cell `n_{l|j}`, largest first within a cluster.
    pub nested_sizes: Vec<Vec<usize>>,
}

pub fn draw_partition(data: &ModelData, state: &ChainState) -> DrawPartition {
    let (k, l) = (state.k, state.l);
    let mut n = vec![0usize; k];
    for &g in &state.g {
        n[g] += 1;
    }
    let mut cells = vec![0usize; k * l];
    for (gi, &h) in state.h.iter().enumerate() {
        cells[state.g[data.gap_subject[gi]] * l + h] += 1;
    }
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..k)
        .filter(|&j| n[j] > 0)
        .map(|j| {
            let mut sub: Vec<usize> = cells[j * l..(j + 1) * l].iter().copied().filter(|&c| c > 0).collect();
            sub.sort_unstable_by(|a, b| b.cmp(a));
            (n[j], sub)
        })
        .collect();
    clusters.sort_by(|a, b| b.cmp(a));
    DrawPartition {
        m_n: clusters.len(),
        sizes: clusters.iter().map(|c| c.0).collect(),
        nested_counts: clusters.iter().map(|c| c.1.len()).collect(),
        nested_sizes: clusters.into_iter().map(|c| c.1).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub variant: ModelVariant,
    pub draws: Vec<DrawPartition>,
    /// Posterior distribution of `M_n` (count of draws per value).
    pub m_n_histogram: BTreeMap<usize, usize>,
    pub mean_m_n: f64,
    /// Cluster sizes pooled over draws (size → number of clusters).
    pub size_histogram: BTreeMap<usize, usize>,
    pub mean_nested_cells: f64,
}

pub fn partition_report(draws: &[PosteriorDraw], data: &ModelData) -> Result<PartitionReport> {
    let first = draws
        .first()
        .ok_or_else(|| Error::validation("partition report needs at least one draw"))?;
    let parts: Vec<DrawPartition> = draws.iter().map(|d| draw_partition(data, &d.state)).collect();
    let mut m_n_histogram = BTreeMap::new();
    let mut size_histogram = BTreeMap::new();
    let mut cells = 0usize;
    for p in &parts {
        *m_n_histogram.entry(p.m_n).or_insert(0) += 1;
        for &s in &p.sizes {
            *size_histogram.entry(s).or_insert(0) += 1;
        }
        cells += p.nested_counts.iter().sum::<usize>();
    }
    let m = parts.len() as f64;
    Ok(PartitionReport {
        variant: first.variant,
        mean_m_n: parts.iter().map(|p| p.m_n as f64).sum::<f64>() / m,
        mean_nested_cells: cells as f64 / m,
        draws: parts,
        m_n_histogram,
        size_histogram,
    })
}

/// Top-level cluster counts of two fits on the same data (e.g. EDDPM vs DPM).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionComparison {
    pub variants: (ModelVariant, ModelVariant),
    pub mean_m_n: (f64, f64),
    pub m_n_histograms: (BTreeMap<usize, usize>, BTreeMap<usize, usize>),
}

pub fn compare_partitions(a: &PartitionReport, b: &PartitionReport) -> PartitionComparison {
    PartitionComparison {
        variants: (a.variant, b.variant),
        mean_m_n: (a.mean_m_n, b.mean_m_n),
        m_n_histograms: (a.m_n_histogram.clone(), b.m_n_histogram.clone()),
    }
}
