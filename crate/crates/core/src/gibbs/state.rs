use serde::{Deserialize, Serialize};

use super::model::ModelData;
use crate::error::{Error, Result};

/// Full state of one chain. Labels are 0-based; per-cell arrays are stored
/// row-major over `(k, l)` so cell `(k, l)` lives at index `k * L + l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub k: usize,
    pub l: usize,
    pub du: usize,
    pub dy: usize,
    /// Top-level label of every subject.
    pub g: Vec<usize>,
    /// Nested label of every gap, in the sampler's flat gap order.
    pub h: Vec<usize>,
    pub v_phi: Vec<f64>,
    pub w_phi: Vec<f64>,
    pub v_theta: Vec<f64>,
    pub w_theta: Vec<f64>,
    pub alpha_phi: f64,
    pub alpha_theta: Vec<f64>,
    pub beta_u: Vec<f64>,
    pub tau2: Vec<f64>,
    pub beta_y: Vec<f64>,
    pub sigma2: Vec<f64>,
    /// `(gamma^0, gamma^1)` per top-level cluster.
    pub gamma: Vec<[f64; 2]>,
    pub psi: Vec<f64>,
    /// Log terminal time: observed for deaths, imputed for censored subjects.
    pub imputed_u: Vec<f64>,
    /// Current value of each subject's censored last gap (log scale).
    pub imputed_open_gap: Vec<f64>,
}

impl ChainState {
    /// A state of the right shape with placeholder values (unit scales and
    /// sticks, zero atoms, every label 0). Not a valid chain state until the
    /// weights are refreshed and imputations set.
    pub fn empty(k: usize, l: usize, du: usize, dy: usize, n: usize, gaps: usize) -> Self {
        Self {
            k,
            l,
            du,
            dy,
            g: vec![0; n],
            h: vec![0; gaps],
            v_phi: vec![1.0; k],
            w_phi: vec![0.0; k],
            v_theta: vec![1.0; k * l],
            w_theta: vec![0.0; k * l],
            alpha_phi: 1.0,
            alpha_theta: vec![1.0; k],
            beta_u: vec![0.0; k * du],
            tau2: vec![1.0; k],
            beta_y: vec![0.0; k * l * dy],
            sigma2: vec![1.0; k * l],
            gamma: vec![[0.0, 0.0]; k],
            psi: vec![0.0; k * l],
            imputed_u: vec![0.0; n],
            imputed_open_gap: vec![0.0; n],
        }
    }

    pub fn beta_u_row(&self, k: usize) -> &[f64] {
        &self.beta_u[k * self.du..(k + 1) * self.du]
    }

    pub fn beta_y_row(&self, cell: usize) -> &[f64] {
        &self.beta_y[cell * self.dy..(cell + 1) * self.dy]
    }

    pub fn w_theta_row(&self, k: usize) -> &[f64] {
        &self.w_theta[k * self.l..(k + 1) * self.l]
    }

    /// Recomputes both weight layers from the stick fractions.
    pub fn refresh_weights(&mut self) {
        stick_weights(&self.v_phi, &mut self.w_phi);
        for k in 0..self.k {
            let range = k * self.l..(k + 1) * self.l;
            stick_weights(&self.v_theta[range.clone()], &mut self.w_theta[range]);
        }
    }

    pub fn occupied_clusters(&self) -> usize {
        let mut seen = vec![false; self.k];
        self.g.iter().for_each(|&g| seen[g] = true);
        seen.iter().filter(|&&b| b).count()
    }

    /// Number of occupied `(k, l)` cells, counting every gap.
    pub fn occupied_cells(&self, data: &ModelData) -> usize {
        let mut seen = vec![false; self.k * self.l];
        for (gi, &h) in self.h.iter().enumerate() {
            seen[self.g[data.gap_subject[gi]] * self.l + h] = true;
        }
        seen.iter().filter(|&&b| b).count()
    }

    /// Structural checks: weights normalised, last stick fixed, scales
    /// positive, labels in range, imputations above their censoring bounds.
    pub fn check_invariants(&self, data: &ModelData) -> Result<()> {
        let fail = |m: String| Err(Error::numerical(m));
        if (self.w_phi.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.v_phi[self.k - 1] != 1.0 {
            return fail("top-level weights are not a distribution".into());
        }
        for k in 0..self.k {
            if (self.w_theta_row(k).iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.v_theta[k * self.l + self.l - 1] != 1.0
            {
                return fail(format!("nested weights of cluster {k} are not a distribution"));
            }
        }
        let scales = self.tau2.iter().chain(&self.sigma2).chain(&self.alpha_theta);
        if !(self.alpha_phi > 0.0) || scales.clone().any(|v| !(v.is_finite() && *v > 0.0)) {
            return fail("non-positive variance or concentration".into());
        }
        if self.g.iter().any(|&g| g >= self.k) || self.h.iter().any(|&h| h >= self.l) {
            return fail("label out of range".into());
        }
        for i in 0..data.n {
            if data.censored[i] {
                if !(self.imputed_u[i] > data.log_followup[i]) {
                    return fail(format!("subject {i}: imputed terminal time below its bound"));
                }
            } else if self.imputed_u[i] != data.log_followup[i] {
                return fail(format!("subject {i}: observed terminal time was altered"));
            }
            if !(self.imputed_open_gap[i] > data.y[data.open_gap(i)]) {
                return fail(format!("subject {i}: imputed open gap below its bound"));
            }
        }
        let all = self.beta_u.iter().chain(&self.beta_y).chain(&self.psi);
        if all.clone().any(|v| !v.is_finite()) || self.gamma.iter().flatten().any(|v| !v.is_finite()) {
            return fail("non-finite atom".into());
        }
        Ok(())
    }
}

/// `w_j = v_j Π_{j' < j} (1 - v_j')`.
pub fn stick_weights(v: &[f64], w: &mut [f64]) {
    let mut rest = 1.0;
    for (vj, wj) in v.iter().zip(w.iter_mut()) {
        *wj = vj * rest;
        rest *= 1.0 - vj;
    }
}
