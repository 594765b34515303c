use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GapCovariates};
use crate::error::{Error, Result};

/// Which member of the model family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum ModelVariant {
    /// Enriched dependent DP mixture: nested `K × L` truncation, covariate atoms.
    #[serde(rename = "EDDPM")]
    Eddpm,
    /// Dependent DP mixture: one label layer (`L = 1`), covariate atoms.
    #[serde(rename = "DDPM")]
    Ddpm,
    /// DP mixture: one label layer, atoms carry only the treatment column.
    #[serde(rename = "DPM")]
    Dpm,
    /// Single-cluster linear model with Gaussian frailty.
    #[serde(rename = "LM")]
    Lm,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [ModelVariant::Lm, ModelVariant::Dpm, ModelVariant::Ddpm, ModelVariant::Eddpm];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Eddpm => "EDDPM",
            ModelVariant::Ddpm => "DDPM",
            ModelVariant::Dpm => "DPM",
            ModelVariant::Lm => "LM",
        }
    }

    /// Effective `(K, L)` after applying the variant's reduction.
    pub fn truncation(self, k: usize, l: usize) -> (usize, usize) {
        match self {
            ModelVariant::Eddpm => (k, l),
            ModelVariant::Ddpm | ModelVariant::Dpm => (k, 1),
            ModelVariant::Lm => (1, 1),
        }
    }

    pub fn uses_covariates(self) -> bool {
        !matches!(self, ModelVariant::Dpm)
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EDDPM" => Ok(ModelVariant::Eddpm),
            "DDPM" => Ok(ModelVariant::Ddpm),
            "DPM" => Ok(ModelVariant::Dpm),
            "LM" => Ok(ModelVariant::Lm),
            other => Err(Error::validation(format!("unknown model variant '{other}'"))),
        }
    }
}

/// Prior constants, truncation levels, run length and the cross-world
/// correlation `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// Gamma prior shared by `alpha_phi` and every `alpha_theta|k`.
    pub a_alpha: f64,
    pub b_alpha: f64,
    /// Inverse-gamma prior on the terminal-time kernel variance `tau²`.
    pub a_tau: f64,
    pub b_tau: f64,
    /// Inverse-gamma prior on the gap-time kernel variance `sigma²`.
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// Base-measure mean of `beta_u`; `None` means the zero vector.
    pub mu_beta_u: Option<Vec<f64>>,
    /// Base-measure covariance of `beta_u`; `None` means `beta_prior_var * I`.
    pub sigma_beta_u: Option<Vec<Vec<f64>>>,
    pub mu_beta_y: Option<Vec<f64>>,
    pub sigma_beta_y: Option<Vec<Vec<f64>>>,
    /// Diagonal used when the regression covariances are not given.
    pub beta_prior_var: f64,
    pub mu_gamma: [f64; 2],
    pub sigma_gamma0: f64,
    pub sigma_gamma1: f64,
    /// Cross-world frailty correlation (sensitivity parameter, fixed).
    pub rho: f64,
    pub mu_psi: f64,
    pub sigma_psi: f64,
    /// Truncation level of the top (terminal-event) layer.
    pub k: usize,
    /// Truncation level of the nested (gap-time) layer.
    pub l: usize,
    /// Total sweeps, burn-in included.
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            a_alpha: 2.0,
            b_alpha: 1.0,
            a_tau: 2.0,
            b_tau: 1.0,
            a_sigma: 2.0,
            b_sigma: 1.0,
            mu_beta_u: None,
            sigma_beta_u: None,
            mu_beta_y: None,
            sigma_beta_y: None,
            beta_prior_var: 9.0,
            mu_gamma: [0.0, 0.0],
            sigma_gamma0: 3.0,
            sigma_gamma1: 3.0,
            rho: 0.5,
            mu_psi: 0.0,
            sigma_psi: 3.0,
            k: 30,
            l: 30,
            n_iter: 50_000,
            n_burnin: 40_000,
            thin: 10,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("beta_prior_var", self.beta_prior_var),
            ("sigma_gamma0", self.sigma_gamma0),
            ("sigma_gamma1", self.sigma_gamma1),
            ("sigma_psi", self.sigma_psi),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::validation(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if self.k == 0 || self.l == 0 {
            return Err(Error::validation("truncation levels must be at least 1"));
        }
        if self.thin == 0 || self.n_burnin >= self.n_iter {
            return Err(Error::validation("need thin >= 1 and n_burnin < n_iter"));
        }
        Ok(())
    }

    /// Frailty base-measure covariance with correlation `rho`.
    pub fn frailty_cov(&self) -> [[f64; 2]; 2] {
        let (s0, s1) = (self.sigma_gamma0, self.sigma_gamma1);
        let c = self.rho * s0 * s1;
        [[s0 * s0, c], [c, s1 * s1]]
    }

    pub(crate) fn gaussian_prior(
        mean: &Option<Vec<f64>>,
        cov: &Option<Vec<Vec<f64>>>,
        diag: f64,
        dim: usize,
        what: &str,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let mu = match mean {
            Some(m) if m.len() != dim => {
                return Err(Error::validation(format!("{what} mean has length {}, expected {dim}", m.len())))
            }
            Some(m) => m.clone(),
            None => vec![0.0; dim],
        };
        let sigma = match cov {
            Some(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::validation(format!("{what} covariance must be {dim}x{dim}")));
                }
                DMatrix::from_fn(dim, dim, |r, c| rows[r][c])
            }
            None => DMatrix::<f64>::identity(dim, dim) * diag,
        };
        Ok((mu, sigma))
    }
}

/// How subject and gap design rows are laid out for a variant.
///
/// Terminal rows are `(x, z)`; gap rows are `(x, v_j, z)`. Without
/// covariates both collapse to `(z)`. The treatment column is always last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Design {
    pub p: usize,
    pub gap_covariates: GapCovariates,
    pub include_covariates: bool,
}

impl Design {
    pub fn new(p: usize, gap_covariates: GapCovariates, variant: ModelVariant) -> Self {
        Self {
            p,
            gap_covariates,
            include_covariates: variant.uses_covariates(),
        }
    }

    pub fn terminal_dim(&self) -> usize {
        if self.include_covariates {
            self.p + 1
        } else {
            1
        }
    }

    pub fn gap_dim(&self) -> usize {
        if self.include_covariates {
            self.p + self.gap_covariates.dim() + 1
        } else {
            1
        }
    }

    pub fn terminal_row(&self, x: &[f64], z: u8, out: &mut [f64]) {
        if self.include_covariates {
            out[..self.p].copy_from_slice(x);
        }
        *out.last_mut().expect("non-empty design") = f64::from(z);
    }

    /// Row for the `j`-th gap (1-based).
    pub fn gap_row(&self, x: &[f64], j: usize, z: u8, out: &mut [f64]) {
        if self.include_covariates {
            out[..self.p].copy_from_slice(x);
            self.gap_covariates.write_features(j, &mut out[self.p..self.p + self.gap_covariates.dim()]);
        }
        *out.last_mut().expect("non-empty design") = f64::from(z);
    }
}

/// Dataset laid out for the sampler: flat design matrices and gap arrays.
///
/// Gap `gap_start[i]..gap_start[i + 1]` belong to subject `i`; the last of
/// them is the open (censored) gap whose stored value is its lower bound.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub n: usize,
    pub design: Design,
    pub du: usize,
    pub dy: usize,
    pub xu: Vec<f64>,
    pub covariates: Vec<Vec<f64>>,
    pub z: Vec<u8>,
    /// `log followup`; exact for deaths, lower bound for censored subjects.
    pub log_followup: Vec<f64>,
    pub censored: Vec<bool>,
    pub gap_start: Vec<usize>,
    pub xy: Vec<f64>,
    /// Observed log gap; for open gaps the censoring bound `log(followup - T_N)`.
    pub y: Vec<f64>,
    pub gap_subject: Vec<usize>,
}

impl ModelData {
    pub fn new(dataset: &Dataset, variant: ModelVariant) -> Result<Self> {
        let design = Design::new(dataset.covariate_dim, dataset.gap_covariates, variant);
        let (du, dy) = (design.terminal_dim(), design.gap_dim());
        let gaps = dataset.gaps()?;
        let n = dataset.len();
        let total = dataset.total_events() + n;
        let mut out = ModelData {
            n,
            design,
            du,
            dy,
            xu: vec![0.0; n * du],
            covariates: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            log_followup: Vec::with_capacity(n),
            censored: Vec::with_capacity(n),
            gap_start: Vec::with_capacity(n + 1),
            xy: vec![0.0; total * dy],
            y: Vec::with_capacity(total),
            gap_subject: Vec::with_capacity(total),
        };
        for (i, (s, g)) in dataset.subjects.iter().zip(&gaps).enumerate() {
            design.terminal_row(&s.covariates, s.treatment, &mut out.xu[i * du..(i + 1) * du]);
            out.covariates.push(s.covariates.clone());
            out.z.push(s.treatment);
            out.log_followup.push(g.log_terminal);
            out.censored.push(s.censored);
            out.gap_start.push(out.y.len());
            let values = g.log_gaps.iter().copied().chain(std::iter::once(g.open_gap_lower_bound));
            for (j, y) in values.enumerate() {
                let gi = out.y.len();
                design.gap_row(&s.covariates, j + 1, s.treatment, &mut out.xy[gi * dy..(gi + 1) * dy]);
                out.y.push(y);
                out.gap_subject.push(i);
            }
        }
        out.gap_start.push(out.y.len());
        Ok(out)
    }

    pub fn total_gaps(&self) -> usize {
        self.y.len()
    }

    pub fn gaps_of(&self, i: usize) -> std::ops::Range<usize> {
        self.gap_start[i]..self.gap_start[i + 1]
    }

    pub fn open_gap(&self, i: usize) -> usize {
        self.gap_start[i + 1] - 1
    }

    pub fn n_events(&self, i: usize) -> usize {
        self.gap_start[i + 1] - self.gap_start[i] - 1
    }

    pub fn xu_row(&self, i: usize) -> &[f64] {
        &self.xu[i * self.du..(i + 1) * self.du]
    }

    pub fn xy_row(&self, g: usize) -> &[f64] {
        &self.xy[g * self.dy..(g + 1) * self.dy]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
