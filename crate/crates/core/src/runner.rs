//! Config-driven batch commands: simulate, fit, estimate, sensitivity,
//! assess and replicate.
//!
//! Every command reads one JSON [`RunConfig`], writes its outputs under an
//! output directory together with a byte copy of the config and a
//! `manifest.json` listing the SHA-256 of every file written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assessment::{compare_partitions, lpml, partition_report, CpoTable, PartitionComparison};
use crate::data::{load_dataset, write_dataset, Dataset, GapCovariates, LoadOptions};
use crate::error::{Error, Result};
use crate::estimand::{
    estimate, sensitivity_scan, write_estimands_csv, write_stability_report, EstimandDraws, EstimandGrid, Scale,
};
use crate::gibbs::{read_draws, run_chain_escalating, Hyperparameters, JsonlSink, ModelData, ModelVariant, PosteriorDraw};
use crate::simulator::{oracle_true_estimands, simulate_dataset, DgpConfig, TrueEstimandTable};

/// Default Monte Carlo replicates per subject and draw for `kappa`.
pub const DEFAULT_MC_REPS: usize = 50;

/// Default subjects for the simulator's ground-truth oracle.
pub const DEFAULT_TRUTH_MC: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Fit,
    Estimate,
    Sensitivity,
    Assess,
    Replicate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Estimate => "estimate",
            Command::Sensitivity => "sensitivity",
            Command::Assess => "assess",
            Command::Replicate => "replicate",
        }
    }
}

/// Location of a `subjects.csv` / `events.csv` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub subjects: PathBuf,
    pub events: PathBuf,
    #[serde(default)]
    pub gap_covariates: GapCovariates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimandConfig {
    /// `(t, r)` pairs in days; `None` means the yearly grid 360..1440 by 90.
    pub points: Option<Vec<(f64, f64)>>,
    pub scale: Scale,
    pub mc_reps: usize,
}

impl Default for EstimandConfig {
    fn default() -> Self {
        Self {
            points: None,
            scale: Scale::Ratio,
            mc_reps: DEFAULT_MC_REPS,
        }
    }
}

impl EstimandConfig {
    pub fn grid(&self) -> Result<EstimandGrid> {
        match &self.points {
            Some(p) => EstimandGrid::new(p.clone(), self.scale),
            None => Ok(EstimandGrid::yearly_grid(self.scale)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicateConfig {
    pub replicates: usize,
    /// Subjects in the ground-truth simulation.
    pub truth_mc: usize,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        Self {
            replicates: 2,
            truth_mc: DEFAULT_TRUTH_MC,
        }
    }
}

/// One run's settings. Relative paths are resolved against the directory
/// of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default)]
    pub jitter_ties: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Input dataset (fit, estimate, sensitivity, assess).
    #[serde(default)]
    pub data: Option<DataPaths>,
    /// Directory holding `draws_<VARIANT>.jsonl` (estimate, assess); defaults
    /// to the output directory.
    #[serde(default)]
    pub draws_dir: Option<PathBuf>,
    #[serde(default)]
    pub dgp: DgpConfig,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default = "default_variants")]
    pub variants: Vec<ModelVariant>,
    #[serde(default)]
    pub estimand: EstimandConfig,
    #[serde(default = "default_rho_grid")]
    pub rho_grid: Vec<f64>,
    /// Ground-truth subjects written by `simulate` (0 skips the oracle).
    #[serde(default = "default_truth_mc")]
    pub truth_mc: usize,
    #[serde(default)]
    pub replicate: ReplicateConfig,
}

fn one() -> usize {
    1
}

fn default_variants() -> Vec<ModelVariant> {
    vec![ModelVariant::Eddpm]
}

fn default_rho_grid() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

fn default_truth_mc() -> usize {
    DEFAULT_TRUTH_MC
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub jitter_ties: bool,
}

impl RunConfig {
    /// Parses a config and resolves its relative paths against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text)?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = cfg.data.as_mut() {
            resolve(&mut d.subjects);
            resolve(&mut d.events);
        }
        if let Some(p) = cfg.draws_dir.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.out.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(t) = o.threads {
            self.threads = t;
        }
        self.jitter_ties |= o.jitter_ties;
    }

    /// Checks what `cmd` needs: referenced input files exist, an output
    /// directory is set, and the model and grid settings are valid.
    pub fn validate(&self, cmd: Command) -> Result<()> {
        if self.out.is_none() {
            return Err(Error::validation("no output directory: set `out` or pass --out"));
        }
        if self.threads == 0 {
            return Err(Error::validation("threads must be at least 1"));
        }
        if matches!(cmd, Command::Fit | Command::Estimate | Command::Sensitivity | Command::Assess) {
            let d = self
                .data
                .as_ref()
                .ok_or_else(|| Error::validation(format!("{} needs a `data` section", cmd.name())))?;
            for p in [&d.subjects, &d.events] {
                if !p.is_file() {
                    return Err(Error::validation(format!("input file {} does not exist", p.display())));
                }
            }
        }
        if matches!(cmd, Command::Estimate | Command::Assess) {
            let dir = self.draws_dir();
            for v in &self.variants {
                let p = draws_path(&dir, *v);
                if !p.is_file() {
                    return Err(Error::validation(format!("draw file {} does not exist", p.display())));
                }
            }
        }
        if matches!(cmd, Command::Simulate | Command::Replicate) {
            self.dgp.validate()?;
        }
        if matches!(cmd, Command::Fit | Command::Sensitivity | Command::Replicate) {
            self.hyperparameters.validate()?;
        }
        if self.variants.is_empty() {
            return Err(Error::validation("variants is empty"));
        }
        if matches!(cmd, Command::Estimate | Command::Sensitivity | Command::Replicate | Command::Simulate) {
            self.estimand.grid()?;
            if self.estimand.mc_reps == 0 {
                return Err(Error::validation("estimand.mc_reps must be at least 1"));
            }
        }
        if cmd == Command::Sensitivity && self.rho_grid.is_empty() {
            return Err(Error::validation("rho_grid is empty"));
        }
        if cmd == Command::Replicate && self.replicate.replicates < 2 {
            return Err(Error::validation("replicate.replicates must be at least 2"));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> &Path {
        self.out.as_deref().expect("validated config has an output directory")
    }

    fn draws_dir(&self) -> PathBuf {
        self.draws_dir.clone().or_else(|| self.out.clone()).unwrap_or_default()
    }

    fn load_data(&self) -> Result<Dataset> {
        let d = self.data.as_ref().ok_or_else(|| Error::validation("missing `data` section"))?;
        load_dataset(
            &d.subjects,
            &d.events,
            LoadOptions {
                jitter_ties: self.jitter_ties,
                gap_covariates: d.gap_covariates,
            },
        )
    }
}

pub fn draws_path(dir: &Path, v: ModelVariant) -> PathBuf {
    dir.join(format!("draws_{}.jsonl", v.name()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Files a command wrote (relative to the output directory) and whether it
/// finished with recorded replicate failures.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failed_replicates: usize,
    pub total_replicates: usize,
}

impl Outcome {
    fn add(&mut self, name: impl Into<PathBuf>) {
        self.files.push(name.into());
    }
}

/// Writes `subjects.csv`, `events.csv`, `latent.json` and (when
/// `truth_mc > 0`) `truth.json` over the estimand grid.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome> {
    let out = cfg.out_dir();
    let mut o = Outcome::default();
    let (ds, latent) = simulate_dataset(&cfg.dgp, cfg.seed)?;
    write_dataset(&ds, out)?;
    o.add("subjects.csv");
    o.add("events.csv");
    write_json(&out.join("latent.json"), &latent)?;
    o.add("latent.json");
    if cfg.truth_mc > 0 {
        let grid = cfg.estimand.grid()?;
        let truth = oracle_true_estimands(&cfg.dgp, &grid.points, cfg.truth_mc, cfg.seed)?;
        write_json(&out.join("truth.json"), &truth)?;
        o.add("truth.json");
    }
    Ok(o)
}

/// Runs one chain per variant (seed `cfg.seed` for each) and writes
/// `draws_<VARIANT>.jsonl` and `trace_<VARIANT>.json`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Outcome> {
    let out = cfg.out_dir();
    let ds = cfg.load_data()?;
    let results: Vec<Result<()>> = cfg
        .variants
        .par_iter()
        .map(|&v| {
            let data = ModelData::new(&ds, v)?;
            let mut sink = JsonlSink::create(&draws_path(out, v))?;
            let diag = run_chain_escalating(&data, &cfg.hyperparameters, v, cfg.seed, &mut sink)?;
            sink.finish()?;
            if diag.truncation_alarm {
                eprintln!(
                    "warning: {v}: truncation alarm still raised at (K, L) = ({}, {})",
                    diag.k, diag.l
                );
            }
            write_json(&out.join(format!("trace_{}.json", v.name())), &diag)
        })
        .collect();
    results.into_iter().collect::<Result<Vec<()>>>()?;
    let mut o = Outcome::default();
    for v in &cfg.variants {
        o.add(format!("draws_{}.jsonl", v.name()));
        o.add(format!("trace_{}.json", v.name()));
    }
    Ok(o)
}

/// Reads each variant's draws and writes `estimands_<VARIANT>.csv` (summary
/// rows) and `estimands_<VARIANT>.json` (per-draw values).
pub fn cmd_estimate(cfg: &RunConfig) -> Result<Outcome> {
    let out = cfg.out_dir();
    let ds = cfg.load_data()?;
    let grid = cfg.estimand.grid()?;
    let dir = cfg.draws_dir();
    let mut o = Outcome::default();
    for &v in &cfg.variants {
        let data = ModelData::new(&ds, v)?;
        let draws = read_draws(&draws_path(&dir, v))?;
        check_variant(&draws, v)?;
        let est = estimate(&data, &draws, &grid, cfg.estimand.mc_reps, cfg.seed)?;
        let csv = format!("estimands_{}.csv", v.name());
        write_estimands_csv(&out.join(&csv), &[(cfg.hyperparameters.rho, &est)])?;
        o.add(csv);
        let json = format!("estimands_{}.json", v.name());
        write_json(&out.join(&json), &est)?;
        o.add(json);
    }
    Ok(o)
}

fn check_variant(draws: &[PosteriorDraw], v: ModelVariant) -> Result<()> {
    match draws.iter().find(|d| d.variant != v) {
        Some(d) => Err(Error::validation(format!("draw file for {v} holds a {} draw", d.variant))),
        None => Ok(()),
    }
}

/// Refits the first listed variant at every `rho` in `rho_grid` and writes
/// `estimands_<VARIANT>.csv` (all `rho`), `stability.csv` and
/// `sensitivity.json`.
pub fn cmd_sensitivity(cfg: &RunConfig) -> Result<Outcome> {
    let out = cfg.out_dir();
    let ds = cfg.load_data()?;
    let grid = cfg.estimand.grid()?;
    let v = cfg.variants[0];
    let report = sensitivity_scan(
        &ds,
        &cfg.hyperparameters,
        &cfg.rho_grid,
        v,
        &[cfg.seed],
        &grid,
        cfg.estimand.mc_reps,
    )?;
    let mut o = Outcome::default();
    let fits: Vec<(f64, &EstimandDraws)> = report.rho_grid.iter().copied().zip(&report.fits).collect();
    let csv = format!("estimands_{}.csv", v.name());
    write_estimands_csv(&out.join(&csv), &fits)?;
    o.add(csv);
    write_stability_report(&out.join("stability.csv"), &report)?;
    o.add("stability.csv");
    write_json(&out.join("sensitivity.json"), &report)?;
    o.add("sensitivity.json");
    Ok(o)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub lpml: BTreeMap<String, f64>,
    pub cpo: BTreeMap<String, CpoTable>,
    pub mean_clusters: BTreeMap<String, f64>,
    /// Pairwise comparison of the first listed variant with each other one.
    pub comparisons: Vec<PartitionComparison>,
}

/// LPML/CPO per variant plus partition summaries: `assessment.json` and
/// `partitions_<VARIANT>.json`.
pub fn cmd_assess(cfg: &RunConfig) -> Result<Outcome> {
    let out = cfg.out_dir();
    let ds = cfg.load_data()?;
    let dir = cfg.draws_dir();
    let mut o = Outcome::default();
    let mut report = AssessmentReport {
        lpml: BTreeMap::new(),
        cpo: BTreeMap::new(),
        mean_clusters: BTreeMap::new(),
        comparisons: Vec::new(),
    };
    let mut partitions = Vec::new();
    for &v in &cfg.variants {
        let data = ModelData::new(&ds, v)?;
        let draws = read_draws(&draws_path(&dir, v))?;
        check_variant(&draws, v)?;
        let table = lpml(&draws, &data)?;
        let parts = partition_report(&draws, &data)?;
        report.lpml.insert(v.name().into(), table.lpml);
        report.cpo.insert(v.name().into(), table);
        report.mean_clusters.insert(v.name().into(), parts.mean_m_n);
        let name = format!("partitions_{}.json", v.name());
        write_json(&out.join(&name), &parts)?;
        o.add(name);
        partitions.push(parts);
    }
    for p in partitions.iter().skip(1) {
        report.comparisons.push(compare_partitions(&partitions[0], p));
    }
    write_json(&out.join("assessment.json"), &report)?;
    o.add("assessment.json");
    Ok(o)
}

/// Seeds of replicate `r` (1-based): the dataset uses `seed + r`, the chain
/// and the estimand simulation `seed + CHAIN_SEED_OFFSET + r`.
pub const CHAIN_SEED_OFFSET: u64 = 1_000_000;

pub fn replicate_seeds(seed: u64, r: usize) -> (u64, u64) {
    (seed + r as u64, seed + CHAIN_SEED_OFFSET + r as u64)
}

/// Posterior summary of one estimand in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub replicate: usize,
    pub variant: ModelVariant,
    pub t: f64,
    pub r: f64,
    /// `mu0`, `mu1` or `sanr`.
    pub estimand: String,
    pub truth: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Bias, RMSE, coverage and average interval length over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub variant: ModelVariant,
    pub t: f64,
    pub r: f64,
    pub estimand: String,
    pub truth: f64,
    pub replicates: usize,
    pub bias: f64,
    pub rmse: f64,
    pub cp: f64,
    pub al: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub variant: ModelVariant,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub truth: TrueEstimandTable,
    pub estimates: Vec<ReplicateEstimate>,
    pub table: Vec<ReplicateRow>,
    pub failures: Vec<ReplicateFailure>,
}

fn fit_and_estimate(
    cfg: &RunConfig,
    r: usize,
    v: ModelVariant,
    truth: &TrueEstimandTable,
    grid: &EstimandGrid,
) -> Result<Vec<ReplicateEstimate>> {
    let (data_seed, chain_seed) = replicate_seeds(cfg.seed, r);
    let (ds, _) = simulate_dataset(&cfg.dgp, data_seed)?;
    let data = ModelData::new(&ds, v)?;
    let mut draws: Vec<PosteriorDraw> = Vec::new();
    run_chain_escalating(&data, &cfg.hyperparameters, v, chain_seed, &mut draws)?;
    let est = estimate(&data, &draws, grid, cfg.estimand.mc_reps, chain_seed)?;
    let mut rows = Vec::new();
    for s in &est.summary {
        let tr = truth
            .get(s.t, s.r)
            .ok_or_else(|| Error::numerical(format!("no truth at ({}, {})", s.t, s.r)))?;
        for (name, summ, truth) in [("mu0", s.mu0, tr.mu0), ("mu1", s.mu1, tr.mu1), ("sanr", s.sanr, tr.sanr)] {
            rows.push(ReplicateEstimate {
                replicate: r,
                variant: v,
                t: s.t,
                r: s.r,
                estimand: name.into(),
                truth,
                mean: summ.mean,
                q025: summ.q025,
                q975: summ.q975,
            });
        }
    }
    Ok(rows)
}

/// Aggregates per-replicate estimates into the Bias/RMSE/CP/AL table, one
/// row per (variant, grid point, estimand) in first-seen order.
pub fn replicate_table(estimates: &[ReplicateEstimate]) -> Vec<ReplicateRow> {
    let mut keys: Vec<(ModelVariant, f64, f64, String)> = Vec::new();
    for e in estimates {
        let key = (e.variant, e.t, e.r, e.estimand.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(variant, t, r, estimand)| {
            let group: Vec<&ReplicateEstimate> = estimates
                .iter()
                .filter(|e| e.variant == variant && e.t == t && e.r == r && e.estimand == estimand)
                .collect();
            let m = group.len() as f64;
            let err: Vec<f64> = group.iter().map(|e| e.mean - e.truth).collect();
            ReplicateRow {
                variant,
                t,
                r,
                truth: group[0].truth,
                replicates: group.len(),
                bias: err.iter().sum::<f64>() / m,
                rmse: (err.iter().map(|x| x * x).sum::<f64>() / m).sqrt(),
                cp: group.iter().filter(|e| e.q025 <= e.truth && e.truth <= e.q975).count() as f64 / m,
                al: group.iter().map(|e| e.q975 - e.q025).sum::<f64>() / m,
                estimand,
            }
        })
        .collect()
}

/// Simulation study: for `r = 1..=R` simulates a dataset, fits every
/// variant and scores posterior summaries against the oracle truth
/// (computed once from the stream `(seed, 1)`). Failed fits are recorded
/// and skipped.
pub fn run_replicates(cfg: &RunConfig) -> Result<ReplicateReport> {
    let grid = cfg.estimand.grid()?;
    let truth = oracle_true_estimands(&cfg.dgp, &grid.points, cfg.replicate.truth_mc, cfg.seed)?;
    let jobs: Vec<(usize, ModelVariant)> = (1..=cfg.replicate.replicates)
        .flat_map(|r| cfg.variants.iter().map(move |&v| (r, v)))
        .collect();
    let results: Vec<Result<Vec<ReplicateEstimate>>> =
        jobs.par_iter().map(|&(r, v)| fit_and_estimate(cfg, r, v, &truth, &grid)).collect();
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for (&(r, v), res) in jobs.iter().zip(results) {
        match res {
            Ok(rows) => estimates.extend(rows),
            Err(e) => {
                eprintln!("warning: replicate {r} {v} failed: {e}");
                failures.push(ReplicateFailure {
                    replicate: r,
                    variant: v,
                    error: e.to_string(),
                });
            }
        }
    }
    let table = replicate_table(&estimates);
    Ok(ReplicateReport {
        truth,
        estimates,
        table,
        failures,
    })
}

fn write_replicate_table(path: &Path, rows: &[ReplicateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variant", "t", "r", "estimand", "truth", "replicates", "bias", "rmse", "cp", "al"])?;
    for row in rows {
        w.write_record([
            row.variant.name().to_string(),
            row.t.to_string(),
            row.r.to_string(),
            row.estimand.clone(),
            row.truth.to_string(),
            row.replicates.to_string(),
            row.bias.to_string(),
            row.rmse.to_string(),
            row.cp.to_string(),
            row.al.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `replicate_table.csv`, `replicates.json` (every per-replicate
/// estimate, the truth and failures).
pub fn cmd_replicate(cfg: &RunConfig) -> Result<Outcome> {
    let out = cfg.out_dir();
    let report = run_replicates(cfg)?;
    write_replicate_table(&out.join("replicate_table.csv"), &report.table)?;
    write_json(&out.join("replicates.json"), &report)?;
    let mut o = Outcome::default();
    o.add("replicate_table.csv");
    o.add("replicates.json");
    o.failed_replicates = report.failures.len();
    o.total_replicates = cfg.replicate.replicates * cfg.variants.len();
    Ok(o)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: Command,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Full command: loads and validates the config, applies overrides, runs
/// the command on a pool of `threads` workers, copies the config into the
/// output directory as `config.json` and writes `manifest.json`.
///
/// A replicate study with recorded failures returns
/// [`Error::PartialFailure`] after all outputs are written.
pub fn run(cmd: Command, config_path: &Path, overrides: &Overrides) -> Result<Outcome> {
    let bytes = fs::read(config_path)
        .map_err(|e| Error::validation(format!("cannot read config {}: {e}", config_path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::validation("config is not UTF-8"))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let mut cfg = RunConfig::from_json(text, base)?;
    cfg.apply(overrides);
    cfg.validate(cmd)?;
    let out = cfg.out_dir().to_path_buf();
    fs::create_dir_all(&out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    let mut outcome = pool.install(|| match cmd {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Fit => cmd_fit(&cfg),
        Command::Estimate => cmd_estimate(&cfg),
        Command::Sensitivity => cmd_sensitivity(&cfg),
        Command::Assess => cmd_assess(&cfg),
        Command::Replicate => cmd_replicate(&cfg),
    })?;
    fs::write(out.join("config.json"), &bytes)?;
    outcome.add("config.json");
    let files = outcome
        .files
        .iter()
        .map(|f| {
            Ok(ManifestEntry {
                path: f.display().to_string(),
                sha256: sha256_hex(&fs::read(out.join(f))?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        command: cmd,
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        threads: cfg.threads,
        files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    if outcome.failed_replicates > 0 {
        return Err(Error::PartialFailure {
            failed: outcome.failed_replicates,
            total: outcome.total_replicates,
        });
    }
    Ok(outcome)
}
