//! Truncated blocked Gibbs sampler for the enriched dependent DP mixture and
//! its reduced comparators.

mod model;
mod sampler;
mod state;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use model::{Design, Hyperparameters, ModelData, ModelVariant};
pub use sampler::{GibbsSampler, STICK_FLOOR};
pub use state::{stick_weights, ChainState};

use crate::error::{Error, Result};
use crate::kernel::RngStream;

/// Version tag written into every draw record.
pub const DRAW_SCHEMA_VERSION: u32 = 1;

/// Fraction of retained draws allowed to touch the truncation level.
pub const TRUNCATION_ALARM_FRACTION: f64 = 0.01;

/// Growth factor applied to a truncation level that raised the alarm.
pub const TRUNCATION_GROWTH: f64 = 1.5;

pub const MAX_ESCALATIONS: usize = 3;

/// Leading burn-in sweeps run with the censored imputations held at their
/// starting values (see [`GibbsSampler::warmup_sweep`]).
pub const WARMUP_SWEEPS: usize = 100;

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraw {
    pub schema_version: u32,
    pub variant: ModelVariant,
    /// Sweep index (0-based, burn-in included) that produced the draw.
    pub iteration: usize,
    #[serde(flatten)]
    pub state: ChainState,
}

/// Receives retained draws as the chain produces them.
pub trait DrawSink {
    fn accept(&mut self, draw: &PosteriorDraw) -> Result<()>;

    /// Discards everything accepted so far (used when a run is restarted
    /// with a larger truncation).
    fn reset(&mut self) -> Result<()>;
}

impl DrawSink for Vec<PosteriorDraw> {
    fn accept(&mut self, draw: &PosteriorDraw) -> Result<()> {
        self.push(draw.clone());
        Ok(())
    }

    fn reset(&mut self) -> Result<()> {
        self.clear();
        Ok(())
    }
}

/// Writes draws as JSON lines, one record per draw.
pub struct JsonlSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

impl DrawSink for JsonlSink {
    fn accept(&mut self, draw: &PosteriorDraw) -> Result<()> {
        serde_json::to_writer(&mut self.out, draw)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn reset(&mut self) -> Result<()> {
        self.out = BufWriter::new(File::create(&self.path)?);
        Ok(())
    }
}

pub fn read_draws(path: &Path) -> Result<Vec<PosteriorDraw>> {
    let reader = BufReader::new(File::open(path)?);
    let mut draws = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let draw: PosteriorDraw = serde_json::from_str(&line)?;
        if draw.schema_version != DRAW_SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "{}:{}: unsupported draw schema version {}",
                path.display(),
                n + 1,
                draw.schema_version
            )));
        }
        draws.push(draw);
    }
    Ok(draws)
}

/// Per-sweep traces and the truncation check of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDiagnostics {
    pub variant: ModelVariant,
    pub k: usize,
    pub l: usize,
    pub occupied_clusters: Vec<usize>,
    pub occupied_cells: Vec<usize>,
    pub alpha_phi: Vec<f64>,
    pub retained_draws: usize,
    /// Share of retained draws with some `G_i = K` (0 when `K = 1`).
    pub top_saturation: f64,
    /// Share of retained draws with some `H_ij = L` (0 when `L = 1`).
    pub nested_saturation: f64,
    pub truncation_alarm: bool,
    /// Truncation levels tried before this run, oldest first.
    pub escalations: Vec<(usize, usize)>,
}

/// Runs one chain with the stream `(seed, 0)`.
pub fn run_chain(
    data: &ModelData,
    hp: &Hyperparameters,
    variant: ModelVariant,
    seed: u64,
    sink: &mut dyn DrawSink,
) -> Result<TraceDiagnostics> {
    let mut rng = RngStream::new(seed, 0);
    run_chain_with(data, hp, variant, &mut rng, sink)
}

pub fn run_chain_with(
    data: &ModelData,
    hp: &Hyperparameters,
    variant: ModelVariant,
    rng: &mut RngStream,
    sink: &mut dyn DrawSink,
) -> Result<TraceDiagnostics> {
    let mut sampler = GibbsSampler::new(data, hp, variant)?;
    let (k, l) = sampler.truncation();
    let mut state = sampler.init_chain(rng)?;
    let mut diag = TraceDiagnostics {
        variant,
        k,
        l,
        occupied_clusters: Vec::with_capacity(hp.n_iter),
        occupied_cells: Vec::with_capacity(hp.n_iter),
        alpha_phi: Vec::with_capacity(hp.n_iter),
        retained_draws: 0,
        top_saturation: 0.0,
        nested_saturation: 0.0,
        truncation_alarm: false,
        escalations: Vec::new(),
    };
    let (mut top_hits, mut nested_hits) = (0usize, 0usize);
    let warmup = WARMUP_SWEEPS.min(hp.n_burnin);
    for it in 0..hp.n_iter {
        let step = if it < warmup {
            sampler.warmup_sweep(&mut state, rng)
        } else {
            sampler.sweep(&mut state, rng)
        };
        step.map_err(|e| Error::numerical(format!("{variant} sweep {it}: {e}")))?;
        diag.occupied_clusters.push(state.occupied_clusters());
        diag.occupied_cells.push(state.occupied_cells(data));
        diag.alpha_phi.push(state.alpha_phi);
        if it >= hp.n_burnin && (it + 1 - hp.n_burnin).is_multiple_of(hp.thin) {
            if k > 1 && state.g.iter().any(|&g| g == k - 1) {
                top_hits += 1;
            }
            if l > 1 && state.h.iter().any(|&h| h == l - 1) {
                nested_hits += 1;
            }
            diag.retained_draws += 1;
            sink.accept(&PosteriorDraw {
                schema_version: DRAW_SCHEMA_VERSION,
                variant,
                iteration: it,
                state: state.clone(),
            })?;
        }
    }
    let r = diag.retained_draws.max(1) as f64;
    diag.top_saturation = top_hits as f64 / r;
    diag.nested_saturation = nested_hits as f64 / r;
    diag.truncation_alarm =
        diag.top_saturation > TRUNCATION_ALARM_FRACTION || diag.nested_saturation > TRUNCATION_ALARM_FRACTION;
    Ok(diag)
}

/// Runs a chain and, while the truncation alarm fires, restarts it with the
/// offending level grown by [`TRUNCATION_GROWTH`] (at most
/// [`MAX_ESCALATIONS`] times). The sink holds the draws of the final run.
pub fn run_chain_escalating(
    data: &ModelData,
    hp: &Hyperparameters,
    variant: ModelVariant,
    seed: u64,
    sink: &mut dyn DrawSink,
) -> Result<TraceDiagnostics> {
    let mut hp = hp.clone();
    let mut tried = Vec::new();
    loop {
        let mut diag = run_chain(data, &hp, variant, seed, sink)?;
        diag.escalations = tried.clone();
        if !diag.truncation_alarm || tried.len() == MAX_ESCALATIONS {
            return Ok(diag);
        }
        tried.push((diag.k, diag.l));
        if diag.top_saturation > TRUNCATION_ALARM_FRACTION {
            hp.k = (hp.k as f64 * TRUNCATION_GROWTH).ceil() as usize;
        }
        if diag.nested_saturation > TRUNCATION_ALARM_FRACTION {
            hp.l = (hp.l as f64 * TRUNCATION_GROWTH).ceil() as usize;
        }
        sink.reset()?;
    }
}
