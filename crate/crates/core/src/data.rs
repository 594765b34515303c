//! Observed-data types, CSV ingestion and the log-scale gap representation.
//!
//! A subject contributes a follow-up time, a death/censoring flag, a binary
//! treatment, baseline covariates and the (strictly increasing) times of its
//! recurrent events. Gap times are successive differences with `T_0 = 0`; the
//! gap that is still open at the end of follow-up is always present and is
//! right-censored at `log(followup - last_event)`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaps shorter than this (in days) are floored before taking logs.
pub const MIN_GAP_DAYS: f64 = 1e-8;

/// Shift applied by `--jitter-ties` to events tied with follow-up end.
pub const TIE_JITTER_DAYS: f64 = 1e-6;

/// Scale of the default event-index gap covariate (`j / 10`).
pub const EVENT_INDEX_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    /// Last follow-up time in days.
    pub followup_time: f64,
    pub death_observed: bool,
    pub censored: bool,
    pub treatment: u8,
    pub covariates: Vec<f64>,
    /// Recurrent event times in days, strictly increasing, all `< followup_time`.
    pub event_times: Vec<f64>,
}

impl SubjectRecord {
    pub fn n_events(&self) -> usize {
        self.event_times.len()
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.id;
        if !(self.followup_time.is_finite() && self.followup_time > 0.0) {
            return Err(Error::validation(format!(
                "subject {id}: follow-up time must be positive and finite"
            )));
        }
        if self.death_observed == self.censored {
            return Err(Error::validation(format!(
                "subject {id}: exactly one of death_observed/censored must hold"
            )));
        }
        if self.treatment > 1 {
            return Err(Error::validation(format!("subject {id}: treatment must be 0 or 1")));
        }
        if self.covariates.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation(format!("subject {id}: non-finite covariate")));
        }
        let mut prev = 0.0;
        for &t in &self.event_times {
            if !(t.is_finite() && t > prev) {
                return Err(Error::validation(format!(
                    "subject {id}: event times must be positive and strictly increasing (got {t} after {prev})"
                )));
            }
            prev = t;
        }
        if prev >= self.followup_time && !self.event_times.is_empty() {
            return Err(Error::validation(format!(
                "subject {id}: event at {prev} is not strictly before follow-up end {}",
                self.followup_time
            )));
        }
        Ok(())
    }
}

/// Which time-indexed covariates `V_ij` accompany each gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GapCovariates {
    /// Single feature `j / 10` where `j` is the 1-based gap index.
    #[default]
    EventIndex,
    None,
}

impl GapCovariates {
    pub fn dim(self) -> usize {
        match self {
            GapCovariates::EventIndex => 1,
            GapCovariates::None => 0,
        }
    }

    /// Covariates for the `j`-th gap (1-based).
    pub fn features(self, j: usize) -> Vec<f64> {
        match self {
            GapCovariates::EventIndex => vec![j as f64 * EVENT_INDEX_SCALE],
            GapCovariates::None => Vec::new(),
        }
    }

    pub fn write_features(self, j: usize, out: &mut [f64]) {
        if let GapCovariates::EventIndex = self {
            out[0] = j as f64 * EVENT_INDEX_SCALE;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRepresentation {
    /// `log W_ij` for the observed gaps `j = 1..N_i`.
    pub log_gaps: Vec<f64>,
    /// `log(followup - T_iN_i)`, the censoring bound of gap `N_i + 1`.
    pub open_gap_lower_bound: f64,
    /// `log followup`; exact when death is observed, a lower bound otherwise.
    pub log_terminal: f64,
    /// `V_ij` for `j = 1..N_i + 1` (the open gap included).
    pub event_index_covariates: Vec<Vec<f64>>,
}

/// Derives log gap times for one subject.
pub fn derive_gaps(record: &SubjectRecord, gap_covariates: GapCovariates) -> Result<GapRepresentation> {
    record.validate()?;
    let mut prev = 0.0;
    let mut log_gaps = Vec::with_capacity(record.event_times.len());
    for &t in &record.event_times {
        log_gaps.push((t - prev).max(MIN_GAP_DAYS).ln());
        prev = t;
    }
    let open = record.followup_time - prev;
    if open < MIN_GAP_DAYS {
        return Err(Error::validation(format!(
            "subject {}: open gap {open:e} days is below the {MIN_GAP_DAYS:e} floor",
            record.id
        )));
    }
    let n = record.event_times.len();
    Ok(GapRepresentation {
        log_gaps,
        open_gap_lower_bound: open.ln(),
        log_terminal: record.followup_time.ln(),
        event_index_covariates: (1..=n + 1).map(|j| gap_covariates.features(j)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<SubjectRecord>,
    /// Baseline covariate dimension `p`.
    pub covariate_dim: usize,
    /// Gap covariate dimension `q`.
    pub gap_covariate_dim: usize,
    pub gap_covariates: GapCovariates,
}

impl Dataset {
    pub fn new(subjects: Vec<SubjectRecord>, gap_covariates: GapCovariates) -> Result<Self> {
        let p = subjects.first().map_or(0, |s| s.covariates.len());
        let mut seen = HashSet::new();
        for s in &subjects {
            s.validate()?;
            if s.covariates.len() != p {
                return Err(Error::validation(format!(
                    "subject {}: expected {p} covariates, found {}",
                    s.id,
                    s.covariates.len()
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::validation(format!("duplicate subject id {}", s.id)));
            }
        }
        Ok(Self {
            subjects,
            covariate_dim: p,
            gap_covariate_dim: gap_covariates.dim(),
            gap_covariates,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn total_events(&self) -> usize {
        self.subjects.iter().map(|s| s.event_times.len()).sum()
    }

    pub fn gaps(&self) -> Result<Vec<GapRepresentation>> {
        self.subjects
            .iter()
            .map(|s| derive_gaps(s, self.gap_covariates))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Pull events tied with follow-up end (or with the previous event) apart by 1e-6 days.
    pub jitter_ties: bool,
    pub gap_covariates: GapCovariates,
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::validation(format!("line {line}: non-numeric {what} '{field}'")))
}

fn parse_flag(field: &str, what: &str, line: usize) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::validation(format!("line {line}: {what} must be 0 or 1, got '{other}'"))),
    }
}

/// Reads `subjects.csv` and `events.csv` into a validated [`Dataset`].
pub fn load_dataset(subjects_path: &Path, events_path: &Path, opts: LoadOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(subjects_path)?;
    let header = rdr.headers()?.clone();
    let expected = ["id", "followup_time", "death_observed", "treatment"];
    if header.len() < 4 || header.iter().take(4).ne(expected.iter().copied()) {
        return Err(Error::validation(format!(
            "{}: header must start with id,followup_time,death_observed,treatment",
            subjects_path.display()
        )));
    }
    let p = header.len() - 4;
    let mut subjects = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let id = rec[0].to_string();
        let followup_time = parse_f64(&rec[1], "followup_time", line)?;
        let death = parse_flag(&rec[2], "death_observed", line)? == 1;
        let treatment = parse_flag(&rec[3], "treatment", line)?;
        let covariates = (0..p)
            .map(|c| parse_f64(&rec[4 + c], "covariate", line))
            .collect::<Result<Vec<_>>>()?;
        if index.insert(id.clone(), subjects.len()).is_some() {
            return Err(Error::validation(format!("duplicate subject id {id}")));
        }
        subjects.push(SubjectRecord {
            id,
            followup_time,
            death_observed: death,
            censored: !death,
            treatment,
            covariates,
            event_times: Vec::new(),
        });
    }

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(events_path)?;
    let header = rdr.headers()?.clone();
    if header.len() != 2 || &header[0] != "id" || &header[1] != "event_time" {
        return Err(Error::validation(format!(
            "{}: header must be id,event_time",
            events_path.display()
        )));
    }
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let &i = index
            .get(&rec[0])
            .ok_or_else(|| Error::validation(format!("line {line}: event for unknown subject '{}'", &rec[0])))?;
        let t = parse_f64(&rec[1], "event_time", line)?;
        subjects[i].event_times.push(t);
    }

    for s in &mut subjects {
        s.event_times.sort_by(f64::total_cmp);
        if opts.jitter_ties {
            jitter_ties(s);
        }
    }
    Dataset::new(subjects, opts.gap_covariates)
}

fn jitter_ties(s: &mut SubjectRecord) {
    for j in 1..s.event_times.len() {
        if s.event_times[j] <= s.event_times[j - 1] {
            s.event_times[j] = s.event_times[j - 1] + TIE_JITTER_DAYS;
        }
    }
    // Walk backwards so a tie at follow-up end does not collide with earlier events.
    let mut cap = s.followup_time;
    for t in s.event_times.iter_mut().rev() {
        if *t >= cap {
            *t = cap - TIE_JITTER_DAYS;
        }
        cap = *t;
    }
}

/// Writes `subjects.csv` and `events.csv` into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(File::create(dir.join("subjects.csv"))?);
    write!(f, "id,followup_time,death_observed,treatment")?;
    for c in 1..=dataset.covariate_dim {
        write!(f, ",x{c}")?;
    }
    writeln!(f)?;
    for s in &dataset.subjects {
        write!(f, "{},{},{},{}", s.id, s.followup_time, u8::from(s.death_observed), s.treatment)?;
        for x in &s.covariates {
            write!(f, ",{x}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;

    let mut f = std::io::BufWriter::new(File::create(dir.join("events.csv"))?);
    writeln!(f, "id,event_time")?;
    for s in &dataset.subjects {
        for t in &s.event_times {
            writeln!(f, "{},{t}", s.id)?;
        }
    }
    f.flush()?;
    Ok(())
}
