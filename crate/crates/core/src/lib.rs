//! Joint Bayesian nonparametric modelling of recurrent-event gap times and a
//! truncating terminal event.
//!
//! The crate is organised as a pipeline:
//!
//! * [`data`] ingests subject/event tables and derives log-scale gap times.
//! * [`kernel`] holds seeded random streams and the distribution primitives.
//! * [`simulator`] generates mixture-model datasets with known ground truth.
//! * [`gibbs`] runs the truncated blocked Gibbs sampler for the enriched
//!   dependent Dirichlet process mixture and its reduced comparators.
//! * [`estimand`] turns posterior draws into survivor-average recurrence
//!   estimands over a `(t, r)` grid.
//! * [`assessment`] computes LPML/CPO and random-partition diagnostics.
//! * [`runner`] wires everything into config-driven batch commands.

pub mod assessment;
pub mod data;
pub mod error;
pub mod estimand;
pub mod gibbs;
pub mod kernel;
pub mod runner;
pub mod simulator;

pub use error::{Error, Result};
