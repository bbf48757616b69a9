//! Greybox fuzzing over the pathprune interpreter.
//!
//! [`campaign::run_campaign`] drives one campaign in pruning, distance
//! minimization or plain mode. [`metrics::replay`] recomputes evaluation
//! metrics from a saved corpus and [`metrics::compare_reports`] renders
//! side-by-side comparisons.

pub mod campaign;
pub mod distance;
pub mod metrics;
pub mod mutate;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FuzzError {
    #[error("campaign needs at least one seed input")]
    NoSeeds,
    #[error("invalid budget: exec budget {exec} must be at least the per-run budget {per_run}, which must be at least 1")]
    Budget { exec: u64, per_run: u64 },
    #[error("pruning mode requires a pruned program")]
    MissingPruned,
    #[error(transparent)]
    Core(#[from] pathprune_core::Error),
}

pub type Result<T, E = FuzzError> = std::result::Result<T, E>;
