//! Config-driven sweeps over `(N, γ, ℓ)` with seeded replicas, written as
//! long-format CSV plus a JSON manifest.

mod config;
mod runner;
mod seed;

pub use config::{parse_config, ExperimentConfig, ExperimentKind, RecordingMode};
pub use runner::{run_experiment, tune_rwm, CellFailure, ResultRow, RunOptions, RunSummary, RwmTuning, CSV_HEADER};
pub use seed::seed_for;
