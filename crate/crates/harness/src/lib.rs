//! Experiment orchestration for the clustered neural bandit policy.
//!
//! Loads a TOML [`ExperimentConfig`], runs it over several seeds, and emits
//! per-round CSV logs, per-run summaries and cross-seed aggregates. Grid and
//! sensitivity sweeps reuse the same runner.

pub mod config;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod run;

pub use config::{AlgoSpec, Algorithm, EnvKind, ExperimentConfig, PerturbedConfig};
pub use error::{HarnessError, Result};
pub use grid::{best_of, grid_search, sensitivity_sweep, GridRanges, GridResult, SensitivityRow};
pub use metrics::{compute_reinit_stats, MetricsLog, ReinitStats, RunSummary};
pub use run::{paired_t_test, run_experiment, run_seed, ExperimentResult, PreparedEnv};
