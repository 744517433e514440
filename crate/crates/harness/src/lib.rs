//! Monte Carlo experiments on top of `mslocal-core`: configuration, sample orchestration,
//! statistics and report files.

pub mod config;
pub mod experiments;
pub mod report;
pub mod stats;

pub use config::{ConfigError, Experiment, ExperimentConfig, Overrides};
pub use report::{render_csv, run_experiment, write_outputs, Report};

/// Code version embedded in every report.
pub const VERSION: &str = concat!("mslocal ", env!("CARGO_PKG_VERSION"));
