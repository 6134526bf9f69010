//! Experiment harness for the random-environment walk laboratory:
//! declarative TOML configs, deterministic seed management, JSON reports,
//! and CSV plot-data emission.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiments::run;
pub use report::{emit_plot_data, ExperimentReport};
