//! Experiment driver for the self-augmented fine-tuning laboratory.

pub mod config;
pub mod error;
pub mod lab;
pub mod stages;
pub mod sweep;

pub use config::{ExperimentConfig, Regime, SWEEP_RATIOS};
pub use error::{CliError, ErrorReport, Result};
pub use lab::{AuditBundle, Lab, RegimeSummary};
pub use stages::{load_config, Command, RunRecord};
pub use sweep::{SweepReport, SweepRow, TrendRow};
