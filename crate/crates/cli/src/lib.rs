//! Configuration, experiment execution, persistence and report emission on
//! top of `rfac-core`.
//!
//! A run reads an [`ExperimentConfig`], executes one suite ([`Kind`]) and
//! leaves under `<output_dir>/<kind>/` one CSV per `(n, θ)` cell, an
//! aggregate CSV, per-suite tables, a plain-text verdict report and, written
//! last, `manifest.json`.

pub mod config;
pub mod error;
pub mod manifest;
pub mod plots;
pub mod run;

pub use config::{validate_config, ExperimentConfig, Kind, DEFAULT_CONFIG, OUTPUT_DIR_ENV};
pub use error::{exit, CliError, CliResult};
pub use manifest::{RunManifest, Severity, Verdict};
pub use plots::emit_plots;
pub use run::run;
