//! Experiment runner for preconditioned robust neural posterior estimation.
//!
//! The `prnpe` binary is a thin wrapper over this crate: [`parse_config`]
//! resolves a [`RunConfig`], [`run_experiment`] writes one JSON report per
//! method and replicate plus an aggregate `summary.csv`, and [`plot_report`]
//! renders SVG figures from a report.

pub mod config;
pub mod diagnostics;
pub mod plot;
pub mod run;

pub use config::{parse_config, RunConfig, TaskKind, OUTDIR_ENV};
pub use diagnostics::{dump_designs, pseudo_truth};
pub use plot::plot_report;
pub use run::{read_summary, run_experiment, round_sig, to_rounded_json, ReportFile, RunOutcome, Status, SummaryRow};
