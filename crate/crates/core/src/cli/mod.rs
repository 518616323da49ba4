//! Configuration-driven runs, reports and artifacts.

pub mod config;
pub mod manifest;
pub mod report;
pub mod run;
pub mod svg;

pub use config::{ExperimentKind, RunConfig};
pub use report::{compare_reports, Report};
pub use run::{execute, simulate, Artifacts, OutputFormat, RunOptions, RunOutcome};
