//! Batch front end: scenario documents in, deterministic CSV/JSON reports out.

mod config;
mod report;
mod run;

pub use config::{parse_scenario, ConfigError, Experiment, Initial, Numerics, Scenario, Study, SweepConfig};
pub use report::{FileDigest, OutputFile, RunManifest};
pub use run::{
    execute, run_scenario, run_suite, RunError, RunOptions, SuiteEntry, SuiteReport, SuiteStatus,
};
