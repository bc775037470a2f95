//! Configuration, experiment runs, parameter sweeps and file output on top of
//! `fastdiff-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod export;
pub mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use run::{run, RunOutput, RunReport, Verdict};
pub use sweep::{sweep, Axis, SweepReport};
