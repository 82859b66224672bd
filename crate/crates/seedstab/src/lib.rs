//! File formats, the multi-seed experiment runner and the command-line
//! front end for `seedstab-core`.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod dataset;
mod error;
pub mod experiment;
pub mod surface;

pub use config::{parse_seeds, RunConfig};
pub use error::{HarnessError, Result};
pub use experiment::{run_multiseed, run_report, run_single, RunReport};
