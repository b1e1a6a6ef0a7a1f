//! File formats, bootstrap inference, Monte Carlo studies and the `semicomp`
//! command line on top of `semicomp-core`.

pub mod bootstrap;
pub mod cli;
mod error;
pub mod fitfile;
pub mod pipeline;
pub mod study;
pub mod table;

pub use bootstrap::{bootstrap, bootstrap_with, BootstrapConfig, BootstrapResult, CiMethod, Resample};
pub use error::{Error, Result};
pub use study::{run_study, StudyConfig, StudyOutput, StudySummary};
pub use table::{read_dataset, write_dataset, IngestReport, Schema};
