//! File formats, experiment configuration and the `taskmod` command-line
//! front end for [`taskmod_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datafile;
pub mod error;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{AppError, AppResult};
