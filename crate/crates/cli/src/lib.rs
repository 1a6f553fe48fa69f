//! Files, configuration and the stage runner around `ocda-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod stages;

pub use config::RunConfig;
pub use error::CliError;
pub use stages::{run_stage, Context, Outcome, Stage};
