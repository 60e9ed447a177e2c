//! Command-line pipeline around `cdainv-core`: corpus ingestion and export,
//! artifact formats and the stage runner.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod stages;
pub mod tables;
