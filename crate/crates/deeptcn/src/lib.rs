//! IO companion for `deeptcn-core`: CSV ingestion, dataset preparation,
//! panel and checkpoint file formats, run configuration, the rolling-window
//! evaluation bench, and the command-line interface.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod ingest;
pub mod persist;
pub mod prepare;
pub mod synthetic;

pub use error::{AppError, AppResult};
