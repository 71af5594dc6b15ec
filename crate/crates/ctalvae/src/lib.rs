//! Files, benchmark runner and command line around [`ctalvae_core`].
//!
//! - [`flows`]: flow, label and score CSVs.
//! - [`checkpoint`]: the binary model container.
//! - [`config`]: the JSON run configuration.
//! - [`report`]: the multi-seed benchmark and its `report.json` / `metrics.csv`.
//! - [`cli`]: the `ctalvae` command.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod flows;
pub mod report;

pub use ctalvae_core as core;
pub use error::{AppError, Result};
