//! Batch front end for the `smalldomain` toolkit: simulate, ingest, fit,
//! cross-validate, g-compute and forecast, writing CSV tables, SVG plots and
//! a checksummed `manifest.json` per run.

pub mod args;
pub mod commands;
pub mod error;
pub mod output;
pub mod svg;

pub use args::{Cli, Command};
pub use commands::{run, FORECAST_CAVEAT};
pub use error::{CliError, Result};
