//! Front end for the `covol` estimators: tick ingestion and resampling,
//! panel files, pairwise estimation and testing over a stock universe,
//! and heatmap/network reports.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod io;
pub mod report;

pub use cli::{run, Cli};
pub use error::{CliError, CliResult, DataError};
