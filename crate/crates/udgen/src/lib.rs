//! File formats, reports and the command-line front end for `udgen-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod pnm;
pub mod reports;
pub mod tables;

pub use error::{FormatError, Result};
