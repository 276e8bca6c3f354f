//! Scenario files, reproducible ensembles and CSV output on top of
//! `adaptest-core`.
//!
//! [`config`] reads and validates TOML scenarios, [`run`] has one runner per
//! CLI subcommand, [`ensemble`] runs replicate-parallel closed loops with a
//! fixed replicate-to-seed mapping, [`sweep`] builds the cost report and
//! [`output`] writes CSV files with the resolved scenario in a `#` header.

pub mod config;
pub mod ensemble;
pub mod error;
pub mod output;
pub mod run;
pub mod sweep;

pub use config::{Config, Scenario};
pub use error::AppError;
pub use run::{run, Command, Outcome};
