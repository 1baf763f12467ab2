//! Configuration-driven experiments on top of `samlab-core`: theory tables,
//! training runs, attack evaluations, parallel sweeps and SVG plots, all
//! writing versioned CSVs.

pub mod attack_run;
pub mod config;
pub mod error;
pub mod plot;
pub mod results;
pub mod sweep;
pub mod theory_run;
pub mod train;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
