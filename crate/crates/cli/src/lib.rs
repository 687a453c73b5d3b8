//! Library half of the `gradtree` binary: config schema, analysis driver,
//! report rendering, and the deterministic oracle checks.
//!
//! Everything the binary does is reachable from here so integration tests
//! can exercise runs without spawning processes.

pub mod checks;
pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{Analysis, ExperimentConfig};
pub use error::{CliError, Result};
pub use run::{run, RunManifest};
