//! Experiment harness for `ipsim-core`: declarative TOML specs, a runner that
//! writes reproducible CSV bundles, and parameter sweeps.

pub mod build;
pub mod error;
pub mod run;
pub mod spec;
pub mod sweep;

pub use error::CliError;
pub use run::{compute, run_experiment, Bundle};
pub use spec::ExperimentSpec;
pub use sweep::sweep;
