//! Configured experiment sweeps over `tmlab-core`.

pub mod config;
pub mod plots;
pub mod record;
pub mod run;

pub use config::{ExperimentConfig, GeometrySpec};
pub use record::{summary_csv, RunRecord, Status};
pub use run::{run_experiment, write_outputs, SweepOutcome};
