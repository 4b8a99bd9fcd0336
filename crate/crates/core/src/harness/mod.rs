//! Experiment harness: run configuration, theorem sweeps, training runs and exports.

pub mod config;
pub mod export;
pub mod run;
pub mod verify;

pub use config::{parse_config, split_override, RunConfig};
pub use export::{export_heatmap, Heatmap, HeatmapFormat};
pub use run::{load_checkpoint, replay, run_experiment, Replay, RunOutputs};
pub use verify::{verify, verify_seed, Sizes, Theorem, VerifyRow, VerifySummary, VERIFY_HEADER};
