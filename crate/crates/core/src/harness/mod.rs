//! Experiment configuration, correlation sweeps, checkpoints and result
//! files.

mod checkpoint;
mod config;
mod results;
mod selftest;
mod sweep;

pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, CheckpointMetadata, FORMAT_VERSION};
pub use config::{
    Architecture, ExperimentConfig, ModelConfig, ScenarioSection, WmmseConfig, CONFIG_VERSION, ENV_OUTPUT_DIR,
    ENV_THREADS,
};
pub use results::{emit_results, emit_traces, read_results, write_plot, EvalRecord, TraceRecord, CSV_HEADER};
pub use selftest::{run_selftest, Check};
pub use sweep::{
    evaluate, evaluate_cell, run_cell, run_sweep, CellData, CellOutcome, Evaluation, Policy, SweepOutput, TrainedModel,
};
