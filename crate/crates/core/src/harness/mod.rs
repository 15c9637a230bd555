//! Training, evaluation, checkpoints and experiment tables.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod experiments;
pub mod presets;
pub mod schedule;
pub mod train;

pub use checkpoint::{BestRecord, Checkpoint, CHECKPOINT_VERSION};
pub use config::{OptimizerConfig, TrainConfig};
pub use eval::{evaluate, evaluate_samples, evaluate_with, render_prediction, EvalOptions, Evaluation, RenderMode};
pub use experiments::{
    ablate_decoder, count_parameters, format_ablation, format_sweep, sweep_tau_lambda, AblationRow, SweepRow,
    ABLATIONS, DEFAULT_GRID,
};
pub use schedule::CosineSchedule;
pub use train::{
    epoch_order, flip_sample, planned_steps, train, train_manifest, train_with_text, TrainOutcome, TrainReport,
};
