//! Momentum-SGD training with plateau learning-rate decay, DSD pruning,
//! checkpoints and the two-stage fine-tuning protocol.

mod checkpoint;
mod config;
mod metrics;
mod optimizer;
mod presets;
mod scheduler;
mod stage;
mod two_stage;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Provenance,
    FORMAT_VERSION, MAGIC,
};
pub use config::{StageKind, TrainStageConfig};
pub use metrics::{metrics_header, metrics_row, write_metrics_csv, EpochMetrics, MetricsLog};
pub use optimizer::{MomentumSgd, OptimizerConfig};
pub use presets::{preset, Preset, PresetName, TOY_CHANNELS, TOY_INPUT};
pub use scheduler::{plateau_step, LrSchedulerState};
pub use stage::{train_stage, StageData, StageFailure, StageOutcome};
pub use two_stage::{
    checkpoint_path, metrics_path, run_stage, run_two_stage, RunContext, TwoStageOutcome,
};
