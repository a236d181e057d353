//! Optimization, the training loop, transfer learning, evaluation and
//! reporting.

pub mod adam;
pub mod checkpoint;
pub mod metrics;
pub mod report;
pub mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use metrics::{evaluate, predict_proba, BinaryCounts, ConfusionMatrix, MetricsRecord, Phase};
pub use report::{emit_comparison, parse_comparison, render_comparison, render_summary};
pub use trainer::{fine_tune, pretrain, train, train_with, Control, TrainConfig};
