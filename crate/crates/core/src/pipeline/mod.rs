//! Two-stage training orchestration, evaluation, published reference scores
//! and synthetic data.

pub mod config;
pub mod data;
pub mod evaluate;
pub mod reference;
pub mod synth;
pub mod train;

pub use config::{DetectorKind, TrainConfig};
pub use data::{Dataset, FrontendConfig};
pub use evaluate::{evaluate, LoadedModel, Predictor};
pub use reference::{emit_comparison_table, ReferenceRow, ReferenceScores, REFERENCE_SCORES};
pub use synth::{generate_synthetic_dataset, SyntheticDataset};
pub use train::{run_stage2, train_stage1, train_stage2};
