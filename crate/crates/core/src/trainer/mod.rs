//! Model assembly, objective, optimization and checkpoints.

mod checkpoint;
mod config;
mod data;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Variant};
pub use data::{
    make_batch, Batch, DataShape, Dataset, Instance, Part, PromptKind, PromptRecord, SemBatch, SemVec,
    SemanticFeatures, View, ViewSeq,
};
pub use model::{total_loss, Forward, LossParts, Model};
pub use train::{part_mrr, train, EpochRecord, StopReason, TrainOutcome};
