//! Task-incremental training: partitioning classes into tasks, the
//! per-strategy training loop with Adam, evaluation under a known task
//! identity, and whole-sequence runs with a forgetting matrix.

mod adam;
mod run;
mod seeds;
mod state;
mod tasks;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use run::{mean, run_sequence, task_order_ablation, SequenceConfig, SequenceReport};
pub use seeds::{derive_seed, splitmix64, SeedRole};
pub use state::{IncrementalState, StrategyKind, TaskModel};
pub use tasks::{partition_classes, Benchmark, Split, Task, TaskSequence};
pub use train::{accuracy_of, argmax_rows, evaluate, task_features, task_logits, train_task, EpochLog, Selection, TrainConfig, TrainLog};

use crate::datasets::DataError;
use crate::modelzoo::ModelError;
use crate::tensorcore::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TilError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("no gradient for trainable parameter {0}")]
    MissingGradient(String),
    #[error("tasks must be trained in order: expected task {expected}, got {got}")]
    OutOfOrder { expected: usize, got: usize },
    #[error("task {0} has not been trained")]
    UntrainedTask(usize),
    #[error("unknown task {0}")]
    UnknownTask(usize),
    #[error("invalid task partition: {0}")]
    InvalidPartition(String),
    #[error("invalid task order: {0}")]
    InvalidOrder(String),
    #[error("task {task} has {classes} classes but the shared head has {width} neurons and extension is disabled")]
    HeadTooNarrow { task: usize, classes: usize, width: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite while training task {task}")]
    NonFinite { task: usize },
    #[error("task {index} ({name}): {source}")]
    InTask { index: usize, name: String, source: Box<TilError> },
}

impl TilError {
    fn in_task(self, index: usize, name: &str) -> Self {
        match self {
            e @ TilError::InTask { .. } => e,
            e => TilError::InTask { index, name: name.into(), source: Box::new(e) },
        }
    }
}
