//! Declarative network stacks and the two forward compositions: the
//! per-task-classifier baseline `C_t(B₁(x))` and the adjustment network
//! `C₁(F_t(B₁(x)))`.

mod block;
mod forward;
mod head;
mod size;
mod spec;

pub use block::{build_block, extend_classifier, new_head_extension, BlockSnapshot, BlockVars, HeadExtension, Layer, ModelBlock, Parameter};
pub use forward::{forward_baseline, forward_chain, forward_san, ChainVars};
pub use head::{map_task_classes, HeadAssignment, HeadMap};
pub use size::{model_size, ModelSize, BYTES_PER_PARAM};
pub use spec::{infer_shape, ArchitectureSpec, LayerSpec};

use crate::tensorcore::TensorError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("layer {index} is incompatible with its input: {message}")]
    IncompatibleLayer { index: usize, message: String },
    #[error("{stack} layer {index} is incompatible with its input: {message}")]
    IncompatibleStackLayer { stack: String, index: usize, message: String },
    #[error("block {block} expects input {expected:?}, got {got:?}")]
    InputShape { block: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl ModelError {
    fn in_stack(self, stack: &str) -> Self {
        match self {
            ModelError::IncompatibleLayer { index, message } => ModelError::IncompatibleStackLayer { stack: stack.into(), index, message },
            other => other,
        }
    }
}
