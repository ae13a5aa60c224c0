use serde::{Deserialize, Serialize};

use super::ModelBlock;
use crate::tensorcore::Scalar;

/// Bytes per stored parameter in the reported size (32-bit floats).
pub const BYTES_PER_PARAM: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSize {
    pub param_count: usize,
    pub megabytes: f64,
}

impl ModelSize {
    pub fn from_count(param_count: usize) -> Self {
        ModelSize { param_count, megabytes: (param_count * BYTES_PER_PARAM) as f64 / 1e6 }
    }
}

/// Total scalar parameters across `blocks`, and their size in MB (10⁶ bytes).
pub fn model_size<T: Scalar>(blocks: &[&ModelBlock<T>]) -> ModelSize {
    ModelSize::from_count(blocks.iter().map(|b| b.param_count()).sum())
}
