use super::{BlockVars, HeadExtension, ModelBlock, ModelError};
use crate::tensorcore::{Scalar, Tape, Var};

/// Tape bindings for a chain of blocks.
#[derive(Clone, Debug)]
pub struct ChainVars {
    pub logits: Var,
    /// Input to the last block (the feature map the classifier sees).
    pub features: Var,
    pub blocks: Vec<BlockVars>,
}

/// Runs `blocks` in order; `extension` is applied to the last block's head.
pub fn forward_chain<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    blocks: &[&ModelBlock<T>],
    extension: Option<&HeadExtension<T>>,
) -> Result<ChainVars, ModelError> {
    let mut h = x;
    let mut features = x;
    let mut bound = Vec::with_capacity(blocks.len());
    for (i, block) in blocks.iter().enumerate() {
        let last = i + 1 == blocks.len();
        if last {
            features = h;
        }
        let vars = block.forward_with_extension(tape, h, if last { extension } else { None })?;
        h = vars.out;
        bound.push(vars);
    }
    Ok(ChainVars { logits: h, features, blocks: bound })
}

/// `C₁(F_t(B₁(x)))`: shared backbone and classifier around a per-task adjustment.
pub fn forward_san<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    backbone: &ModelBlock<T>,
    adjustment: &ModelBlock<T>,
    classifier: &ModelBlock<T>,
    extension: Option<&HeadExtension<T>>,
) -> Result<ChainVars, ModelError> {
    forward_chain(tape, x, &[backbone, adjustment, classifier], extension)
}

/// `C_t(B₁(x))`, where `shared` is the feature stack frozen after task 1.
pub fn forward_baseline<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    shared: &[&ModelBlock<T>],
    classifier: &ModelBlock<T>,
) -> Result<ChainVars, ModelError> {
    let mut blocks = shared.to_vec();
    blocks.push(classifier);
    forward_chain(tape, x, &blocks, None)
}
