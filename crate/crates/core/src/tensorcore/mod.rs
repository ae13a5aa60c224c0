//! Minimal reverse-mode differentiable core: the handful of layers the
//! networks in this crate need, a recording [`Tape`], and [`grad_check`].
//!
//! Training runs in `f32`; gradient checks run the same code in `f64`.

mod gradcheck;
mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn eval_unary<T: Scalar>(
    x: &Tensor<T>,
    f: impl FnOnce(&mut Tape<T>, Var) -> Result<Var, TensorError>,
) -> Result<Tensor<T>, TensorError> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).clone())
}

/// Gradient-free convolution (cross-correlation, zero padding).
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, TensorError> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(weight.clone());
    let b = tape.constant(bias.clone());
    let out = tape.conv2d(x, w, b, stride, padding)?;
    Ok(tape.value(out).clone())
}

pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>, TensorError> {
    eval_unary(input, |t, v| t.maxpool2d(v, k))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    eval_unary(input, |t, v| Ok(t.relu(v))).expect("relu is total")
}

pub fn flatten<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    eval_unary(input, |t, v| Ok(t.flatten(v))).expect("flatten is total")
}

pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(weight.clone());
    let b = tape.constant(bias.clone());
    let out = tape.linear(x, w, b)?;
    Ok(tape.value(out).clone())
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T, TensorError> {
    eval_unary(logits, |t, v| t.softmax_cross_entropy(v, labels)).map(|t| t.item())
}

pub fn orthogonality_penalty<T: Scalar>(a: &Tensor<T>) -> Result<T, TensorError> {
    eval_unary(a, |t, v| t.orthogonality_penalty(v)).map(|t| t.item())
}

#[cfg(test)]
mod tests;
