use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{infer_shape, LayerSpec};
use super::ModelError;
use crate::tensorcore::{Scalar, Tape, Tensor, Var};

/// A named trainable tensor. Frozen parameters are never touched by an optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter { name: name.into(), value: value.with_requires_grad(true), frozen: false }
    }

    /// Registers the parameter on `tape`; frozen parameters enter as constants.
    pub fn bind(&self, tape: &mut Tape<T>) -> Var {
        if self.frozen {
            tape.constant(self.value.clone())
        } else {
            tape.leaf(self.value.clone().with_requires_grad(true))
        }
    }

    fn cast<U: Scalar>(&self) -> Parameter<U> {
        Parameter { name: self.name.clone(), value: self.value.cast(), frozen: self.frozen }
    }
}

/// Extra output rows appended to a classifier's final linear layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct HeadExtension<T = f32> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> HeadExtension<T> {
    pub fn width(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    fn cast<U: Scalar>(&self) -> HeadExtension<U> {
        HeadExtension { weight: self.weight.cast(), bias: self.bias.cast() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer<T = f32> {
    Conv { weight: Parameter<T>, bias: Parameter<T>, stride: usize, padding: usize },
    Maxpool { k: usize },
    Relu,
    Flatten,
    Linear { weight: Parameter<T>, bias: Parameter<T>, extension: Option<HeadExtension<T>> },
}

/// Variables bound while running a block on a tape, aligned with
/// [`ModelBlock::params`] order.
#[derive(Clone, Debug)]
pub struct BlockVars {
    pub out: Var,
    pub params: Vec<Var>,
    /// Bindings for an extension supplied at call time (weight, bias).
    pub extension: Vec<Var>,
}

/// One of the three network parts (backbone, adjustment, classifier),
/// instantiated for a fixed input shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelBlock<T = f32> {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub layers: Vec<Layer<T>>,
}

fn he_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Instantiates `spec` on `input_shape` with He-uniform weights and zero
/// biases drawn from `seed`. Parameter names are `"{name}.{layer}.{weight|bias}"`.
pub fn build_block(name: &str, spec: &[LayerSpec], input_shape: &[usize], seed: u64) -> Result<ModelBlock<f32>, ModelError> {
    let output_shape = infer_shape(spec, input_shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = input_shape.to_vec();
    let mut layers = Vec::with_capacity(spec.len());
    for (i, layer) in spec.iter().enumerate() {
        let next = layer.output_shape(&shape).expect("checked by infer_shape");
        layers.push(match *layer {
            LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                let cin = shape[0];
                let fan_in = cin * kernel * kernel;
                Layer::Conv {
                    weight: Parameter::new(format!("{name}.{i}.weight"), he_uniform(&mut rng, &[out_channels, cin, kernel, kernel], fan_in)),
                    bias: Parameter::new(format!("{name}.{i}.bias"), Tensor::zeros(&[out_channels])),
                    stride,
                    padding,
                }
            }
            LayerSpec::Maxpool { k } => Layer::Maxpool { k },
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Linear { out_features } => {
                let din = shape[0];
                Layer::Linear {
                    weight: Parameter::new(format!("{name}.{i}.weight"), he_uniform(&mut rng, &[out_features, din], din)),
                    bias: Parameter::new(format!("{name}.{i}.bias"), Tensor::zeros(&[out_features])),
                    extension: None,
                }
            }
        });
        shape = next;
    }
    Ok(ModelBlock { name: name.to_string(), input_shape: input_shape.to_vec(), output_shape, layers })
}

/// Fresh trainable rows for a classifier whose final layer takes `din` inputs.
pub fn new_head_extension(name: &str, din: usize, extra: usize, seed: u64) -> HeadExtension<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HeadExtension {
        weight: Parameter::new(format!("{name}.weight"), he_uniform(&mut rng, &[extra, din], din)),
        bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[extra])),
    }
}

impl<T: Scalar> ModelBlock<T> {
    /// Pass-through block (no layers).
    pub fn identity(name: &str, shape: &[usize]) -> Self {
        ModelBlock { name: name.into(), input_shape: shape.to_vec(), output_shape: shape.to_vec(), layers: Vec::new() }
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { weight, bias, .. } => out.extend([weight, bias]),
                Layer::Linear { weight, bias, extension } => {
                    out.extend([weight, bias]);
                    if let Some(ext) = extension {
                        out.extend(ext.params());
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { weight, bias, .. } => out.extend([weight, bias]),
                Layer::Linear { weight, bias, extension } => {
                    out.extend([weight, bias]);
                    if let Some(ext) = extension {
                        out.extend(ext.params_mut());
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    /// Width of the final linear layer's input, if the block ends in one.
    pub fn head_input_width(&self) -> Option<usize> {
        match self.layers.last()? {
            Layer::Linear { weight, .. } => Some(weight.value.shape()[1]),
            _ => None,
        }
    }

    pub fn freeze(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.frozen = true);
    }

    pub fn unfreeze(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.frozen = false);
    }

    pub fn is_frozen(&self) -> bool {
        self.params().iter().all(|p| p.frozen)
    }

    pub fn snapshot(&self) -> BlockSnapshot<T> {
        BlockSnapshot(self.params().into_iter().map(|p| (p.name.clone(), p.value.clone())).collect())
    }

    /// Compares parameter values bitwise against `snapshot`; on mismatch
    /// returns the path of the first differing parameter.
    pub fn assert_frozen(&self, snapshot: &BlockSnapshot<T>) -> Result<(), String> {
        let params = self.params();
        for (i, (name, value)) in snapshot.0.iter().enumerate() {
            match params.get(i) {
                Some(p) if &p.name == name && p.value.bit_eq(value) => {}
                Some(p) if &p.name != name => return Err(p.name.clone()),
                _ => return Err(name.clone()),
            }
        }
        if params.len() > snapshot.0.len() {
            return Err(params[snapshot.0.len()].name.clone());
        }
        Ok(())
    }

    /// Restores values saved by [`snapshot`](Self::snapshot); frozen flags are kept.
    pub fn restore(&mut self, snapshot: &BlockSnapshot<T>) {
        for (p, (_, value)) in self.params_mut().into_iter().zip(&snapshot.0) {
            p.value = value.clone().with_requires_grad(true);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelBlock<U> {
        ModelBlock {
            name: self.name.clone(),
            input_shape: self.input_shape.clone(),
            output_shape: self.output_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv { weight, bias, stride, padding } => Layer::Conv { weight: weight.cast(), bias: bias.cast(), stride: *stride, padding: *padding },
                    Layer::Maxpool { k } => Layer::Maxpool { k: *k },
                    Layer::Relu => Layer::Relu,
                    Layer::Flatten => Layer::Flatten,
                    Layer::Linear { weight, bias, extension } => Layer::Linear {
                        weight: weight.cast(),
                        bias: bias.cast(),
                        extension: extension.as_ref().map(HeadExtension::cast),
                    },
                })
                .collect(),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<BlockVars, ModelError> {
        self.forward_with_extension(tape, x, None)
    }

    /// Runs the block. When `extension` is given, its rows are appended to
    /// the final linear layer's output (in addition to any built-in extension).
    pub fn forward_with_extension(&self, tape: &mut Tape<T>, x: Var, extension: Option<&HeadExtension<T>>) -> Result<BlockVars, ModelError> {
        let got = &tape.shape(x)[1..];
        if got != self.input_shape.as_slice() {
            return Err(ModelError::InputShape { block: self.name.clone(), expected: self.input_shape.clone(), got: got.to_vec() });
        }
        let mut h = x;
        let mut params = Vec::new();
        let mut ext_vars = Vec::new();
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Conv { weight, bias, stride, padding } => {
                    let (w, b) = (weight.bind(tape), bias.bind(tape));
                    params.extend([w, b]);
                    tape.conv2d(h, w, b, *stride, *padding)?
                }
                Layer::Maxpool { k } => tape.maxpool2d(h, *k)?,
                Layer::Relu => tape.relu(h),
                Layer::Flatten => tape.flatten(h),
                Layer::Linear { weight, bias, extension: own } => {
                    let (w, b) = (weight.bind(tape), bias.bind(tape));
                    params.extend([w, b]);
                    let mut out = tape.linear(h, w, b)?;
                    if let Some(ext) = own {
                        let (ew, eb) = (ext.weight.bind(tape), ext.bias.bind(tape));
                        params.extend([ew, eb]);
                        let extra = tape.linear(h, ew, eb)?;
                        out = tape.concat_cols(out, extra)?;
                    }
                    if let (true, Some(ext)) = (i == last, extension) {
                        let (ew, eb) = (ext.weight.bind(tape), ext.bias.bind(tape));
                        ext_vars.extend([ew, eb]);
                        let extra = tape.linear(h, ew, eb)?;
                        out = tape.concat_cols(out, extra)?;
                    }
                    out
                }
            };
        }
        if extension.is_some() && ext_vars.is_empty() {
            return Err(ModelError::InvalidSpec(format!("block {} has no final linear layer to extend", self.name)));
        }
        Ok(BlockVars { out: h, params, extension: ext_vars })
    }

    /// Copies gradients from `tape` into the non-frozen parameters bound in `vars`.
    pub fn store_grads(&mut self, tape: &Tape<T>, vars: &BlockVars) {
        for (p, &v) in self.params_mut().into_iter().zip(&vars.params) {
            if p.frozen {
                continue;
            }
            if let Some(g) = tape.grad(v) {
                p.value.set_grad(g.to_vec()).expect("gradient shape matches parameter");
            }
        }
    }

    /// Gradient-free forward on a concrete batch.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = self.forward(&mut tape, v)?.out;
        Ok(tape.value(out).clone())
    }
}

impl<T: Scalar> HeadExtension<T> {
    pub fn store_grads(&mut self, tape: &Tape<T>, vars: &BlockVars) {
        for (p, &v) in self.params_mut().into_iter().zip(&vars.extension) {
            if !p.frozen {
                if let Some(g) = tape.grad(v) {
                    p.value.set_grad(g.to_vec()).expect("gradient shape matches parameter");
                }
            }
        }
    }
}

/// Bitwise copy of a block's parameter values, in [`ModelBlock::params`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BlockSnapshot<T = f32>(pub Vec<(String, Tensor<T>)>);

/// Returns a copy of `classifier` whose final linear layer gains `extra`
/// trainable output rows. Existing parameters are frozen and unchanged.
pub fn extend_classifier(classifier: &ModelBlock<f32>, extra: usize, seed: u64) -> Result<ModelBlock<f32>, ModelError> {
    if extra == 0 {
        return Err(ModelError::InvalidSpec("classifier extension needs at least one new neuron".into()));
    }
    let mut out = classifier.clone();
    out.freeze();
    let din = out
        .head_input_width()
        .ok_or_else(|| ModelError::InvalidSpec(format!("block {} does not end in a linear layer", classifier.name)))?;
    let last = out.layers.len() - 1;
    let name = format!("{}.{last}.ext", classifier.name);
    let Some(Layer::Linear { extension, .. }) = out.layers.last_mut() else { unreachable!() };
    if extension.is_some() {
        return Err(ModelError::InvalidSpec(format!("classifier {} is already extended", classifier.name)));
    }
    let grown = new_head_extension(&name, din, extra, seed);
    *extension = Some(grown);
    if let Some(w) = out.output_shape.first_mut() {
        *w += extra;
    }
    Ok(out)
}
