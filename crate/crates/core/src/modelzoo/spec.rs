use serde::{Deserialize, Serialize};

use super::ModelError;

/// One layer of a declarative stack. Input widths are inferred from the
/// shape flowing into the layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Maxpool {
        k: usize,
    },
    Relu,
    Flatten,
    Linear {
        out_features: usize,
    },
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn conv3(out_channels: usize) -> Self {
        LayerSpec::Conv { out_channels, kernel: 3, stride: 1, padding: 1 }
    }

    pub fn linear(out_features: usize) -> Self {
        LayerSpec::Linear { out_features }
    }

    /// Output shape (batch dimension excluded) for input shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                let [_, h, w] = image(input)?;
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err("conv extents must be positive".into());
                }
                if kernel > h + 2 * padding || kernel > w + 2 * padding {
                    return Err(format!("kernel {kernel} exceeds padded input {}x{}", h + 2 * padding, w + 2 * padding));
                }
                Ok(vec![out_channels, (h + 2 * padding - kernel) / stride + 1, (w + 2 * padding - kernel) / stride + 1])
            }
            LayerSpec::Maxpool { k } => {
                let [c, h, w] = image(input)?;
                if k == 0 || h % k != 0 || w % k != 0 {
                    return Err(format!("pool window {k} does not divide {h}x{w}"));
                }
                Ok(vec![c, h / k, w / k])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Linear { out_features } => {
                if input.len() != 1 {
                    return Err(format!("linear needs a flat input, got {input:?}"));
                }
                if out_features == 0 {
                    return Err("linear width must be positive".into());
                }
                Ok(vec![out_features])
            }
        }
    }
}

fn image(shape: &[usize]) -> Result<[usize; 3], String> {
    match shape {
        &[c, h, w] => Ok([c, h, w]),
        other => Err(format!("expected a (C,H,W) input, got {other:?}")),
    }
}

/// Threads `input` through `layers`, reporting the first incompatible layer.
pub fn infer_shape(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>, ModelError> {
    let mut shape = input.to_vec();
    for (index, layer) in layers.iter().enumerate() {
        shape = layer.output_shape(&shape).map_err(|message| ModelError::IncompatibleLayer { index, message })?;
    }
    Ok(shape)
}

/// Backbone → adjustment → classifier stacks for one network family.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_shape: [usize; 3],
    pub backbone: Vec<LayerSpec>,
    pub adjustment: Vec<LayerSpec>,
    pub classifier: Vec<LayerSpec>,
    pub base_classes: usize,
}

impl ArchitectureSpec {
    /// Single-conv backbone and adjustment for 28×28 grayscale digits.
    pub fn mnist_small(base_classes: usize) -> Self {
        ArchitectureSpec {
            input_shape: [1, 28, 28],
            backbone: vec![LayerSpec::conv3(16), LayerSpec::Relu, LayerSpec::Maxpool { k: 2 }],
            adjustment: vec![LayerSpec::conv3(16), LayerSpec::Relu],
            classifier: vec![
                LayerSpec::Flatten,
                LayerSpec::linear(100),
                LayerSpec::Relu,
                LayerSpec::linear(50),
                LayerSpec::Relu,
                LayerSpec::linear(base_classes),
            ],
            base_classes,
        }
    }

    /// Three-conv backbone, four-conv adjustment, three-layer perceptron for 32×32 color images.
    pub fn cifar_small(base_classes: usize) -> Self {
        let mut adjustment = Vec::new();
        for _ in 0..4 {
            adjustment.push(LayerSpec::conv3(64));
            adjustment.push(LayerSpec::Relu);
        }
        adjustment.push(LayerSpec::Maxpool { k: 2 });
        ArchitectureSpec {
            input_shape: [3, 32, 32],
            backbone: vec![
                LayerSpec::conv3(32),
                LayerSpec::Relu,
                LayerSpec::conv3(32),
                LayerSpec::Relu,
                LayerSpec::conv3(64),
                LayerSpec::Relu,
                LayerSpec::Maxpool { k: 2 },
            ],
            adjustment,
            classifier: vec![
                LayerSpec::Flatten,
                LayerSpec::linear(512),
                LayerSpec::Relu,
                LayerSpec::linear(256),
                LayerSpec::Relu,
                LayerSpec::linear(base_classes),
            ],
            base_classes,
        }
    }

    pub fn preset(name: &str, base_classes: usize) -> Option<Self> {
        match name {
            "mnist-small" => Some(Self::mnist_small(base_classes)),
            "cifar-small" => Some(Self::cifar_small(base_classes)),
            _ => None,
        }
    }

    pub fn backbone_output(&self) -> Result<Vec<usize>, ModelError> {
        infer_shape(&self.backbone, &self.input_shape).map_err(|e| e.in_stack("backbone"))
    }

    pub fn adjustment_output(&self) -> Result<Vec<usize>, ModelError> {
        infer_shape(&self.adjustment, &self.backbone_output()?).map_err(|e| e.in_stack("adjustment"))
    }

    /// Type-checks the full chain and the classifier head width.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.base_classes == 0 {
            return Err(ModelError::InvalidSpec("base_classes must be positive".into()));
        }
        let adj = self.adjustment_output()?;
        let out = infer_shape(&self.classifier, &adj).map_err(|e| e.in_stack("classifier"))?;
        match self.classifier.last() {
            Some(LayerSpec::Linear { out_features }) if *out_features == self.base_classes && out == [self.base_classes] => Ok(()),
            _ => Err(ModelError::InvalidSpec(format!(
                "classifier must end in a linear layer of width base_classes={}",
                self.base_classes
            ))),
        }
    }

    /// Same stacks with the classifier head resized to `base_classes`.
    pub fn with_base_classes(&self, base_classes: usize) -> Self {
        let mut spec = self.clone();
        if let Some(LayerSpec::Linear { out_features }) = spec.classifier.last_mut() {
            *out_features = base_classes;
        }
        spec.base_classes = base_classes;
        spec
    }

    /// Sets every adjustment convolution to a `kernel×kernel` window with
    /// shape-preserving padding. `kernel` must be odd.
    pub fn with_adjustment_kernel(&self, kernel: usize) -> Result<Self, ModelError> {
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(ModelError::InvalidSpec(format!("adjustment kernel must be odd, got {kernel}")));
        }
        let mut spec = self.clone();
        for layer in &mut spec.adjustment {
            if let LayerSpec::Conv { kernel: k, padding, stride, .. } = layer {
                *k = kernel;
                *padding = kernel / 2;
                *stride = 1;
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}
