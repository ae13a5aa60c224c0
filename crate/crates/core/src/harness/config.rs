use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::modelzoo::ArchitectureSpec;
use crate::tilengine::{Selection, StrategyKind, TrainConfig};

/// Epochs per task under the `--fast` desk profile.
pub const FAST_EPOCHS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetId {
    /// Split MNIST: disjoint digit groups.
    Mnist,
    PermutedMnist,
    Cifar10,
    Cifar100,
    Synthetic,
}

impl DatasetId {
    pub fn name(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::PermutedMnist => "permuted-mnist",
            DatasetId::Cifar10 => "cifar10",
            DatasetId::Cifar100 => "cifar100",
            DatasetId::Synthetic => "synthetic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    MnistSmall,
    CifarSmall,
}

/// A named preset or a full inline specification.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchitectureChoice {
    Preset(Preset),
    Spec(ArchitectureSpec),
}

impl ArchitectureChoice {
    /// The concrete specification; presets get a head of `base_classes`.
    pub fn resolve(&self, base_classes: usize) -> ArchitectureSpec {
        match self {
            ArchitectureChoice::Preset(Preset::MnistSmall) => ArchitectureSpec::mnist_small(base_classes),
            ArchitectureChoice::Preset(Preset::CifarSmall) => ArchitectureSpec::cifar_small(base_classes),
            ArchitectureChoice::Spec(spec) => spec.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticOptions {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub shape: [usize; 3],
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions { num_classes: 6, train_per_class: 60, test_per_class: 30, shape: [1, 8, 8] }
    }
}

fn default_epochs() -> usize {
    TrainConfig::default().epochs
}

fn default_batch_size() -> usize {
    TrainConfig::default().batch_size
}

fn default_lr() -> f64 {
    TrainConfig::default().lr
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_train_fraction() -> f64 {
    0.85
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

/// Everything one `run` invocation needs, as read from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: StrategyKind,
    pub dataset: DatasetId,
    pub num_tasks: usize,
    /// Class ids in the order they are grouped into tasks.
    #[serde(default)]
    pub class_order: Option<Vec<usize>>,
    /// Order in which the partitioned tasks are visited.
    #[serde(default)]
    pub task_order: Option<Vec<usize>>,
    pub architecture: ArchitectureChoice,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub orthogonality_alpha: Option<f64>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub synthetic: Option<SyntheticOptions>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// One problem with one configuration field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Command-line overrides applied on top of a file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub epochs: Option<usize>,
    pub fast: bool,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(vec![FieldError { field: "<json>".into(), message: e.to_string() }]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(vec![FieldError { field: "<file>".into(), message: format!("{}: {e}", path.display()) }]))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, overrides: &Overrides) -> Result<(), HarnessError> {
        if overrides.fast {
            self.epochs = FAST_EPOCHS;
        }
        if let Some(e) = overrides.epochs {
            self.epochs = e;
        }
        if let Some(s) = &overrides.seeds {
            self.seeds.clone_from(s);
        }
        if let Some(o) = &overrides.output_dir {
            self.output_dir.clone_from(o);
        }
        self.validate()
    }

    /// Number of classes in the dataset before any task split.
    pub fn dataset_classes(&self) -> usize {
        match self.dataset {
            DatasetId::Mnist | DatasetId::PermutedMnist | DatasetId::Cifar10 => 10,
            DatasetId::Cifar100 => 100,
            DatasetId::Synthetic => self.synthetic.clone().unwrap_or_default().num_classes,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self.dataset {
            DatasetId::Mnist | DatasetId::PermutedMnist => [1, 28, 28],
            DatasetId::Cifar10 | DatasetId::Cifar100 => [3, 32, 32],
            DatasetId::Synthetic => self.synthetic.clone().unwrap_or_default().shape,
        }
    }

    /// Class count of the first task visited, which sets the shared head width.
    pub fn first_task_classes(&self) -> usize {
        let classes = self.dataset_classes();
        if self.dataset == DatasetId::PermutedMnist {
            return classes;
        }
        let n = self.num_tasks.max(1);
        let first = self.task_order.as_ref().and_then(|o| o.first().copied()).unwrap_or(0);
        if first + 1 == n {
            classes - (n - 1) * (classes / n)
        } else {
            classes / n
        }
    }

    pub fn architecture_spec(&self) -> ArchitectureSpec {
        self.architecture.resolve(self.first_task_classes())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            selection: self.selection,
            orthogonality_alpha: self.orthogonality_alpha,
            ..TrainConfig::default()
        }
    }

    /// Collects every field-level problem rather than stopping at the first.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut errors = Vec::new();
        let mut bad = |field: &str, message: String| errors.push(FieldError { field: field.into(), message });
        let classes = self.dataset_classes();
        if self.num_tasks == 0 {
            bad("num_tasks", "must be at least 1".into());
        } else if self.dataset != DatasetId::PermutedMnist && self.num_tasks > classes {
            bad("num_tasks", format!("{} tasks cannot be drawn from {classes} classes", self.num_tasks));
        }
        if let Some(order) = &self.class_order {
            if self.dataset == DatasetId::PermutedMnist {
                bad("class_order", "permuted-mnist tasks all use every class".into());
            } else if !is_permutation(order, classes) {
                bad("class_order", format!("must be a permutation of 0..{classes}"));
            }
        }
        if let Some(order) = &self.task_order {
            if !is_permutation(order, self.num_tasks) {
                bad("task_order", format!("must be a permutation of 0..{}", self.num_tasks));
            }
        }
        if self.epochs == 0 {
            bad("epochs", "must be positive".into());
        }
        if self.batch_size == 0 {
            bad("batch_size", "must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            bad("lr", format!("must be a positive number, got {}", self.lr));
        }
        if self.seeds.is_empty() {
            bad("seeds", "needs at least one seed".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            bad("seeds", "seeds must be distinct".into());
        }
        if let Some(a) = self.orthogonality_alpha {
            if !(a.is_finite() && a >= 0.0) {
                bad("orthogonality_alpha", format!("must be non-negative, got {a}"));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bad("train_fraction", format!("must lie in (0, 1), got {}", self.train_fraction));
        }
        match (&self.synthetic, self.dataset) {
            (Some(_), d) if d != DatasetId::Synthetic => bad("synthetic", "only valid with dataset \"synthetic\"".into()),
            (Some(s), _) if s.num_classes == 0 || s.train_per_class < 2 || s.test_per_class == 0 || s.shape.contains(&0) => {
                bad("synthetic", "needs positive classes, shape and test_per_class, and train_per_class >= 2".into())
            }
            _ => {}
        }
        let spec = self.architecture_spec();
        if spec.input_shape != self.input_shape() {
            bad("architecture", format!("input_shape {:?} does not match {} images {:?}", spec.input_shape, self.dataset.name(), self.input_shape()));
        }
        if let Err(e) = spec.validate() {
            bad("architecture", e.to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(errors))
        }
    }
}

fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    order.len() == n && order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}
