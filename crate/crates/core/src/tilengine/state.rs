use serde::{Deserialize, Serialize};

use super::seeds::{derive_seed, SeedRole};
use super::tasks::Benchmark;
use super::TilError;
use crate::modelzoo::{
    build_block, map_task_classes, new_head_extension, ArchitectureSpec, BlockSnapshot, HeadAssignment, HeadExtension, HeadMap, ModelBlock,
    ModelSize,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    San,
    Baseline,
    Finetune,
    Independent,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [StrategyKind::San, StrategyKind::Baseline, StrategyKind::Finetune, StrategyKind::Independent];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::San => "san",
            StrategyKind::Baseline => "baseline",
            StrategyKind::Finetune => "finetune",
            StrategyKind::Independent => "independent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    /// Whether the shared stack is frozen after the first task.
    pub fn freezes_shared(self) -> bool {
        matches!(self, StrategyKind::San | StrategyKind::Baseline)
    }
}

/// Everything owned by one task position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub name: String,
    pub class_ids: Vec<usize>,
    pub head: HeadMap,
    /// SAN: `[F_t]`; baseline: `[C_t]`; fine-tune: empty; independent: `[B, F, C]`.
    pub blocks: Vec<ModelBlock>,
    /// Extra classifier rows for a task wider than the shared head (SAN only).
    pub extension: Option<HeadExtension>,
    pub trained: bool,
}

/// Parameters of one strategy across the task sequence.
///
/// `shared` holds `[B₁, C₁]` for SAN, `[B₁, F]` for the baseline and
/// `[B, F, C]` for fine-tuning; independent networks share nothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementalState {
    pub strategy: StrategyKind,
    pub spec: ArchitectureSpec,
    pub seed: u64,
    pub shared: Vec<ModelBlock>,
    pub tasks: Vec<TaskModel>,
    /// Shared parameters as they stood right after task 1.
    pub shared_snapshot: Vec<BlockSnapshot>,
}

impl IncrementalState {
    pub fn new(strategy: StrategyKind, spec: ArchitectureSpec, seed: u64) -> Result<Self, TilError> {
        spec.validate()?;
        Ok(IncrementalState { strategy, spec, seed, shared: Vec::new(), tasks: Vec::new(), shared_snapshot: Vec::new() })
    }

    pub fn trained_tasks(&self) -> usize {
        self.tasks.iter().take_while(|t| t.trained).count()
    }

    fn seed(&self, role: SeedRole, t: usize) -> u64 {
        derive_seed(self.seed, role, t)
    }

    fn network(&self, t: usize, width: usize) -> Result<[ModelBlock; 3], TilError> {
        let spec = self.spec.with_base_classes(width);
        let input = spec.input_shape.to_vec();
        let b = build_block(&format!("backbone.{t}"), &spec.backbone, &input, self.seed(SeedRole::Backbone, t))?;
        let f = build_block(&format!("adjust.{t}"), &spec.adjustment, &b.output_shape, self.seed(SeedRole::Adjustment, t))?;
        let c = build_block(&format!("classifier.{t}"), &spec.classifier, &f.output_shape, self.seed(SeedRole::Classifier, t))?;
        Ok([b, f, c])
    }

    /// Creates the parameters task `t` trains and registers its head map.
    pub(crate) fn prepare(&mut self, bench: &Benchmark, t: usize, allow_extension: bool) -> Result<(), TilError> {
        let task = bench.task(t)?;
        let k = task.num_classes();
        if bench.sample_shape() != self.spec.input_shape {
            return Err(TilError::InvalidConfig(format!(
                "architecture expects input {:?} but the data is {:?}",
                self.spec.input_shape,
                bench.sample_shape()
            )));
        }
        let mut model = TaskModel {
            name: task.name.clone(),
            class_ids: task.class_ids.clone(),
            head: HeadMap::identity(k),
            blocks: Vec::new(),
            extension: None,
            trained: false,
        };
        match (self.strategy, t) {
            (StrategyKind::San, 0) => {
                let [b, f, c] = self.network(0, k)?;
                self.shared = vec![b, c];
                model.blocks.push(f);
            }
            (StrategyKind::San, _) => {
                let spec = &self.spec;
                let input = self.shared[0].output_shape.clone();
                model.blocks.push(build_block(&format!("adjust.{t}"), &spec.adjustment, &input, self.seed(SeedRole::Adjustment, t))?);
                let classifier = &self.shared[1];
                let width = classifier.output_shape[0];
                match map_task_classes(&task.class_ids, width) {
                    HeadAssignment::Mapped(map) => model.head = map,
                    HeadAssignment::ExtensionRequired { extra } => {
                        if !allow_extension {
                            return Err(TilError::HeadTooNarrow { task: t, classes: k, width });
                        }
                        let din = classifier.head_input_width().expect("classifier ends in a linear layer");
                        let name = format!("{}.{}.ext.{t}", classifier.name, classifier.layers.len() - 1);
                        model.extension = Some(new_head_extension(&name, din, extra, self.seed(SeedRole::Extension, t)));
                    }
                }
            }
            (StrategyKind::Baseline, 0) => {
                let [b, f, c] = self.network(0, k)?;
                self.shared = vec![b, f];
                model.blocks.push(c);
            }
            (StrategyKind::Baseline, _) => {
                let spec = self.spec.with_base_classes(k);
                let input = self.shared[1].output_shape.clone();
                model.blocks.push(build_block(&format!("classifier.{t}"), &spec.classifier, &input, self.seed(SeedRole::Classifier, t))?);
            }
            (StrategyKind::Finetune, 0) => {
                let width = bench.sequence.tasks.iter().map(|t| t.num_classes()).max().unwrap_or(k);
                self.shared = self.network(0, width)?.into();
            }
            (StrategyKind::Finetune, _) => {}
            (StrategyKind::Independent, _) => model.blocks = self.network(t, k)?.into(),
        }
        self.tasks.push(model);
        Ok(())
    }

    /// Freezes what must stay fixed once task `t` is done.
    pub(crate) fn finish(&mut self, t: usize) {
        if self.strategy != StrategyKind::Finetune {
            let task = &mut self.tasks[t];
            task.blocks.iter_mut().for_each(ModelBlock::freeze);
            if let Some(ext) = task.extension.as_mut() {
                ext.params_mut().into_iter().for_each(|p| p.frozen = true);
            }
        }
        if t == 0 && self.strategy.freezes_shared() {
            self.shared.iter_mut().for_each(ModelBlock::freeze);
            self.shared_snapshot = self.shared.iter().map(ModelBlock::snapshot).collect();
        }
        self.tasks[t].trained = true;
    }

    /// Blocks in evaluation order for task `t`, and the head extension.
    pub fn chain(&self, t: usize) -> Result<(Vec<&ModelBlock>, Option<&HeadExtension>), TilError> {
        let task = self.tasks.get(t).ok_or(TilError::UntrainedTask(t))?;
        Ok(match self.strategy {
            StrategyKind::San => (vec![&self.shared[0], &task.blocks[0], &self.shared[1]], task.extension.as_ref()),
            StrategyKind::Baseline => (self.shared.iter().chain(&task.blocks).collect(), None),
            StrategyKind::Finetune => (self.shared.iter().collect(), None),
            StrategyKind::Independent => (task.blocks.iter().collect(), None),
        })
    }

    pub(crate) fn chain_mut(&mut self, t: usize) -> (Vec<&mut ModelBlock>, Option<&mut HeadExtension>) {
        let task = &mut self.tasks[t];
        match self.strategy {
            StrategyKind::San => {
                let (b, c) = self.shared.split_at_mut(1);
                (vec![&mut b[0], &mut task.blocks[0], &mut c[0]], task.extension.as_mut())
            }
            StrategyKind::Baseline => (self.shared.iter_mut().chain(task.blocks.iter_mut()).collect(), None),
            StrategyKind::Finetune => (self.shared.iter_mut().collect(), None),
            StrategyKind::Independent => (task.blocks.iter_mut().collect(), None),
        }
    }

    /// The classifier head used by task `t`.
    pub fn head(&self, t: usize) -> Result<&HeadMap, TilError> {
        self.tasks.get(t).map(|m| &m.head).ok_or(TilError::UntrainedTask(t))
    }

    /// Every stored parameter: shared blocks, per-task blocks and extensions.
    pub fn model_size(&self) -> ModelSize {
        let blocks: usize = self.shared.iter().chain(self.tasks.iter().flat_map(|t| &t.blocks)).map(ModelBlock::param_count).sum();
        let ext: usize = self.tasks.iter().filter_map(|t| t.extension.as_ref()).flat_map(|e| e.params()).map(|p| p.value.numel()).sum();
        ModelSize::from_count(blocks + ext)
    }

    /// Parameters that training task `t` may change.
    pub fn trainable_params(&self, t: usize) -> usize {
        let Ok((blocks, ext)) = self.chain(t) else { return 0 };
        let in_blocks: usize = blocks.iter().flat_map(|b| b.params()).filter(|p| !p.frozen).map(|p| p.value.numel()).sum();
        in_blocks + ext.map_or(0, |e| e.params().iter().filter(|p| !p.frozen).map(|p| p.value.numel()).sum())
    }

    /// Checks the shared stack against its post-task-1 snapshot; on
    /// mismatch returns the first differing parameter path.
    pub fn verify_shared_frozen(&self) -> Result<(), String> {
        if self.shared_snapshot.len() != self.shared.len() {
            return Err("no shared snapshot recorded".into());
        }
        self.shared.iter().zip(&self.shared_snapshot).try_for_each(|(b, s)| b.assert_frozen(s))
    }
}
