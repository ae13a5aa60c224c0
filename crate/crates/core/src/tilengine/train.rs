use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::seeds::{derive_seed, SeedRole};
use super::state::IncrementalState;
use super::tasks::{Benchmark, Split};
use super::TilError;
use crate::modelzoo::{forward_chain, HeadExtension, HeadMap, ModelBlock, Parameter};
use crate::tensorcore::{Tape, Tensor, Var};

/// Which epoch's parameters a task keeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Highest validation accuracy, earliest epoch on ties.
    #[default]
    BestValidation,
    LastEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub selection: Selection,
    /// Weight of the orthogonality penalty on trainable square linear weights.
    pub orthogonality_alpha: Option<f64>,
    pub eval_batch: usize,
    pub allow_head_extension: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            selection: Selection::BestValidation,
            orthogonality_alpha: None,
            eval_batch: 500,
            allow_head_extension: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TilError> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch == 0 {
            return Err(TilError::InvalidConfig("epochs, batch_size and eval_batch must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TilError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if let Some(a) = self.orthogonality_alpha {
            if !(a.is_finite() && a >= 0.0) {
                return Err(TilError::InvalidConfig(format!("orthogonality_alpha must be non-negative, got {a}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub task: usize,
    pub epochs: Vec<EpochLog>,
    pub selected_epoch: usize,
    pub trainable_params: usize,
    pub wall_clock_secs: f64,
}

type Checkpoint = (Vec<ModelBlock>, Option<HeadExtension>);

fn checkpoint(state: &mut IncrementalState, t: usize) -> Checkpoint {
    let (blocks, ext) = state.chain_mut(t);
    (blocks.into_iter().map(|b| b.clone()).collect(), ext.map(|e| e.clone()))
}

fn restore(state: &mut IncrementalState, t: usize, (saved, saved_ext): Checkpoint) {
    let (blocks, ext) = state.chain_mut(t);
    for (b, s) in blocks.into_iter().zip(saved) {
        *b = s;
    }
    if let (Some(e), Some(s)) = (ext, saved_ext) {
        *e = s;
    }
}

fn is_square_weight(p: &Parameter) -> bool {
    matches!(p.value.shape(), [a, b] if a == b)
}

/// Restricts logits to the task's head neurons.
fn masked(tape: &mut Tape, logits: Var, head: &HeadMap) -> Result<Var, TilError> {
    let width = tape.shape(logits)[1];
    if head.neurons.len() == width && head.neurons.iter().enumerate().all(|(i, &n)| i == n) {
        Ok(logits)
    } else {
        Ok(tape.gather_cols(logits, &head.neurons)?)
    }
}

/// Outputs of the chain's leading frozen blocks for every train and
/// validation sample of a task, so epochs only run the remaining blocks.
struct FrozenInputs {
    skip: usize,
    row: HashMap<usize, usize>,
    table: Tensor,
}

const FROZEN_CACHE_LIMIT: usize = 1 << 28;

impl FrozenInputs {
    fn build(state: &IncrementalState, bench: &Benchmark, t: usize, batch: usize) -> Result<Self, TilError> {
        let task = bench.task(t)?;
        let (blocks, _) = state.chain(t)?;
        let prefix = blocks.iter().take_while(|b| b.params().iter().all(|p| p.frozen)).count().min(blocks.len() - 1);
        let samples: Vec<usize> = task.train.iter().chain(&task.val).copied().collect();
        let width: usize = blocks.get(prefix.wrapping_sub(1)).map_or(0, |b| b.output_shape.iter().product());
        let skip = if prefix == 0 || samples.len() * width > FROZEN_CACHE_LIMIT { 0 } else { prefix };
        let row = samples.iter().enumerate().map(|(r, &i)| (i, r)).collect();
        if skip == 0 {
            return Ok(FrozenInputs { skip, row, table: Tensor::scalar(0.0) });
        }
        let mut data = Vec::with_capacity(samples.len() * width);
        let mut shape = Vec::new();
        for chunk in samples.chunks(batch) {
            let mut tape = Tape::new();
            let x = tape.constant(bench.images(task, Split::Train, chunk));
            let vars = forward_chain(&mut tape, x, &blocks[..skip], None)?;
            shape = tape.shape(vars.logits).to_vec();
            data.extend_from_slice(tape.value(vars.logits).data());
        }
        shape[0] = samples.len();
        Ok(FrozenInputs { skip, row, table: Tensor::new(&shape, data)? })
    }

    /// Input to block `skip` for the samples at `indices`.
    fn input(&self, bench: &Benchmark, t: usize, indices: &[usize]) -> Result<Tensor, TilError> {
        if self.skip == 0 {
            return Ok(bench.images(bench.task(t)?, Split::Train, indices));
        }
        let rows: Vec<usize> = indices.iter().map(|i| self.row[i]).collect();
        Ok(self.table.gather_rows(&rows)?)
    }
}

/// One optimizer step on a batch; returns the batch loss. `x` feeds the
/// block at position `skip` of the task's chain.
fn step(
    state: &mut IncrementalState,
    t: usize,
    skip: usize,
    x: Tensor,
    labels: &[usize],
    alpha: Option<f64>,
    adam: &mut AdamState,
) -> Result<f32, TilError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let (vars, loss) = {
        let (blocks, ext) = state.chain(t)?;
        let blocks = &blocks[skip..];
        let vars = forward_chain(&mut tape, xv, blocks, ext)?;
        let logits = masked(&mut tape, vars.logits, state.head(t)?)?;
        let mut loss = tape.softmax_cross_entropy(logits, labels)?;
        if let Some(alpha) = alpha {
            for (block, bv) in blocks.iter().zip(&vars.blocks) {
                for (p, &v) in block.params().into_iter().zip(&bv.params) {
                    if !p.frozen && is_square_weight(p) {
                        let pen = tape.orthogonality_penalty(v)?;
                        let pen = tape.scale(pen, alpha as f32);
                        loss = tape.add(loss, pen)?;
                    }
                }
            }
        }
        (vars, loss)
    };
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(TilError::NonFinite { task: t });
    }
    tape.backward(loss)?;
    let (blocks, ext) = state.chain_mut(t);
    let mut params: Vec<&mut Parameter> = Vec::new();
    for (b, bv) in blocks.into_iter().skip(skip).zip(&vars.blocks) {
        b.store_grads(&tape, bv);
        params.extend(ModelBlock::params_mut(b));
    }
    if let Some(e) = ext {
        e.store_grads(&tape, vars.blocks.last().expect("chain is non-empty"));
        params.extend(HeadExtension::params_mut(e));
    }
    adam_step(&mut params, adam)?;
    Ok(value)
}

/// Validation accuracy computed from the cached frozen-prefix outputs.
fn cached_val_accuracy(state: &IncrementalState, bench: &Benchmark, t: usize, cache: &FrozenInputs, batch: usize) -> Result<f64, TilError> {
    let task = bench.task(t)?;
    let (blocks, ext) = state.chain(t)?;
    let head = state.head(t)?;
    let mut correct = 0usize;
    for chunk in task.val.chunks(batch) {
        let mut tape = Tape::new();
        let x = tape.constant(cache.input(bench, t, chunk)?);
        let vars = forward_chain(&mut tape, x, &blocks[cache.skip..], ext)?;
        let logits = masked(&mut tape, vars.logits, head)?;
        let labels = bench.local_labels(task, Split::Val, chunk)?;
        correct += argmax_rows(tape.value(logits)).iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / task.val.len() as f64)
}

fn has_square_trainable(state: &IncrementalState, t: usize) -> Result<bool, TilError> {
    let (blocks, _) = state.chain(t)?;
    Ok(blocks.iter().flat_map(|b| b.params()).any(|p| !p.frozen && is_square_weight(p)))
}

/// Trains task `t` under the state's strategy, keeps the selected epoch's
/// parameters and freezes whatever the strategy fixes afterwards.
pub fn train_task(state: &mut IncrementalState, bench: &Benchmark, t: usize, cfg: &TrainConfig) -> Result<TrainLog, TilError> {
    cfg.validate()?;
    let expected = state.tasks.len();
    if t != expected || state.trained_tasks() != expected {
        return Err(TilError::OutOfOrder { expected, got: t });
    }
    let task = bench.task(t)?;
    if task.train.is_empty() {
        return Err(TilError::InvalidPartition(format!("task {} has no training samples", task.name)));
    }
    let start = Instant::now();
    state.prepare(bench, t, cfg.allow_head_extension)?;
    let result = train_prepared(state, bench, t, cfg, start);
    if result.is_err() {
        state.tasks.truncate(t);
    }
    result
}

fn train_prepared(state: &mut IncrementalState, bench: &Benchmark, t: usize, cfg: &TrainConfig, start: Instant) -> Result<TrainLog, TilError> {
    let task = bench.task(t)?;
    if cfg.orthogonality_alpha.is_some() && !has_square_trainable(state, t)? {
        return Err(TilError::InvalidConfig("orthogonality_alpha needs a trainable square linear weight in the architecture".into()));
    }
    let labels = bench.local_labels(task, Split::Train, &task.train)?;
    let label_of: HashMap<usize, usize> = task.train.iter().copied().zip(labels).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(state.seed, SeedRole::Shuffle, t));
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut order = task.train.clone();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let cache = FrozenInputs::build(state, bench, t, cfg.eval_batch)?;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let x = cache.input(bench, t, chunk)?;
            let y: Vec<usize> = chunk.iter().map(|i| label_of[i]).collect();
            total += step(state, t, cache.skip, x, &y, cfg.orthogonality_alpha, &mut adam)? as f64 * chunk.len() as f64;
        }
        let val_accuracy = if task.val.is_empty() { f64::NAN } else { cached_val_accuracy(state, bench, t, &cache, cfg.eval_batch)? };
        if cfg.selection == Selection::BestValidation && best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, checkpoint(state, t)));
        }
        epochs.push(EpochLog { epoch, mean_loss: total / order.len() as f64, val_accuracy });
    }
    let selected_epoch = match best {
        Some((_, epoch, saved)) => {
            restore(state, t, saved);
            epoch
        }
        None => cfg.epochs - 1,
    };
    let trainable_params = state.trainable_params(t);
    state.finish(t);
    Ok(TrainLog { task: t, epochs, selected_epoch, trainable_params, wall_clock_secs: start.elapsed().as_secs_f64() })
}

/// Logits over task `t`'s own classes for the samples of `split`, in
/// index order, computed `batch` samples at a time.
pub fn task_logits(state: &IncrementalState, bench: &Benchmark, t: usize, split: Split, batch: usize) -> Result<Tensor, TilError> {
    forward_split(state, bench, t, split, batch, false)
}

/// Flattened classifier inputs `f` for the samples of `split`.
pub fn task_features(state: &IncrementalState, bench: &Benchmark, t: usize, split: Split, batch: usize) -> Result<Tensor, TilError> {
    forward_split(state, bench, t, split, batch, true)
}

fn forward_split(state: &IncrementalState, bench: &Benchmark, t: usize, split: Split, batch: usize, features: bool) -> Result<Tensor, TilError> {
    if t >= state.tasks.len() {
        return Err(TilError::UntrainedTask(t));
    }
    let task = bench.task(t)?;
    let indices = task.indices(split);
    if indices.is_empty() || batch == 0 {
        return Err(TilError::InvalidPartition(format!("task {} has no {split:?} samples", task.name)));
    }
    let (blocks, ext) = state.chain(t)?;
    let head = state.head(t)?;
    let mut data = Vec::new();
    let mut width = 0;
    for chunk in indices.chunks(batch) {
        let mut tape = Tape::new();
        let x = tape.constant(bench.images(task, split, chunk));
        let vars = forward_chain(&mut tape, x, &blocks, ext)?;
        let out = if features {
            tape.flatten(vars.features)
        } else {
            masked(&mut tape, vars.logits, head)?
        };
        width = tape.shape(out)[1];
        data.extend_from_slice(tape.value(out).data());
    }
    Ok(Tensor::new(&[indices.len(), width], data)?)
}

/// Index of the largest entry of each row; the first one wins ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| row.iter().enumerate().fold(0, |best, (i, v)| if *v > row[best] { i } else { best }))
        .collect()
}

/// Fraction of predictions equal to `labels`.
pub fn accuracy_of(logits: &Tensor, labels: &[usize]) -> f64 {
    let pred = argmax_rows(logits);
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len() as f64
}

fn evaluate_with(state: &IncrementalState, bench: &Benchmark, t: usize, split: Split, batch: usize) -> Result<f64, TilError> {
    let task = bench.task(t)?;
    let logits = task_logits(state, bench, t, split, batch)?;
    let labels = bench.local_labels(task, split, task.indices(split))?;
    Ok(accuracy_of(&logits, &labels))
}

/// Accuracy on `split` of a trained task, predicting among its own classes.
pub fn evaluate(state: &IncrementalState, bench: &Benchmark, t: usize, split: Split) -> Result<f64, TilError> {
    if !state.tasks.get(t).is_some_and(|m| m.trained) {
        return Err(TilError::UntrainedTask(t));
    }
    evaluate_with(state, bench, t, split, TrainConfig::default().eval_batch)
}
