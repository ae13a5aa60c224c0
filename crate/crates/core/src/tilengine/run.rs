use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::state::{IncrementalState, StrategyKind};
use super::tasks::{check_permutation, Benchmark, Split};
use super::train::{evaluate, train_task, TrainConfig, TrainLog};
use super::TilError;
use crate::modelzoo::{ArchitectureSpec, ModelSize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub strategy: StrategyKind,
    pub architecture: ArchitectureSpec,
    pub train: TrainConfig,
    pub seed: u64,
}

/// One seed's outcome over a whole task sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub task_names: Vec<String>,
    pub class_ids: Vec<Vec<usize>>,
    /// Row `t` holds the test accuracy of tasks `0..=t` measured right after training task `t`.
    pub forgetting: Vec<Vec<f64>>,
    pub final_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Stored model size after each task.
    pub sizes: Vec<ModelSize>,
    pub train_logs: Vec<TrainLog>,
    pub wall_clock_secs: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Trains every task in order and evaluates all earlier tasks after each one.
pub fn run_sequence(config: &SequenceConfig, bench: &Benchmark) -> Result<(SequenceReport, IncrementalState), TilError> {
    config.train.validate()?;
    bench.sequence.validate()?;
    if bench.sequence.is_empty() {
        return Err(TilError::InvalidPartition("task sequence is empty".into()));
    }
    let start = Instant::now();
    let mut state = IncrementalState::new(config.strategy, config.architecture.clone(), config.seed)?;
    let mut forgetting = Vec::new();
    let mut sizes = Vec::new();
    let mut train_logs = Vec::new();
    for t in 0..bench.sequence.len() {
        let name = &bench.sequence.tasks[t].name;
        train_logs.push(train_task(&mut state, bench, t, &config.train).map_err(|e| e.in_task(t, name))?);
        let row = (0..=t).map(|s| evaluate(&state, bench, s, Split::Test)).collect::<Result<Vec<_>, _>>().map_err(|e| e.in_task(t, name))?;
        forgetting.push(row);
        sizes.push(state.model_size());
    }
    let final_accuracies = forgetting.last().cloned().unwrap_or_default();
    let report = SequenceReport {
        strategy: config.strategy,
        seed: config.seed,
        task_names: bench.sequence.tasks.iter().map(|t| t.name.clone()).collect(),
        class_ids: bench.sequence.tasks.iter().map(|t| t.class_ids.clone()).collect(),
        mean_accuracy: mean(&final_accuracies),
        final_accuracies,
        forgetting,
        sizes,
        train_logs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((report, state))
}

/// One full run per task order, all with the same seed.
pub fn task_order_ablation(config: &SequenceConfig, bench: &Benchmark, orders: &[Vec<usize>]) -> Result<Vec<SequenceReport>, TilError> {
    for order in orders {
        check_permutation(order, bench.sequence.len())?;
    }
    orders.iter().map(|order| Ok(run_sequence(config, &bench.reordered(order)?)?.0)).collect()
}
