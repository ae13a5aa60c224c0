use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::TilError;
use crate::datasets::{permute::apply_into, Dataset};
use crate::tensorcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One task: a class group plus the samples that belong to it.
///
/// `train` and `val` index the training pool and `test` indexes the test
/// pool of the owning [`Benchmark`]. `class_ids` are unique across a
/// sequence; `source_labels[i]` is the dataset label of local class `i`
/// (the two differ only when the same digits reappear under a new pixel
/// permutation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub class_ids: Vec<usize>,
    pub source_labels: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub permutation: Option<Vec<usize>>,
}

impl Task {
    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn local_label(&self, label: usize) -> Option<usize> {
        self.source_labels.iter().position(|&l| l == label)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub tasks: Vec<Task>,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Checks that class sets are pairwise disjoint and that no sample is
    /// listed twice within a task.
    pub fn validate(&self) -> Result<(), TilError> {
        let mut seen = BTreeSet::new();
        for task in &self.tasks {
            if task.class_ids.is_empty() || task.class_ids.len() != task.source_labels.len() {
                return Err(TilError::InvalidPartition(format!("task {} has an inconsistent class list", task.name)));
            }
            for &c in &task.class_ids {
                if !seen.insert(c) {
                    return Err(TilError::InvalidPartition(format!("class {c} appears in more than one task")));
                }
            }
            let pool: BTreeSet<_> = task.train.iter().chain(&task.val).collect();
            if pool.len() != task.train.len() + task.val.len() {
                return Err(TilError::InvalidPartition(format!("task {} reuses a sample across train/val", task.name)));
            }
            let test: BTreeSet<_> = task.test.iter().collect();
            if test.len() != task.test.len() {
                return Err(TilError::InvalidPartition(format!("task {} lists a test sample twice", task.name)));
            }
        }
        Ok(())
    }

    /// The same tasks visited in `order` (a permutation of positions).
    pub fn reordered(&self, order: &[usize]) -> Result<TaskSequence, TilError> {
        check_permutation(order, self.len())?;
        Ok(TaskSequence { tasks: order.iter().map(|&i| self.tasks[i].clone()).collect() })
    }
}

pub(crate) fn check_permutation(order: &[usize], n: usize) -> Result<(), TilError> {
    let mut seen = vec![false; n];
    let ok = order.len() == n && order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true));
    if ok {
        Ok(())
    } else {
        Err(TilError::InvalidOrder(format!("{order:?} is not a permutation of 0..{n}")))
    }
}

/// Splits `num_classes` into `num_tasks` contiguous groups over `order`
/// (ascending ids when `None`). The last group absorbs any remainder.
/// The returned tasks carry class ids only.
pub fn partition_classes(num_classes: usize, num_tasks: usize, order: Option<&[usize]>) -> Result<TaskSequence, TilError> {
    if num_tasks == 0 || num_tasks > num_classes {
        return Err(TilError::InvalidPartition(format!("cannot split {num_classes} classes into {num_tasks} tasks")));
    }
    let ids: Vec<usize> = match order {
        Some(o) => {
            check_permutation(o, num_classes).map_err(|_| TilError::InvalidPartition(format!("class order {o:?} is not a permutation of 0..{num_classes}")))?;
            o.to_vec()
        }
        None => (0..num_classes).collect(),
    };
    let per = num_classes / num_tasks;
    let tasks = (0..num_tasks)
        .map(|t| {
            let end = if t + 1 == num_tasks { num_classes } else { (t + 1) * per };
            let classes = ids[t * per..end].to_vec();
            Task {
                name: format!("task{}", t + 1),
                class_ids: classes.clone(),
                source_labels: classes,
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
                permutation: None,
            }
        })
        .collect();
    Ok(TaskSequence { tasks })
}

/// Training and test pools plus the task sequence drawn from them.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub name: String,
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
    pub sequence: TaskSequence,
}

impl Benchmark {
    pub fn sample_shape(&self) -> [usize; 3] {
        self.train.sample_shape()
    }

    pub fn pool(&self, split: Split) -> &Dataset {
        match split {
            Split::Train | Split::Val => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn task(&self, t: usize) -> Result<&Task, TilError> {
        self.sequence.tasks.get(t).ok_or(TilError::UnknownTask(t))
    }

    pub fn reordered(&self, order: &[usize]) -> Result<Benchmark, TilError> {
        Ok(Benchmark { sequence: self.sequence.reordered(order)?, ..self.clone() })
    }

    /// Task-local labels of the samples at `indices` in `split`.
    pub fn local_labels(&self, task: &Task, split: Split, indices: &[usize]) -> Result<Vec<usize>, TilError> {
        let pool = self.pool(split);
        indices
            .iter()
            .map(|&i| {
                let label = pool.labels[i];
                task.local_label(label)
                    .ok_or_else(|| TilError::InvalidPartition(format!("sample {i} with label {label} is not in task {}", task.name)))
            })
            .collect()
    }

    /// Stacks the samples at `indices` into `[n, C, H, W]`, applying the
    /// task's pixel permutation.
    pub fn images(&self, task: &Task, split: Split, indices: &[usize]) -> Tensor<f32> {
        let pool = self.pool(split);
        let [c, h, w] = pool.sample_shape();
        let d = c * h * w;
        let mut data = vec![0.0f32; indices.len() * d];
        for (dst, &i) in data.chunks_exact_mut(d).zip(indices) {
            match &task.permutation {
                Some(p) => apply_into(p, pool.sample(i), dst),
                None => dst.copy_from_slice(pool.sample(i)),
            }
        }
        Tensor::new(&[indices.len(), c, h, w], data).expect("non-empty batch")
    }
}
