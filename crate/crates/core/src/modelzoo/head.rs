use serde::{Deserialize, Serialize};

/// Assignment of a task's local class indices to classifier output neurons.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadMap {
    /// `neurons[i]` is the output neuron for local class `i`.
    pub neurons: Vec<usize>,
}

impl HeadMap {
    pub fn identity(classes: usize) -> Self {
        HeadMap { neurons: (0..classes).collect() }
    }

    pub fn classes(&self) -> usize {
        self.neurons.len()
    }
}

/// Result of fitting a task's classes onto a head of fixed width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HeadAssignment {
    /// The task fits; neurons past `map.classes()` stay unused for it.
    Mapped(HeadMap),
    /// The head must grow by `extra` neurons before the task can be trained.
    ExtensionRequired { extra: usize },
}

/// Local class `i` goes to neuron `i`; a task wider than the head signals extension.
pub fn map_task_classes(task_classes: &[usize], base_classes: usize) -> HeadAssignment {
    let k = task_classes.len();
    if k <= base_classes {
        HeadAssignment::Mapped(HeadMap::identity(k))
    } else {
        HeadAssignment::ExtensionRequired { extra: k - base_classes }
    }
}
