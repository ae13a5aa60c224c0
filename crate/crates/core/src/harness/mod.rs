//! Experiment harness: JSON run configurations, multi-seed execution,
//! reports, capacity sweeps, task-order ablations, embedding dumps, data
//! fetching and a finite-difference gradient suite.

use std::path::{Path, PathBuf};

mod config;
mod fetch;
mod gradsuite;
mod report;
mod runner;

pub use config::{ArchitectureChoice, DatasetId, FieldError, Overrides, Preset, RunConfig, SyntheticOptions, FAST_EPOCHS};
pub use fetch::{fetch_data, FetchSource, FetchTarget, CIFAR100_URL, CIFAR10_URL, MNIST_FILE_SHA256, MNIST_SHA256, MNIST_URL};
pub use gradsuite::{grad_check_suite, OpCheck, GRAD_TOLERANCE, ORTHOGONALITY_TOLERANCE};
pub use report::{without_wall_clock, Aggregate, BenchmarkSummary, MeanStd, RunReport, REPORT_FILE, SUMMARY_FILE};
pub use runner::{
    ablate_order, dump_embeddings, execute, execute_on, resolve_data_root, run, seed_reports, sweep_size, Checkpoint, Pools, RunOutput, SweepPoint,
    DATA_ROOT_ENV,
};

use crate::datasets::DataError;
use crate::modelzoo::ModelError;
use crate::tensorcore::TensorError;
use crate::tilengine::TilError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration:\n{}", join(.0))]
    Config(Vec<FieldError>),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] TilError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl From<TensorError> for HarnessError {
    fn from(e: TensorError) -> Self {
        HarnessError::Engine(TilError::Tensor(e))
    }
}

fn join(errors: &[FieldError]) -> String {
    errors.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n")
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit status: 1 for configuration errors, 2 for data
    /// errors, 3 for anything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Data(_) => 2,
            HarnessError::Engine(e) => engine_code(e),
            HarnessError::Io { .. } | HarnessError::Runtime(_) => 3,
        }
    }
}

fn engine_code(e: &TilError) -> i32 {
    match e {
        TilError::InTask { source, .. } => engine_code(source),
        TilError::Data(_) => 2,
        TilError::InvalidConfig(_)
        | TilError::InvalidOrder(_)
        | TilError::InvalidPartition(_)
        | TilError::HeadTooNarrow { .. }
        | TilError::Model(ModelError::InvalidSpec(_)) => 1,
        _ => 3,
    }
}
