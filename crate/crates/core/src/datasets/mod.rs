//! Image datasets: IDX and CIFAR binary readers and writers, pixel
//! permutations, train/validation splits, a synthetic blob corpus, and the
//! builders that turn them into task sequences.
//!
//! Pixels are scaled by 1/255 and nothing else.

mod bench;
mod cifar;
mod idx;
pub(crate) mod permute;
mod split;
mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tensorcore::Tensor;

pub use bench::{cifar_files, load_cifar10, load_cifar100, load_mnist, mnist_files, permuted_benchmark, split_benchmark, synthetic_benchmark, MNIST_FILES};
pub use cifar::{load_cifar, write_cifar, CifarVariant};
pub use idx::{load_idx, write_idx};
pub use permute::{apply_permutation, make_permutations, PermutationSet};
pub use split::{split_indices, split_train_val};
pub use synthetic::{synthetic_dataset, synthetic_dataset_with, SYNTHETIC_SIGMA};

/// Description of the scaling applied to raw bytes.
pub const NORMALIZATION: &str = "x / 255";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated, header promises {expected} bytes but file has {actual}")]
    Truncated { path: PathBuf, expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: length {len} is not a multiple of the {record}-byte record size")]
    RecordLength { path: PathBuf, len: usize, record: usize },
    #[error("task too small: {0}")]
    TaskTooSmall(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing dataset file {path}; run `san-til fetch-data` or pass --data-root")]
    Missing { path: PathBuf },
    #[error("download failed: {0}")]
    Download(String),
    #[error("{path}: sha256 {actual} does not match expected {expected}")]
    Checksum { path: PathBuf, expected: String, actual: String },
}

/// A file that contributed to a dataset, with its content hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub files: Vec<FileDigest>,
    pub normalization: String,
}

/// Labelled images `[N, C, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub class_names: Option<Vec<String>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let d = self.sample_len();
        &self.images.data()[i * d..(i + 1) * d]
    }

    /// Samples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Indices of samples whose label is in `classes`, in dataset order.
    pub fn indices_of(&self, classes: &[usize]) -> Vec<usize> {
        let mut wanted = vec![false; self.num_classes];
        for &c in classes {
            if c < self.num_classes {
                wanted[c] = true;
            }
        }
        (0..self.len()).filter(|&i| wanted[self.labels[i]]).collect()
    }

    /// New dataset holding the samples at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, DataError> {
        let images = self.images.gather_rows(indices).map_err(|e| DataError::InvalidArgument(e.to_string()))?;
        Ok(Dataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        })
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::Missing { path: path.to_path_buf() }
        } else {
            DataError::Io { path: path.to_path_buf(), source }
        }
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    fs::write(path, bytes).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn digest(path: &Path, bytes: &[u8]) -> FileDigest {
    FileDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) }
}

pub(crate) fn pixel(byte: u8) -> f32 {
    byte as f32 / 255.0
}

/// Inverse of the 1/255 scaling, for values that came from bytes.
pub(crate) fn to_byte(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests;
