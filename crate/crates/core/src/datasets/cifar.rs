use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{digest, pixel, read_file, to_byte, write_file, DataError, Dataset, Provenance, NORMALIZATION};
use crate::tensorcore::Tensor;

const PIXELS: usize = 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    /// Bytes per record: label byte(s) followed by 3072 pixels.
    pub fn record_len(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1 + PIXELS,
            CifarVariant::Cifar100 => 2 + PIXELS,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    fn label_bytes(self) -> usize {
        self.record_len() - PIXELS
    }
}

/// Concatenates the records of every file in `paths`. CIFAR-100 records
/// keep the fine label (second byte).
pub fn load_cifar(paths: &[&Path], variant: CifarVariant) -> Result<Dataset, DataError> {
    let rec = variant.record_len();
    let lb = variant.label_bytes();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut files = Vec::new();
    for &path in paths {
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % rec != 0 {
            return Err(DataError::RecordLength { path: path.into(), len: bytes.len(), record: rec });
        }
        for r in bytes.chunks_exact(rec) {
            let label = r[lb - 1] as usize;
            if label >= variant.num_classes() {
                return Err(DataError::InvalidArgument(format!("{}: label {label} out of range", path.display())));
            }
            labels.push(label);
            data.extend(r[lb..].iter().map(|&b| pixel(b)));
        }
        files.push(digest(path, &bytes));
    }
    if labels.is_empty() {
        return Err(DataError::InvalidArgument("no CIFAR files given".into()));
    }
    Ok(Dataset {
        images: Tensor::new(&[labels.len(), 3, 32, 32], data).expect("records are 3x32x32"),
        labels,
        num_classes: variant.num_classes(),
        class_names: None,
        provenance: Provenance { source: format!("{variant:?}").to_lowercase(), files, normalization: NORMALIZATION.into() },
    })
}

/// Writes records in the binary layout read by [`load_cifar`]. The coarse
/// label byte of CIFAR-100 is written as 0.
pub fn write_cifar(dataset: &Dataset, path: &Path, variant: CifarVariant) -> Result<(), DataError> {
    if dataset.sample_shape() != [3, 32, 32] {
        return Err(DataError::InvalidArgument(format!("CIFAR records are 3x32x32, got {:?}", dataset.sample_shape())));
    }
    let mut out = Vec::with_capacity(dataset.len() * variant.record_len());
    for i in 0..dataset.len() {
        let label = dataset.labels[i];
        if label >= variant.num_classes() {
            return Err(DataError::InvalidArgument(format!("label {label} out of range for {variant:?}")));
        }
        if variant == CifarVariant::Cifar100 {
            out.push(0);
        }
        out.push(label as u8);
        out.extend(dataset.sample(i).iter().map(|&v| to_byte(v)));
    }
    write_file(path, &out)
}
