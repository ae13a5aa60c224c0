use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, Dataset, Provenance};
use crate::tensorcore::Tensor;

/// Per-pixel noise standard deviation of the synthetic blobs.
pub const SYNTHETIC_SIGMA: f32 = 0.05;

/// Balanced Gaussian blobs with 6σ per-pixel separation between class means.
pub fn synthetic_dataset(num_classes: usize, per_class: usize, shape: [usize; 3], seed: u64) -> Result<Dataset, DataError> {
    synthetic_dataset_with(num_classes, per_class, shape, 6.0, seed)
}

/// Class `c` has mean `0.5 ± separation·σ/2` per pixel, with a random sign
/// pattern per class, so any two means differing at a pixel are
/// `separation·σ` apart there. Samples are interleaved by class and clipped
/// to `[0, 1]`.
pub fn synthetic_dataset_with(
    num_classes: usize,
    per_class: usize,
    shape: [usize; 3],
    separation: f32,
    seed: u64,
) -> Result<Dataset, DataError> {
    if num_classes == 0 || per_class < 2 || shape.contains(&0) {
        return Err(DataError::InvalidArgument("synthetic data needs classes, per_class >= 2 and a non-empty shape".into()));
    }
    let d: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = separation * SYNTHETIC_SIGMA / 2.0;
    let means: Vec<Vec<f32>> = (0..num_classes)
        .map(|_| (0..d).map(|_| if rng.random::<bool>() { 0.5 + amp } else { 0.5 - amp }).collect())
        .collect();
    let noise = Normal::new(0.0f32, SYNTHETIC_SIGMA).expect("positive sigma");
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..per_class {
        for (c, mean) in means.iter().enumerate() {
            data.extend(mean.iter().map(|&m| (m + noise.sample(&mut rng)).clamp(0.0, 1.0)));
            labels.push(c);
        }
    }
    Ok(Dataset {
        images: Tensor::new(&[n, shape[0], shape[1], shape[2]], data).expect("sized above"),
        labels,
        num_classes,
        class_names: None,
        provenance: Provenance {
            source: format!("synthetic(classes={num_classes}, per_class={per_class}, separation={separation}, seed={seed})"),
            files: Vec::new(),
            normalization: "none".into(),
        },
    })
}
