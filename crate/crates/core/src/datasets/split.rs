use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};

/// Shuffles `indices` with `seed` and cuts at `floor(fraction * n)`.
/// Both halves are returned in ascending order.
pub fn split_indices(indices: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n = indices.len();
    let cut = (fraction * n as f64).floor() as usize;
    if cut == 0 {
        return Err(DataError::TaskTooSmall(format!(
            "{n} samples leave no training data at fraction {fraction}; add samples or raise the fraction"
        )));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (mut train, mut val) = (shuffled[..cut].to_vec(), shuffled[cut..].to_vec());
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub fn split_train_val(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let (train, val) = split_indices(&all, fraction, seed)?;
    if val.is_empty() {
        return Err(DataError::TaskTooSmall(format!("{} samples leave no validation data", dataset.len())));
    }
    Ok((dataset.subset(&train)?, dataset.subset(&val)?))
}
