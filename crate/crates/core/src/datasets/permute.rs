use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

/// One pixel permutation per task; `perms[0]` is the identity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSet {
    pub perms: Vec<Vec<usize>>,
    pub seed: u64,
}

impl PermutationSet {
    /// Task 1 keeps pixel order; tasks 2.. get independent uniform
    /// permutations of `pixels` indices.
    pub fn new(num_tasks: usize, pixels: usize, seed: u64) -> Result<Self, DataError> {
        if num_tasks == 0 || pixels == 0 {
            return Err(DataError::InvalidArgument("permutations need at least one task and one pixel".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perms = vec![(0..pixels).collect::<Vec<_>>()];
        for _ in 1..num_tasks {
            let mut p: Vec<usize> = (0..pixels).collect();
            p.shuffle(&mut rng);
            perms.push(p);
        }
        Ok(PermutationSet { perms, seed })
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn is_bijection(perm: &[usize]) -> bool {
        let mut seen = vec![false; perm.len()];
        perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true))
    }

    pub fn inverse(perm: &[usize]) -> Vec<usize> {
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        inv
    }
}

/// `out[c, i] = x[c, perm[i]]` for every channel of one sample.
pub(crate) fn apply_into(perm: &[usize], x: &[f32], out: &mut [f32]) {
    let plane = perm.len();
    for (xc, oc) in x.chunks_exact(plane).zip(out.chunks_exact_mut(plane)) {
        for (o, &p) in oc.iter_mut().zip(perm) {
            *o = xc[p];
        }
    }
}

/// Permutes every sample of a flat `[N, C, plane]` buffer.
pub fn apply_permutation(perm: &[usize], x: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    apply_into(perm, x, &mut out);
    out
}

pub fn make_permutations(num_tasks: usize, pixels: usize, seed: u64) -> Result<PermutationSet, DataError> {
    PermutationSet::new(num_tasks, pixels, seed)
}
