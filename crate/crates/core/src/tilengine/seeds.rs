/// Independent random streams derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedRole {
    Backbone = 1,
    Adjustment = 2,
    Classifier = 3,
    Extension = 4,
    Shuffle = 5,
    Split = 6,
    Permutation = 7,
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for `role` at sequence position `index`. Depends only on the
/// position, never on which classes sit there.
pub fn derive_seed(master: u64, role: SeedRole, index: usize) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(role as u64)) ^ index as u64)
}
