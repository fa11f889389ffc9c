//! Sequence-level dataset splits.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Split sizes for `n` sequences at 7:2:1. Validation and test round down;
/// the remainder goes to training.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n * 2 / 10;
    let test = n / 10;
    (n - val - test, val, test)
}

/// Assigns each of `n` sequences to a split through a seeded permutation.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let (_, val, test) = split_sizes(n);
    let mut out = vec![Split::Train; n];
    let perm = rng::permutation(&mut rng::stream(seed, 0x5911), n);
    for (rank, &i) in perm.iter().enumerate() {
        if rank < val {
            out[i] = Split::Val;
        } else if rank < val + test {
            out[i] = Split::Test;
        }
    }
    out
}
