use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, TableHandle};

/// Row indices of the 8:2 train/validation partition, each part sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Shuffles `0..n_rows` with `seed` and keeps `floor(0.8 * n_rows)` rows for
/// training. No stratification.
pub fn split_indices(n_rows: usize, seed: u64) -> Result<Split, DatasetError> {
    if n_rows < 2 {
        return Err(DatasetError::TooFewRows(n_rows));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n_rows * 4 / 5;
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok(Split { seed, train, val })
}

pub fn split_train_val(table: &TableHandle, seed: u64) -> Result<Split, DatasetError> {
    split_indices(table.n_rows, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_rows_give_eight_two() {
        for seed in [0, 1, 42, u64::MAX] {
            let s = split_indices(10, seed).unwrap();
            assert_eq!((s.train.len(), s.val.len()), (8, 2));
        }
    }

    #[test]
    fn five_rows_floor_rule() {
        let s = split_indices(5, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (4, 1));
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(split_indices(1, 0), Err(DatasetError::TooFewRows(1))));
        assert!(matches!(split_indices(0, 0), Err(DatasetError::TooFewRows(0))));
    }

    #[test]
    fn different_seeds_differ() {
        let a = split_indices(100, 1).unwrap();
        let b = split_indices(100, 2).unwrap();
        assert_ne!(a.train, b.train);
    }

    proptest! {
        #[test]
        fn partition_properties(n in 2usize..2000, seed in any::<u64>()) {
            let s = split_indices(n, seed).unwrap();
            prop_assert_eq!(s.train.len(), (n as f64 * 0.8).floor() as usize);
            prop_assert_eq!(s.train.len() + s.val.len(), n);
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s, split_indices(n, seed).unwrap());
        }
    }
}
