use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{round_half_up, Dataset, PreferencePair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub val_size: usize,
    /// Share of the pairs left after removing validation that go to test.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            val_size: 100,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Disjoint train / validation / test partitions; each sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub split_seed: u64,
}

impl DatasetSplit {
    /// Same validation and test sets, different training set.
    pub fn with_train(&self, train: Dataset) -> DatasetSplit {
        DatasetSplit {
            train,
            val: self.val.clone(),
            test: self.test.clone(),
            split_seed: self.split_seed,
        }
    }
}

/// Seeded shuffle, then the first `val_size` pairs go to validation, the
/// next `round(test_fraction · rest)` to test and the remainder to train.
pub fn split(dataset: &Dataset, config: &SplitConfig) -> Result<DatasetSplit> {
    if config.val_size >= dataset.len() {
        return Err(Error::invalid(format!(
            "validation size {} must be smaller than the dataset ({} pairs)",
            config.val_size,
            dataset.len()
        )));
    }
    if !(0.0..1.0).contains(&config.test_fraction) {
        return Err(Error::invalid(format!(
            "test fraction must lie in [0, 1), got {}",
            config.test_fraction
        )));
    }
    let mut order: Vec<&PreferencePair> = dataset.iter().collect();
    order.sort_by_key(|p| p.id);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    order.shuffle(&mut rng);

    let rest = order.len() - config.val_size;
    let n_test = round_half_up(rest as f64 * config.test_fraction).min(rest);
    let (val, tail) = order.split_at(config.val_size);
    let (test, train) = tail.split_at(n_test);

    let collect = |part: &[&PreferencePair]| {
        let mut v: Vec<PreferencePair> = part.iter().map(|&p| p.clone()).collect();
        v.sort_by_key(|p| p.id);
        Dataset::new(v)
    };
    Ok(DatasetSplit {
        train: collect(train)?,
        val: collect(val)?,
        test: collect(test)?,
        split_seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn dataset(n: usize) -> Dataset {
        Dataset::new(
            (0..n as u64)
                .map(|i| PreferencePair::new(i, vec![i as u32 % 7], vec![1]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn paper_sized_validation_set() {
        let ds = dataset(8500);
        let s = split(&ds, &SplitConfig { val_size: 100, test_fraction: 0.2, seed: 3 }).unwrap();
        assert_eq!(s.val.len(), 100);
        assert_eq!(s.test.len(), 1680);
        assert_eq!(s.train.len(), 6720);
    }

    #[test]
    fn empty_validation_is_allowed() {
        let ds = dataset(10);
        let s = split(&ds, &SplitConfig { val_size: 0, test_fraction: 0.3, seed: 1 }).unwrap();
        assert!(s.val.is_empty());
        assert_eq!(s.test.len(), 3);
        assert_eq!(s.train.len(), 7);
    }

    #[test]
    fn oversized_validation_is_rejected() {
        let ds = dataset(10);
        assert!(split(&ds, &SplitConfig { val_size: 10, test_fraction: 0.2, seed: 0 }).is_err());
    }

    proptest! {
        #[test]
        fn splits_are_disjoint_complete_and_deterministic(
            n in 2usize..200, val_frac in 0.0f64..0.9, test_fraction in 0.0f64..0.99, seed in any::<u64>()
        ) {
            let ds = dataset(n);
            let val_size = ((n - 1) as f64 * val_frac) as usize;
            let cfg = SplitConfig { val_size, test_fraction, seed };
            let a = split(&ds, &cfg).unwrap();
            let b = split(&ds, &cfg).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.val.len(), val_size);
            let mut all = HashSet::new();
            for part in [&a.train, &a.val, &a.test] {
                for id in part.ids() {
                    prop_assert!(all.insert(id));
                }
            }
            prop_assert_eq!(all.len(), n);
        }
    }
}
