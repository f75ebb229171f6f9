//! Stratified train/validation/test partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::derive_seed;
use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config(format!(
                "split ratios must be non-negative, got {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {parts:?}")));
        }
        Ok(())
    }

    /// Cell sizes: train and validation are floored, the remainder is test.
    pub fn cell_counts(&self, n: usize) -> (usize, usize, usize) {
        // the epsilon keeps products like 0.6 * 100 from flooring to 59
        let train = (n as f64 * self.train + 1e-9).floor() as usize;
        let val = ((n as f64 * self.val + 1e-9).floor() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// Indices into the source dataset, each list ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub indices: SplitIndices,
}

/// Splits every (class, SNR) cell independently after a seeded shuffle.
pub fn split_dataset(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Split> {
    ratios.validate()?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let key = |i: usize| (ds.examples()[i].label, ds.examples()[i].snr_db);
    order.sort_by(|&a, &b| {
        let (la, sa) = key(a);
        let (lb, sb) = key(b);
        la.cmp(&lb).then(sa.total_cmp(&sb)).then(a.cmp(&b))
    });

    let mut indices = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for cell in order.chunk_by(|&a, &b| key(a) == key(b)) {
        let (label, snr) = key(cell[0]);
        let (n_train, n_val, n_test) = ratios.cell_counts(cell.len());
        if n_test == 0 {
            return Err(Error::Config(format!(
                "cell (class {label}, {snr} dB) has {} examples, too few for a test share",
                cell.len()
            )));
        }
        let mut shuffled = cell.to_vec();
        let cell_seed = derive_seed(seed, &[label as u64, snr.to_bits() as u64]);
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(cell_seed));
        indices.train.extend_from_slice(&shuffled[..n_train]);
        indices.val.extend_from_slice(&shuffled[n_train..n_train + n_val]);
        indices.test.extend_from_slice(&shuffled[n_train + n_val..]);
    }
    indices.train.sort_unstable();
    indices.val.sort_unstable();
    indices.test.sort_unstable();

    Ok(Split {
        train: ds.subset(&indices.train),
        val: ds.subset(&indices.val),
        test: ds.subset(&indices.test),
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synthesize_dataset, GenerationConfig, Modulation};

    fn data(per_cell: usize) -> Dataset {
        synthesize_dataset(&GenerationConfig {
            classes: vec![Modulation::Bpsk, Modulation::Qpsk],
            snr_grid: vec![0.0, 10.0],
            per_cell,
            length: 16,
            ..GenerationConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn sixty_twenty_twenty_per_cell() {
        let ds = data(100);
        let split = split_dataset(&ds, SplitRatios::default(), 42).unwrap();
        assert_eq!(split.train.len(), 4 * 60);
        assert_eq!(split.val.len(), 4 * 20);
        assert_eq!(split.test.len(), 4 * 20);
        for part in [&split.train, &split.val, &split.test] {
            let per_cell = part.len() / 4;
            for label in 0..2 {
                for snr in [0.0, 10.0] {
                    let n = part
                        .examples()
                        .iter()
                        .filter(|e| e.label == label && e.snr_db == snr)
                        .count();
                    assert_eq!(n, per_cell);
                }
            }
        }
    }

    #[test]
    fn partition_is_disjoint_exhaustive_and_seeded() {
        let ds = data(7);
        let a = split_dataset(&ds, SplitRatios::default(), 42).unwrap();
        let mut all: Vec<usize> = a
            .indices
            .train
            .iter()
            .chain(&a.indices.val)
            .chain(&a.indices.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        let b = split_dataset(&ds, SplitRatios::default(), 42).unwrap();
        assert_eq!(a.indices, b.indices);
        let c = split_dataset(&ds, SplitRatios::default(), 43).unwrap();
        assert_ne!(a.indices, c.indices);
    }

    #[test]
    fn rounding_floors_train_and_val() {
        let r = SplitRatios::default();
        assert_eq!(r.cell_counts(7), (4, 1, 2));
        assert_eq!(r.cell_counts(5), (3, 1, 1));
        let odd = SplitRatios {
            train: 0.29,
            val: 0.31,
            test: 0.4,
        };
        assert_eq!(odd.cell_counts(100), (29, 31, 40));
    }

    #[test]
    fn too_small_cells_and_bad_ratios_rejected() {
        let no_test = SplitRatios {
            train: 0.5,
            val: 0.5,
            test: 0.0,
        };
        assert!(matches!(split_dataset(&data(2), no_test, 1), Err(Error::Config(_))));
        let bad = SplitRatios {
            train: 0.7,
            val: 0.2,
            test: 0.2,
        };
        assert!(matches!(split_dataset(&data(10), bad, 1), Err(Error::Config(_))));
    }
}
