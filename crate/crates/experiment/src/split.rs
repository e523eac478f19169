use meshres_core::augment::{augment_surface, stream_rng, AugmentConfig, Expanded};
use meshres_core::LabeledMesh;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ExperimentError;

/// Dataset indices per partition, each ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, then `floor(test_fraction * n)` (at least 1) test
/// surfaces and `floor(val_fraction * rest)` (at least 1) validation
/// surfaces; the remainder trains.
pub fn split(n: usize, test_fraction: f64, val_fraction: f64, seed: u64) -> Result<Split, ExperimentError> {
    if n < 5 {
        return Err(ExperimentError::DatasetTooSmall { n });
    }
    let n_test = ((test_fraction * n as f64).floor() as usize).max(1);
    let n_val = ((val_fraction * (n - n_test) as f64).floor() as usize).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split {
        test: sorted(&order[..n_test]),
        val: sorted(&order[n_test..n_test + n_val]),
        train: sorted(&order[n_test + n_val..]),
    })
}

/// Originals plus augmented copies of the selected surfaces. `source` in the
/// result is the dataset index, which also keys the random stream, so a
/// surface's copies do not depend on which partition it landed in.
pub fn augment_partition(surfaces: &[LabeledMesh], members: &[usize], config: &AugmentConfig) -> Vec<Expanded> {
    let mut out: Vec<Expanded> = members
        .iter()
        .map(|&i| Expanded {
            mesh: surfaces[i].clone(),
            source: i,
            copy: None,
            sample: None,
        })
        .collect();
    let jobs: Vec<(usize, usize)> = members
        .iter()
        .flat_map(|&i| (0..config.copies).map(move |c| (i, c)))
        .collect();
    let copies: Vec<Expanded> = jobs
        .par_iter()
        .map(|&(i, c)| {
            let (mesh, sample) = augment_surface(&surfaces[i], config, &mut stream_rng(config.seed, i, c));
            Expanded {
                mesh,
                source: i,
                copy: Some(c),
                sample: Some(sample),
            }
        })
        .collect();
    out.extend(copies);
    out
}
