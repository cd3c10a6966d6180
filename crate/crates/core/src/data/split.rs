use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{preprocess, Dataset, PreprocessOptions, Split, Trajectory};
use crate::{Error, Result};

/// Per-signal standard deviations of additive Gaussian noise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSigma {
    pub q: f64,
    pub dq: f64,
    pub tau: f64,
}

/// Reassigns splits by a seeded shuffle: the first `train` shuffled jumps
/// go to training, the next `val` to validation, the rest to test.
pub fn split_dataset<J: Clone>(dataset: &Dataset<J>, counts: (usize, usize, usize), seed: u64) -> Result<Dataset<J>> {
    let (train, val, test) = counts;
    if train + val + test != dataset.len() {
        return Err(Error::Config(format!(
            "split counts {train}+{val}+{test} do not cover {} jumps",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::Test; dataset.len()];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(Dataset {
        jumps: dataset.jumps.clone(),
        split,
        metadata: dataset.metadata.clone(),
    })
}

pub(crate) fn perturb<R: rand::Rng>(raw: &mut Trajectory, sigma: &NoiseSigma, rng: &mut R) {
    for (mat, s) in [(&mut raw.q, sigma.q), (&mut raw.dq, sigma.dq), (&mut raw.tau, sigma.tau)] {
        if s > 0.0 {
            let normal = Normal::new(0.0, s).expect("finite sigma");
            mat.iter_mut().for_each(|x| *x += normal.sample(rng));
        }
    }
}

pub(crate) fn check_sigma(sigma: &NoiseSigma) -> Result<()> {
    for (name, s) in [("q", sigma.q), ("dq", sigma.dq), ("tau", sigma.tau)] {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::Config(format!("noise sigma for {name} must be >= 0, got {s}")));
        }
    }
    Ok(())
}

/// Adds i.i.d. zero-mean Gaussian noise to `q`, `dq` and `tau` of every
/// jump and recomputes the derived signals from the noisy recordings.
pub fn add_noise(dataset: &Dataset, sigma: &NoiseSigma, seed: u64, opts: &PreprocessOptions) -> Result<Dataset> {
    check_sigma(sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jumps = Vec::with_capacity(dataset.len());
    for jump in &dataset.jumps {
        let mut raw = jump.raw.clone();
        perturb(&mut raw, sigma, &mut rng);
        jumps.push(preprocess(&raw, opts)?);
    }
    let mut metadata = dataset.metadata.clone();
    if sigma.q > 0.0 || sigma.dq > 0.0 || sigma.tau > 0.0 {
        metadata.noise = Some(sigma.clone());
    }
    Ok(Dataset {
        jumps,
        split: dataset.split.clone(),
        metadata,
    })
}
