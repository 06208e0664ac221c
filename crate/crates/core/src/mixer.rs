//! Mix-in: merges the task set with a seeded subset of the self corpus.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Provenance, RenderedExample};
use crate::error::{Error, Result};
use crate::sampler::self_count;

/// Effective self weight of the merged set, `lambda / (1 + lambda)`.
pub fn epsilon(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || lambda.is_nan() {
        return Err(Error::Config(format!("mix-in ratio must be positive, got {lambda}")));
    }
    if lambda.is_infinite() {
        return Ok(1.0);
    }
    Ok(lambda / (1.0 + lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub lambda: f64,
    pub seed: u64,
}

/// Sidecar metadata written next to a merged dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixManifest {
    pub lambda: f64,
    pub epsilon: f64,
    pub n_task: usize,
    pub n_self: usize,
    pub n_total: usize,
    pub mix_seed: u64,
    pub task_seed: u64,
    pub self_seed: u64,
    /// True when `lambda * n_task` is an integer, so the merged set has
    /// exactly the `epsilon` self share.
    pub exact: bool,
}

/// The first `m` self examples after a seeded shuffle.
pub fn select_self(self_data: &Dataset, m: usize, seed: u64) -> Result<Vec<RenderedExample>> {
    if self_data.len() < m {
        return Err(Error::InsufficientSelf {
            need: m,
            have: self_data.len(),
        });
    }
    let mut idx: Vec<usize> = (0..self_data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(idx[..m].iter().map(|&i| self_data.examples[i].clone()).collect())
}

/// `D_mix = D_task ∪ first floor(lambda N) of shuffled D_self`, globally
/// shuffled. Example `meta.origin` keeps each example's source.
pub fn mix(task: &Dataset, self_data: &Dataset, spec: MixSpec) -> Result<(Dataset, MixManifest)> {
    if task.vocab != self_data.vocab {
        return Err(Error::VocabMismatch);
    }
    let eps = epsilon(spec.lambda)?;
    let n = task.len();
    let m = self_count(spec.lambda, n)?;
    let selected = select_self(self_data, m, spec.seed)?;
    let mut examples: Vec<RenderedExample> = task.examples.clone();
    examples.extend(selected);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    examples.shuffle(&mut rng);
    let total = examples.len();
    let ds = Dataset::new("mix", examples, Provenance::Mix, spec.seed, task.vocab.clone())?;
    let manifest = MixManifest {
        lambda: spec.lambda,
        epsilon: eps,
        n_task: n,
        n_self: m,
        n_total: total,
        mix_seed: spec.seed,
        task_seed: task.seed,
        self_seed: self_data.seed,
        exact: (spec.lambda * n as f64 - m as f64).abs() < 1e-9,
    };
    Ok((ds, manifest))
}
