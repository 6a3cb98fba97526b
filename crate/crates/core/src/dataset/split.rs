use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SnapshotDataset;
use crate::error::{Error, Result};

/// Training pairs are `train_sim_ids x {t_0, .., t_{cutoff-1}}`; everything
/// else is test data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_sim_ids: Vec<usize>,
    pub train_time_cutoff: usize,
    pub rng_seed: u64,
}

impl SplitSpec {
    /// Every pair is a training pair.
    pub fn full(dataset: &SnapshotDataset) -> Self {
        SplitSpec {
            train_sim_ids: (0..dataset.num_sims()).collect(),
            train_time_cutoff: dataset.num_times(),
            rng_seed: 0,
        }
    }

    pub fn validate(&self, dataset: &SnapshotDataset) -> Result<()> {
        if self.train_sim_ids.is_empty() || self.train_time_cutoff == 0 {
            return Err(Error::Config("training split is empty".into()));
        }
        if self.train_time_cutoff > dataset.num_times() {
            return Err(Error::Config(format!(
                "training time cutoff {} exceeds the {} available instants",
                self.train_time_cutoff,
                dataset.num_times()
            )));
        }
        if let Some(&bad) = self.train_sim_ids.iter().find(|&&s| s >= dataset.num_sims()) {
            return Err(Error::Config(format!(
                "training simulation {bad} does not exist (dataset has {})",
                dataset.num_sims()
            )));
        }
        Ok(())
    }

    pub fn is_train_sim(&self, sim: usize) -> bool {
        self.train_sim_ids.contains(&sim)
    }

    pub fn is_train_pair(&self, sim: usize, k: usize) -> bool {
        k < self.train_time_cutoff && self.is_train_sim(sim)
    }

    pub fn test_sim_ids(&self, num_sims: usize) -> Vec<usize> {
        (0..num_sims).filter(|s| !self.is_train_sim(*s)).collect()
    }

    pub fn num_train_pairs(&self) -> usize {
        self.train_sim_ids.len() * self.train_time_cutoff
    }
}

fn fraction_count(ratio: f64, total: usize) -> usize {
    // guard against products like 0.29 * 100 = 28.999999999999996
    (ratio * total as f64 + 1e-9).floor() as usize
}

/// Random simulation subset of size `floor(ratio_mu * N_mu)` and time cutoff
/// `floor(ratio_t * N_t)`, deterministic in `seed`.
pub fn split_dataset(dataset: &SnapshotDataset, ratio_mu: f64, ratio_t: f64, seed: u64) -> Result<SplitSpec> {
    for (name, r) in [("ratio_mu", ratio_mu), ("ratio_t", ratio_t)] {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Config(format!("{name} = {r} is outside (0, 1]")));
        }
    }
    let n_train = fraction_count(ratio_mu, dataset.num_sims());
    let cutoff = fraction_count(ratio_t, dataset.num_times());
    if n_train == 0 || cutoff == 0 {
        return Err(Error::Config(format!(
            "split ratios ({ratio_mu}, {ratio_t}) leave an empty training set"
        )));
    }
    let mut ids: Vec<usize> = (0..dataset.num_sims()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_sim_ids = ids[..n_train].to_vec();
    train_sim_ids.sort_unstable();
    Ok(SplitSpec {
        train_sim_ids,
        train_time_cutoff: cutoff,
        rng_seed: seed,
    })
}
