use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Post, Result};
use crate::hashing::derive_seed_str;

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl CorpusSplit {
    pub fn contains_train(&self, id: &str) -> bool {
        self.train.binary_search_by(|x| x.as_str().cmp(id)).is_ok()
    }

    pub fn contains_dev(&self, id: &str) -> bool {
        self.dev.binary_search_by(|x| x.as_str().cmp(id)).is_ok()
    }

    pub fn contains_test(&self, id: &str) -> bool {
        self.test.binary_search_by(|x| x.as_str().cmp(id)).is_ok()
    }
}

/// Population-stratified train/dev/test split.
///
/// Groups are visited in name order and sized by cumulative rounding, so the
/// global split sizes stay within one post of the ratios. A population with at
/// least three posts is then guaranteed one post in each of dev and test,
/// taken from its train share. Id lists in the result are sorted.
pub fn split_corpus(posts: &[Post], ratios: [f64; 3], seed: u64) -> Result<CorpusSplit> {
    if posts.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidRatios(ratios));
    }

    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in posts {
        groups.entry(p.population.as_str()).or_default().push(p.id.as_str());
    }

    let mut split = CorpusSplit {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        seed,
    };
    let (mut seen, mut dev_so_far, mut test_so_far) = (0usize, 0usize, 0usize);
    for (population, mut ids) in groups {
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(seed, population));
        ids.shuffle(&mut rng);

        let n = ids.len();
        seen += n;
        let dev_target = (ratios[1] * seen as f64).round() as usize;
        let test_target = (ratios[2] * seen as f64).round() as usize;
        let mut n_dev = dev_target.saturating_sub(dev_so_far).min(n);
        let mut n_test = test_target.saturating_sub(test_so_far).min(n - n_dev);
        if n >= 3 {
            n_dev = n_dev.max(1);
            n_test = n_test.max(1);
            while n_dev + n_test > n - 1 {
                if n_dev >= n_test {
                    n_dev -= 1;
                } else {
                    n_test -= 1;
                }
            }
        }
        dev_so_far += n_dev;
        test_so_far += n_test;

        split.dev.extend(ids[..n_dev].iter().map(|s| s.to_string()));
        split
            .test
            .extend(ids[n_dev..n_dev + n_test].iter().map(|s| s.to_string()));
        split.train.extend(ids[n_dev + n_test..].iter().map(|s| s.to_string()));
    }
    split.train.sort();
    split.dev.sort();
    split.test.sort();
    Ok(split)
}
