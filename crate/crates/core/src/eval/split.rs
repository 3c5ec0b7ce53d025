use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{derive_seed, Rng};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Per-cluster user-level train/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub ratio: f64,
    pub seed: u64,
    pub clusters: BTreeMap<usize, ClusterSplit>,
}

impl Split {
    /// `(cluster, is_test)` of every user.
    pub fn side_of(&self) -> BTreeMap<&str, (usize, bool)> {
        let mut out = BTreeMap::new();
        for (&c, s) in &self.clusters {
            for u in &s.train {
                out.insert(u.as_str(), (c, false));
            }
            for u in &s.test {
                out.insert(u.as_str(), (c, true));
            }
        }
        out
    }
}

/// Test size for a cluster of `n` users: `round(ratio·n)`, at least 1,
/// leaving at least one training user.
pub fn test_count(n: usize, ratio: f64) -> usize {
    if n < 2 {
        return 0;
    }
    ((ratio * n as f64).round() as usize).clamp(1, n - 1)
}

/// Samples `test_count` users per cluster without replacement. Users are
/// sorted first so the result does not depend on input order; a cluster
/// with a single user keeps it for training.
pub fn split_users(users: &BTreeMap<usize, Vec<String>>, ratio: f64, seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::config("test_ratio", "must be in [0, 1)"));
    }
    let mut clusters = BTreeMap::new();
    for (&c, members) in users {
        let mut sorted = members.clone();
        sorted.sort();
        sorted.dedup();
        let n = sorted.len();
        if n == 1 {
            log::warn!("cluster {c} has a single user; it goes to training and the cluster has no test set");
        }
        let k = test_count(n, ratio);
        let mut rng = Rng::new(derive_seed(seed, &format!("split-{c}")));
        let mut picked = vec![false; n];
        for i in rng.sample_indices(n, k) {
            picked[i] = true;
        }
        let mut s = ClusterSplit::default();
        for (u, t) in sorted.into_iter().zip(picked) {
            if t {
                s.test.push(u);
            } else {
                s.train.push(u);
            }
        }
        clusters.insert(c, s);
    }
    Ok(Split { ratio, seed, clusters })
}
