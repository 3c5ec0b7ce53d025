//! User segmentation: k-means, k-modes, silhouette scoring and choice of k.

mod kmeans;
mod kmodes;
mod silhouette;

use serde::{Deserialize, Serialize};

pub use kmeans::kmeans_fit;
pub use kmodes::{hamming, kmodes_fit};
pub use silhouette::{silhouette, silhouette_with, Metric, SilhouetteOptions, SilhouetteReport};

use crate::error::{Error, Result};
use crate::numkernel::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    KMeans,
    KModes,
}

impl Method {
    pub fn metric(self) -> Metric {
        match self {
            Method::KMeans => Metric::Euclidean,
            Method::KModes => Metric::Hamming,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centers {
    Numeric(Vec<Vec<f64>>),
    Categorical(Vec<Vec<u32>>),
}

/// Rows handed to a clusterer.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterData {
    Numeric(Vec<Vec<f64>>),
    Categorical(Vec<Vec<u32>>),
}

impl ClusterData {
    pub fn len(&self) -> usize {
        match self {
            ClusterData::Numeric(x) => x.len(),
            ClusterData::Categorical(x) => x.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn method(&self) -> Method {
        match self {
            ClusterData::Numeric(_) => Method::KMeans,
            ClusterData::Categorical(_) => Method::KModes,
        }
    }

    /// Rows as floats for the silhouette; categorical codes convert exactly.
    pub fn as_f64(&self) -> Vec<Vec<f64>> {
        match self {
            ClusterData::Numeric(x) => x.clone(),
            ClusterData::Categorical(x) => x.iter().map(|r| r.iter().map(|v| f64::from(*v)).collect()).collect(),
        }
    }

    pub fn fit(&self, k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
        match self {
            ClusterData::Numeric(x) => kmeans_fit(x, k, seed, max_iter),
            ClusterData::Categorical(x) => kmodes_fit(x, k, seed, max_iter),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub method: Method,
    pub k: usize,
    pub centers: Centers,
    /// Cluster id per input row, in `0..k`.
    pub assignments: Vec<usize>,
    /// Final within-cluster cost (inertia or total Hamming mismatch).
    pub inertia: f64,
    /// Cost after every assignment step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl ClusterModel {
    /// Cluster of an unseen numeric row (k-means models only).
    pub fn predict_numeric(&self, x: &[f64]) -> Option<usize> {
        match &self.centers {
            Centers::Numeric(c) => Some(kmeans::nearest(x, c).0),
            Centers::Categorical(_) => None,
        }
    }

    pub fn predict_categorical(&self, x: &[u32]) -> Option<usize> {
        match &self.centers {
            Centers::Categorical(m) => Some(kmodes::nearest_mode(x, m).0),
            Centers::Numeric(_) => None,
        }
    }
}

pub(crate) fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the number of points ({n})")));
    }
    Ok(())
}

/// Seed for the fit at a given k, so per-k fits are independent streams.
pub fn seed_for_k(seed: u64, k: usize) -> u64 {
    derive_seed(seed, &format!("k={k}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub best_k: usize,
    /// (k, mean silhouette) for every k tried, ascending in k.
    pub scores: Vec<(usize, f64)>,
    pub model: ClusterModel,
}

/// Fits every k in `k_range` and keeps the one with the highest mean
/// silhouette; ties go to the smallest k.
pub fn select_k(
    data: &ClusterData,
    k_range: std::ops::RangeInclusive<usize>,
    seed: u64,
    max_iter: usize,
    sil: SilhouetteOptions,
) -> Result<KSelection> {
    let n = data.len();
    if k_range.is_empty() {
        return Err(Error::invalid("empty k range"));
    }
    if *k_range.start() < 2 || *k_range.end() + 1 > n {
        return Err(Error::invalid(format!(
            "k range {}..={} must lie within 2..={} for {n} points",
            k_range.start(),
            k_range.end(),
            n.saturating_sub(1)
        )));
    }
    let rows = data.as_f64();
    let metric = data.method().metric();
    let mut scores = Vec::new();
    let mut best: Option<(f64, ClusterModel)> = None;
    for k in k_range {
        let model = data.fit(k, seed_for_k(seed, k), max_iter)?;
        let mean = match silhouette_with(&rows, &model.assignments, metric, sil) {
            Ok(r) => r.mean,
            // every point landed in one cluster (duplicate rows)
            Err(_) => f64::NEG_INFINITY,
        };
        log::debug!("k = {k}: mean silhouette {mean:.4}");
        scores.push((k, mean));
        if best.as_ref().is_none_or(|(b, _)| mean > *b) {
            best = Some((mean, model));
        }
    }
    let (_, model) = best.unwrap();
    Ok(KSelection {
        best_k: model.k,
        scores,
        model,
    })
}

/// Sorts rows by user id so fits do not depend on input order.
pub fn canonical_order<T: Clone>(user_ids: &[String], rows: &[T]) -> (Vec<String>, Vec<T>) {
    let mut idx: Vec<usize> = (0..user_ids.len()).collect();
    idx.sort_by(|a, b| user_ids[*a].cmp(&user_ids[*b]));
    (
        idx.iter().map(|&i| user_ids[i].clone()).collect(),
        idx.iter().map(|&i| rows[i].clone()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Rng;

    fn blobs(seed: u64, centers: &[[f64; 2]], per: usize, sigma: f64) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        let mut x = Vec::new();
        for c in centers {
            for _ in 0..per {
                x.push(vec![c[0] + sigma * rng.normal(), c[1] + sigma * rng.normal()]);
            }
        }
        x
    }

    #[test]
    fn three_gaussians_pick_three() {
        let mut hits = 0;
        for seed in 0..10 {
            let x = blobs(seed, &[[0.0, 0.0], [20.0, 0.0], [10.0, 17.0]], 40, 1.0);
            let sel = select_k(&ClusterData::Numeric(x), 2..=8, seed, 100, SilhouetteOptions::default()).unwrap();
            if sel.best_k == 3 {
                hits += 1;
            }
            assert_eq!(sel.scores.len(), 7);
        }
        assert!(hits >= 9, "{hits}/10");
    }

    #[test]
    fn select_k_is_deterministic() {
        let x = ClusterData::Numeric(blobs(3, &[[0.0, 0.0], [5.0, 5.0]], 30, 2.0));
        let a = select_k(&x, 2..=5, 11, 100, SilhouetteOptions::default()).unwrap();
        let b = select_k(&x, 2..=5, 11, 100, SilhouetteOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_ranges_rejected() {
        let x = ClusterData::Numeric(blobs(3, &[[0.0, 0.0]], 5, 1.0));
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 3..=2;
        assert!(select_k(&x, empty, 0, 10, SilhouetteOptions::default()).is_err());
        assert!(select_k(&x, 1..=3, 0, 10, SilhouetteOptions::default()).is_err());
        assert!(select_k(&x, 2..=5, 0, 10, SilhouetteOptions::default()).is_err());
    }

    #[test]
    fn assignment_invariant_under_row_permutation() {
        let x = blobs(8, &[[0.0, 0.0], [9.0, 0.0], [0.0, 9.0]], 15, 1.5);
        let ids: Vec<String> = (0..x.len()).map(|i| format!("user{i:03}")).collect();
        let fit = |ids: &[String], rows: &[Vec<f64>]| {
            let (ids, rows) = canonical_order(ids, rows);
            let m = kmeans_fit(&rows, 3, 5, 100).unwrap();
            ids.into_iter().zip(m.assignments).collect::<std::collections::BTreeMap<_, _>>()
        };
        let base = fit(&ids, &x);
        let mut perm: Vec<usize> = (0..x.len()).collect();
        Rng::new(1).shuffle(&mut perm);
        let pids: Vec<String> = perm.iter().map(|&i| ids[i].clone()).collect();
        let px: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
        assert_eq!(fit(&pids, &px), base);
    }
}
