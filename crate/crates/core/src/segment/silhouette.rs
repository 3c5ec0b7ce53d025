use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    /// Count of unequal coordinates; categorical codes are compared exactly.
    Hamming,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Hamming => a.iter().zip(b).filter(|(x, y)| x != y).count() as f64,
        }
    }
}

/// Above `cap` points, the silhouette is computed on a seeded uniform
/// subsample of `sample` points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilhouetteOptions {
    pub cap: usize,
    pub sample: usize,
    pub seed: u64,
}

impl Default for SilhouetteOptions {
    fn default() -> Self {
        Self {
            cap: 20_000,
            sample: 5_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteReport {
    /// Row indices the per-point values refer to (all rows unless subsampled).
    pub indices: Vec<usize>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sc: Vec<f64>,
    pub mean: f64,
}

/// Silhouette coefficient of every point: `(b - a) / max(a, b)` with `a` the
/// mean distance to the rest of its own cluster and `b` the lowest mean
/// distance to another cluster. Singletons score 0.
pub fn silhouette(x: &[Vec<f64>], assignments: &[usize], metric: Metric) -> Result<SilhouetteReport> {
    silhouette_with(x, assignments, metric, SilhouetteOptions::default())
}

pub fn silhouette_with(
    x: &[Vec<f64>],
    assignments: &[usize],
    metric: Metric,
    opts: SilhouetteOptions,
) -> Result<SilhouetteReport> {
    if x.len() != assignments.len() {
        return Err(Error::invalid("one assignment per point required"));
    }
    let indices: Vec<usize> = if x.len() > opts.cap {
        let mut s = Rng::new(opts.seed).sample_indices(x.len(), opts.sample.min(x.len()));
        s.sort_unstable();
        s
    } else {
        (0..x.len()).collect()
    };

    // Compact cluster ids so empty ids are skipped.
    let mut ids: Vec<usize> = indices.iter().map(|&i| assignments[i]).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::invalid("silhouette needs at least two non-empty clusters"));
    }
    let slot = |c: usize| ids.binary_search(&c).unwrap();
    let mut sizes = vec![0usize; ids.len()];
    for &i in &indices {
        sizes[slot(assignments[i])] += 1;
    }

    let mut a = Vec::with_capacity(indices.len());
    let mut b = Vec::with_capacity(indices.len());
    let mut sc = Vec::with_capacity(indices.len());
    let mut sums = vec![0.0; ids.len()];
    for &i in &indices {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for &j in &indices {
            if i != j {
                sums[slot(assignments[j])] += metric.distance(&x[i], &x[j]);
            }
        }
        let own = slot(assignments[i]);
        let (ai, bi, si) = if sizes[own] == 1 {
            let bi = (0..ids.len())
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            (0.0, bi, 0.0)
        } else {
            let ai = sums[own] / (sizes[own] - 1) as f64;
            let bi = (0..ids.len())
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = ai.max(bi);
            let si = if denom > 0.0 { (bi - ai) / denom } else { 0.0 };
            (ai, bi, si)
        };
        a.push(ai);
        b.push(bi);
        sc.push(si);
    }
    let mean = sc.iter().sum::<f64>() / sc.len() as f64;
    Ok(SilhouetteReport {
        indices,
        a,
        b,
        sc,
        mean,
    })
}
