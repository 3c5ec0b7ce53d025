//! kNN-distance anomaly scoring over learned representations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exhaustive k-nearest-neighbour scorer over one cluster's training
/// representations.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnScorer {
    refs: Vec<Vec<f64>>,
    k: usize,
}

/// Mean distance to the k nearest references (the score) and the k-th
/// distance alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnScore {
    pub mean: f64,
    pub kth: f64,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl KnnScorer {
    pub fn new(refs: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::invalid("kNN reference set is empty"));
        }
        if k == 0 || k > refs.len() {
            return Err(Error::invalid(format!(
                "k_nn = {k} must be between 1 and the reference size {}",
                refs.len()
            )));
        }
        let dim = refs[0].len();
        if refs.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("kNN references differ in dimension"));
        }
        Ok(Self { refs, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// Distances to the k nearest references, ascending; equal distances
    /// keep reference insertion order.
    pub fn neighbours(&self, q: &[f64]) -> Result<Vec<(usize, f64)>> {
        if q.len() != self.refs[0].len() {
            return Err(Error::invalid(format!(
                "query has dimension {}, references {}",
                q.len(),
                self.refs[0].len()
            )));
        }
        let mut d: Vec<(usize, f64)> = self.refs.iter().map(|r| euclidean(q, r)).enumerate().collect();
        d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        d.truncate(self.k);
        Ok(d)
    }

    pub fn score(&self, q: &[f64]) -> Result<KnnScore> {
        let nn = self.neighbours(q)?;
        Ok(KnnScore {
            mean: nn.iter().map(|(_, d)| d).sum::<f64>() / self.k as f64,
            kth: nn.last().expect("k >= 1").1,
        })
    }

    /// Scores every query; output order follows input order.
    pub fn score_all(&self, queries: &[Vec<f64>]) -> Result<Vec<KnnScore>> {
        queries.iter().map(|q| self.score(q)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Rng;

    fn cloud(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect()
    }

    #[test]
    fn two_point_line() {
        let s = KnnScorer::new(vec![vec![0.0], vec![10.0]], 2).unwrap();
        let r = s.score(&[4.0]).unwrap();
        assert_eq!(r.mean, 5.0);
        assert_eq!(r.kth, 6.0);
    }

    #[test]
    fn query_on_reference_scores_zero() {
        let refs = cloud(10, 3, 1);
        let s = KnnScorer::new(refs.clone(), 1).unwrap();
        assert_eq!(s.score(&refs[4]).unwrap().mean, 0.0);
    }

    #[test]
    fn construction_errors() {
        assert!(KnnScorer::new(vec![], 1).is_err());
        assert!(KnnScorer::new(cloud(3, 2, 1), 4).is_err());
        assert!(KnnScorer::new(cloud(3, 2, 1), 0).is_err());
        let s = KnnScorer::new(cloud(3, 2, 1), 1).unwrap();
        assert!(s.score(&[0.0]).is_err());
    }

    #[test]
    fn ties_follow_insertion_order() {
        let s = KnnScorer::new(vec![vec![1.0], vec![-1.0], vec![1.0]], 2).unwrap();
        let nn = s.neighbours(&[0.0]).unwrap();
        assert_eq!(nn.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn batch_partitioning_does_not_matter() {
        let s = KnnScorer::new(cloud(50, 4, 2), 5).unwrap();
        let q = cloud(21, 4, 3);
        let whole = s.score_all(&q).unwrap();
        let mut parts = s.score_all(&q[..8]).unwrap();
        parts.extend(s.score_all(&q[8..]).unwrap());
        assert_eq!(whole, parts);
        assert!(s.score_all(&[]).unwrap().is_empty());
        assert_eq!(s.score_all(&q[..1]).unwrap()[0], s.score(&q[0]).unwrap());
    }

    #[test]
    fn matches_all_pairs_oracle() {
        let refs = cloud(200, 3, 4);
        let queries = cloud(40, 3, 5);
        for k in [1, 5, 17] {
            let s = KnnScorer::new(refs.clone(), k).unwrap();
            for q in &queries {
                let mut d: Vec<f64> = refs
                    .iter()
                    .map(|r| (0..3).map(|i| (q[i] - r[i]).powi(2)).sum::<f64>().sqrt())
                    .collect();
                d.sort_by(f64::total_cmp);
                let want = d[..k].iter().sum::<f64>() / k as f64;
                assert_eq!(s.score(q).unwrap().mean, want);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn translation_invariant(seed in 0u64..300, shift in -5.0f64..5.0) {
            // Shifts on a dyadic grid keep the arithmetic exact.
            let shift = (shift * 8.0).round() / 8.0;
            let refs: Vec<Vec<f64>> = cloud(20, 2, seed).iter().map(|r| r.iter().map(|v| (v * 64.0).round() / 64.0).collect()).collect();
            let q: Vec<f64> = vec![0.5, -0.25];
            let a = KnnScorer::new(refs.clone(), 3).unwrap().score(&q).unwrap();
            let moved: Vec<Vec<f64>> = refs.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect();
            let qm: Vec<f64> = q.iter().map(|v| v + shift).collect();
            let b = KnnScorer::new(moved, 3).unwrap().score(&qm).unwrap();
            proptest::prop_assert_eq!(a, b);
        }

        #[test]
        fn score_grows_along_outward_ray(seed in 0u64..300) {
            let refs = cloud(15, 2, seed);
            let s = KnnScorer::new(refs, 4).unwrap();
            let dir = [0.6, 0.8];
            let mut last = 0.0;
            for t in [10.0, 20.0, 40.0, 80.0] {
                let v = s.score(&[dir[0] * t, dir[1] * t]).unwrap().mean;
                proptest::prop_assert!(v >= last);
                last = v;
            }
        }
    }
}
