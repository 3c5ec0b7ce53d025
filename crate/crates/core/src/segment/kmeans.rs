use super::{check_k, ClusterModel, Centers, Method};
use crate::error::{Error, Result};
use crate::numkernel::Rng;

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
pub(crate) fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(x: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![x[rng.below(x.len())].clone()];
    let mut d2: Vec<f64> = x.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let next = rng.weighted_index(&d2);
        centers.push(x[next].clone());
        let c = centers.last().unwrap();
        for (d, p) in d2.iter_mut().zip(x) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centers
}

fn assign(x: &[Vec<f64>], centers: &[Vec<f64>], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in x.iter().enumerate() {
        let (j, d) = nearest(p, centers);
        labels[i] = j;
        dists[i] = d;
        inertia += d;
    }
    inertia
}

/// Lloyd's algorithm on squared Euclidean distance from a k-means++ start.
///
/// Stops at an assignment fixpoint or after `max_iter` update rounds. An
/// empty cluster is reseeded at the point farthest from its current center.
/// `cost_history` records the inertia after every assignment step.
pub fn kmeans_fit(x: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    check_k(x.len(), k)?;
    let m = x[0].len();
    if x.iter().any(|r| r.len() != m) {
        return Err(Error::invalid("k-means rows differ in dimension"));
    }
    let mut rng = Rng::new(seed);
    let mut centers = plus_plus_init(x, k, &mut rng);
    let n = x.len();
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    let mut history = vec![assign(x, &centers, &mut labels, &mut dists)];
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; m]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in x.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|i| !taken[*i])
                    .max_by(|a, b| dists[*a].total_cmp(&dists[*b]).then(b.cmp(a)))
                    .unwrap_or(0);
                taken[far] = true;
                centers[j] = x[far].clone();
            }
        }
        let prev = labels.clone();
        history.push(assign(x, &centers, &mut labels, &mut dists));
        // A reseed that moves no point would repeat forever.
        if labels == prev {
            break;
        }
    }

    Ok(ClusterModel {
        method: Method::KMeans,
        k,
        inertia: *history.last().unwrap(),
        centers: Centers::Numeric(centers),
        assignments: labels,
        cost_history: history,
        iterations,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_center_is_mean() {
        let x = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        let m = kmeans_fit(&x, 1, 0, 50).unwrap();
        let Centers::Numeric(c) = &m.centers else { panic!() };
        assert!((c[0][0] - 3.0).abs() < 1e-12 && (c[0][1] - 3.0).abs() < 1e-12);
        assert!(m.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn two_blobs_separate() {
        let mut rng = Rng::new(4);
        let mut x = Vec::new();
        for c in [0.0, 100.0] {
            for _ in 0..50 {
                x.push(vec![c + rng.normal(), c + rng.normal()]);
            }
        }
        for seed in 0..5 {
            let m = kmeans_fit(&x, 2, seed, 100).unwrap();
            let a = &m.assignments;
            assert!(a[..50].iter().all(|&l| l == a[0]));
            assert!(a[50..].iter().all(|&l| l == a[50]));
            assert_ne!(a[0], a[50]);
        }
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let x = vec![vec![0.0], vec![1.0], vec![5.0], vec![9.0]];
        let m = kmeans_fit(&x, 4, 3, 100).unwrap();
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn k_greater_than_n_rejected() {
        assert!(kmeans_fit(&[vec![0.0]], 2, 0, 10).is_err());
        assert!(kmeans_fit(&[vec![0.0]], 0, 0, 10).is_err());
    }

    #[test]
    fn duplicate_points_trigger_reseed() {
        // Three identical points and one outlier; k = 3 forces empty clusters
        // whenever k-means++ picks duplicates.
        let x = vec![vec![0.0], vec![0.0], vec![0.0], vec![10.0]];
        let m = kmeans_fit(&x, 3, 1, 20).unwrap();
        assert_eq!(m.inertia, 0.0);
    }

    proptest::proptest! {
        #[test]
        fn inertia_never_increases(seed in 0u64..500, n in 3usize..60, k in 1usize..6) {
            let k = k.min(n);
            let mut rng = Rng::new(seed);
            let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal() * 3.0, rng.normal(), rng.uniform()]).collect();
            let m = kmeans_fit(&x, k, seed, 100).unwrap();
            for w in m.cost_history.windows(2) {
                proptest::prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", m.cost_history);
            }
            proptest::prop_assert!(m.assignments.iter().all(|&a| a < k));
        }
    }
}
