use std::collections::BTreeMap;

use super::{check_k, Centers, ClusterModel, Method};
use crate::error::{Error, Result};
use crate::numkernel::Rng;

/// Number of mismatched attributes.
pub fn hamming(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

pub(crate) fn nearest_mode(x: &[u32], modes: &[Vec<u32>]) -> (usize, usize) {
    let mut best = (0, usize::MAX);
    for (j, m) in modes.iter().enumerate() {
        let d = hamming(x, m);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Per-attribute most frequent category; ties go to the lowest category.
fn mode_of<'a>(rows: impl Iterator<Item = &'a Vec<u32>>, m: usize) -> Option<Vec<u32>> {
    let mut freq: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); m];
    let mut any = false;
    for r in rows {
        any = true;
        for (f, v) in freq.iter_mut().zip(r) {
            *f.entry(*v).or_default() += 1;
        }
    }
    if !any {
        return None;
    }
    Some(
        freq.iter()
            .map(|f| {
                // BTreeMap iterates categories ascending; keep the first max.
                let mut best = (0u32, 0usize);
                for (&cat, &n) in f {
                    if n > best.1 {
                        best = (cat, n);
                    }
                }
                best.0
            })
            .collect(),
    )
}

fn init(x: &[Vec<u32>], k: usize, rng: &mut Rng) -> Vec<Vec<u32>> {
    let mut modes = vec![x[rng.below(x.len())].clone()];
    let mut d: Vec<f64> = x.iter().map(|p| hamming(p, &modes[0]) as f64).collect();
    while modes.len() < k {
        let next = rng.weighted_index(&d);
        modes.push(x[next].clone());
        let c = modes.last().unwrap();
        for (di, p) in d.iter_mut().zip(x) {
            *di = di.min(hamming(p, c) as f64);
        }
    }
    modes
}

fn assign(x: &[Vec<u32>], modes: &[Vec<u32>], labels: &mut [usize], dists: &mut [usize]) -> f64 {
    let mut cost = 0;
    for (i, p) in x.iter().enumerate() {
        let (j, d) = nearest_mode(p, modes);
        labels[i] = j;
        dists[i] = d;
        cost += d;
    }
    cost as f64
}

/// Huang-style k-modes over categorical rows (category indices).
///
/// Dissimilarity is the Hamming distance; initial modes are drawn with
/// distance-weighted seeding. Empty clusters are reseeded at the point
/// farthest from its mode.
pub fn kmodes_fit(x: &[Vec<u32>], k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    check_k(x.len(), k)?;
    let m = x[0].len();
    if x.iter().any(|r| r.len() != m) {
        return Err(Error::invalid("k-modes rows differ in length"));
    }
    let n = x.len();
    let mut rng = Rng::new(seed);
    let mut modes = init(x, k, &mut rng);
    let mut labels = vec![0; n];
    let mut dists = vec![0; n];
    let mut history = vec![assign(x, &modes, &mut labels, &mut dists)];
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let mut taken = vec![false; n];
        let mut empty = Vec::new();
        for (j, mode) in modes.iter_mut().enumerate() {
            let members = x.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(r, _)| r);
            match mode_of(members, m) {
                Some(new_mode) => *mode = new_mode,
                None => empty.push(j),
            }
        }
        for j in empty {
            let far = (0..n)
                .filter(|i| !taken[*i])
                .max_by(|a, b| dists[*a].cmp(&dists[*b]).then(b.cmp(a)))
                .unwrap_or(0);
            taken[far] = true;
            modes[j] = x[far].clone();
        }
        let prev = labels.clone();
        history.push(assign(x, &modes, &mut labels, &mut dists));
        if labels == prev {
            break;
        }
    }

    Ok(ClusterModel {
        method: Method::KModes,
        k,
        inertia: *history.last().unwrap(),
        centers: Centers::Categorical(modes),
        assignments: labels,
        cost_history: history,
        iterations,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: u32 = 0;
    const B: u32 = 1;
    const C: u32 = 2;
    const D: u32 = 3;

    #[test]
    fn identical_rows_cost_zero() {
        let x = vec![vec![1, 2, 3]; 6];
        for k in 1..=6 {
            assert_eq!(kmodes_fit(&x, k, 7, 20).unwrap().inertia, 0.0);
        }
    }

    #[test]
    fn two_obvious_groups() {
        let x = vec![vec![A, A, B], vec![A, A, B], vec![C, C, D], vec![C, C, D]];
        for seed in 0..10 {
            let m = kmodes_fit(&x, 2, seed, 20).unwrap();
            let a = &m.assignments;
            assert_eq!(a[0], a[1]);
            assert_eq!(a[2], a[3]);
            assert_ne!(a[0], a[2]);
            let Centers::Categorical(modes) = &m.centers else { panic!() };
            assert_eq!(modes[a[0]], vec![A, A, B]);
            assert_eq!(modes[a[2]], vec![C, C, D]);
            assert_eq!(m.inertia, 0.0);
        }
    }

    #[test]
    fn mode_tie_takes_lower_category() {
        let rows = [vec![3, 1], vec![2, 1]];
        assert_eq!(mode_of(rows.iter(), 2).unwrap(), vec![2, 1]);
    }

    proptest::proptest! {
        #[test]
        fn cost_never_increases(seed in 0u64..500, n in 2usize..50, k in 1usize..6) {
            let k = k.min(n);
            let mut rng = Rng::new(seed);
            let x: Vec<Vec<u32>> = (0..n).map(|_| (0..4).map(|_| rng.below(3) as u32).collect()).collect();
            let m = kmodes_fit(&x, k, seed, 100).unwrap();
            for w in m.cost_history.windows(2) {
                proptest::prop_assert!(w[1] <= w[0], "{:?}", m.cost_history);
            }
        }
    }
}
