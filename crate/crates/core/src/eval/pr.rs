use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at every distinct score, swept from the highest
/// threshold down, with the step-wise area (average precision).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub area: f64,
    pub positives: usize,
    pub total: usize,
}

/// A point is flagged when its score is at or above the threshold.
/// `area = Σ (R_k − R_{k−1}) · P_k` over thresholds, so tied scores count
/// as one step.
pub fn pr_curve(scores: &[f64], anomalous: &[bool]) -> Result<PrCurve> {
    if scores.len() != anomalous.len() {
        return Err(Error::invalid("one label per score required"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let positives = anomalous.iter().filter(|&&a| a).count();
    if positives == 0 {
        return Err(Error::invalid("no anomalous labels: recall is undefined"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut last_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if anomalous[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / positives as f64;
        area += (recall - last_recall) * precision;
        last_recall = recall;
        points.push(PrPoint {
            threshold: t,
            precision,
            recall,
        });
    }
    Ok(PrCurve {
        points,
        area,
        positives,
        total: scores.len(),
    })
}

impl PrCurve {
    /// CSV with a `#` header comment carrying the area.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: &str) -> Result<()> {
        if !comment.is_empty() {
            for line in comment.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        writeln!(w, "# area={} positives={} total={}", self.area, self.positives, self.total)?;
        writeln!(w, "threshold,precision,recall")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.threshold, p.precision, p.recall)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Rng;

    /// Average precision by enumerating every distinct threshold directly.
    fn oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut ts: Vec<f64> = scores.to_vec();
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        let p = labels.iter().filter(|&&l| l).count() as f64;
        let mut prev_r = 0.0;
        let mut ap = 0.0;
        for t in ts {
            let flagged: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
            let tp = flagged.iter().zip(labels).filter(|(f, l)| **f && **l).count() as f64;
            let n = flagged.iter().filter(|&&f| f).count() as f64;
            let r = tp / p;
            ap += (r - prev_r) * (tp / n);
            prev_r = r;
        }
        ap
    }

    #[test]
    fn four_point_example() {
        let c = pr_curve(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]).unwrap();
        assert!((c.area - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(c.points.len(), 4);
    }

    #[test]
    fn perfect_separation() {
        let c = pr_curve(&[9.0, 8.0, 1.0, 0.5, 0.1], &[true, true, false, false, false]).unwrap();
        assert_eq!(c.area, 1.0);
    }

    #[test]
    fn all_equal_scores_give_prevalence() {
        let c = pr_curve(&[2.0; 5], &[true, false, false, true, false]).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.points[0].recall, 1.0);
        assert!((c.points[0].precision - 0.4).abs() < 1e-15);
        assert!((c.area - 0.4).abs() < 1e-15);
    }

    #[test]
    fn no_positives_rejected() {
        assert!(pr_curve(&[1.0, 2.0], &[false, false]).is_err());
        assert!(pr_curve(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn csv_has_area_comment() {
        let c = pr_curve(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]).unwrap();
        let mut out = Vec::new();
        c.write_csv(&mut out, "cluster 0").unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("# cluster 0\n# area=0.8333333333333"));
        assert_eq!(s.lines().count(), 7);
    }

    proptest::proptest! {
        #[test]
        fn matches_enumeration_oracle(seed in 0u64..200, n in 1usize..1000) {
            let mut rng = Rng::new(seed);
            // Coarse scores force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| (rng.uniform() * 50.0).floor()).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.2).collect();
            labels[0] = true;
            let c = pr_curve(&scores, &labels).unwrap();
            proptest::prop_assert!((c.area - oracle(&scores, &labels)).abs() < 1e-12);
            proptest::prop_assert!((0.0..=1.0).contains(&c.area));
            for w in c.points.windows(2) {
                proptest::prop_assert!(w[1].recall >= w[0].recall);
            }
        }

        #[test]
        fn invariant_under_monotone_transform(seed in 0u64..200) {
            let mut rng = Rng::new(seed);
            let scores: Vec<f64> = (0..100).map(|_| rng.normal()).collect();
            let mut labels: Vec<bool> = (0..100).map(|_| rng.uniform() < 0.1).collect();
            labels[3] = true;
            let a = pr_curve(&scores, &labels).unwrap().area;
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
            proptest::prop_assert_eq!(a, pr_curve(&t, &labels).unwrap().area);
        }
    }
}
