use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embed::{pca_fit, PcaModel, Snapshot};
use crate::error::{Error, Result};
use crate::ingest::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterEpoch {
    pub epoch: usize,
    pub points: Vec<ScatterPoint>,
}

/// Projects every snapshot onto the first two principal axes of the last
/// epoch's representations, so all epochs share one coordinate frame.
/// One-dimensional representations are emitted as-is with `y = 0`.
pub fn scatter_export(snapshots: &[Snapshot], labels: &[Label]) -> Result<Vec<ScatterEpoch>> {
    let Some(last) = snapshots.iter().max_by_key(|s| s.epoch) else {
        return Ok(Vec::new());
    };
    for s in snapshots {
        if s.representations.len() != labels.len() {
            return Err(Error::invalid(format!(
                "epoch {} has {} representations for {} labels",
                s.epoch,
                s.representations.len(),
                labels.len()
            )));
        }
    }
    let dim = last.representations.first().map_or(0, Vec::len);
    let pca: Option<PcaModel> = if dim >= 2 && !last.representations.is_empty() {
        Some(pca_fit(&last.representations, 2)?)
    } else {
        None
    };
    snapshots
        .iter()
        .map(|s| {
            let points = s
                .representations
                .iter()
                .zip(labels)
                .map(|(r, &label)| {
                    let (x, y) = match &pca {
                        Some(m) => {
                            let z = m.encode(r)?;
                            (z[0], z[1])
                        }
                        None => (r.first().copied().unwrap_or(0.0), 0.0),
                    };
                    Ok(ScatterPoint { x, y, label })
                })
                .collect::<Result<_>>()?;
            Ok(ScatterEpoch { epoch: s.epoch, points })
        })
        .collect()
}

impl ScatterEpoch {
    pub fn write_csv<W: Write>(&self, mut w: W, comment: &str) -> Result<()> {
        for line in comment.lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "x,y,label")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.x, p.y, p.label.as_str())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Rng;

    fn snap(epoch: usize, reps: Vec<Vec<f64>>) -> Snapshot {
        Snapshot {
            epoch,
            representations: reps,
        }
    }

    fn labels(n: usize) -> Vec<Label> {
        (0..n).map(|i| if i % 4 == 0 { Label::Anomalous } else { Label::Normal }).collect()
    }

    #[test]
    fn one_file_per_epoch_with_all_rows() {
        let mut rng = Rng::new(1);
        let snaps: Vec<Snapshot> = [1, 15, 24]
            .iter()
            .map(|&e| snap(e, (0..9).map(|_| (0..5).map(|_| rng.normal()).collect()).collect()))
            .collect();
        let out = scatter_export(&snaps, &labels(9)).unwrap();
        assert_eq!(out.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![1, 15, 24]);
        assert!(out.iter().all(|e| e.points.len() == 9));
        let mut buf = Vec::new();
        out[0].write_csv(&mut buf, "").unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 10);
    }

    #[test]
    fn two_dimensional_input_is_rigid() {
        let mut rng = Rng::new(2);
        let reps: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.normal(), 3.0 * rng.normal()]).collect();
        let out = scatter_export(&[snap(1, reps.clone())], &labels(12)).unwrap();
        let pts = &out[0].points;
        for i in 0..12 {
            for j in 0..12 {
                let a = ((reps[i][0] - reps[j][0]).powi(2) + (reps[i][1] - reps[j][1]).powi(2)).sqrt();
                let b = ((pts[i].x - pts[j].x).powi(2) + (pts[i].y - pts[j].y).powi(2)).sqrt();
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn identical_epochs_identical_points() {
        let reps: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64, 1.0]).collect();
        let out = scatter_export(&[snap(1, reps.clone()), snap(2, reps)], &labels(6)).unwrap();
        assert_eq!(out[0].points, out[1].points);
    }

    #[test]
    fn one_dimensional_passes_through() {
        let out = scatter_export(&[snap(3, vec![vec![2.5], vec![-1.0]])], &labels(2)).unwrap();
        assert_eq!((out[0].points[0].x, out[0].points[0].y), (2.5, 0.0));
    }

    #[test]
    fn label_count_mismatch_rejected() {
        assert!(scatter_export(&[snap(1, vec![vec![1.0, 2.0]])], &labels(2)).is_err());
    }
}
