use serde::{Deserialize, Serialize};

use super::weeks::UserWeek;
use crate::error::{Error, Result};

/// Standard deviations below this are treated as 1 (constant features).
pub const MIN_STD: f64 = 1e-12;

/// Per-column mean and standard deviation (population).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut rows_vec = Vec::new();
        for r in rows {
            if n == 0 {
                sum = vec![0.0; r.len()];
            } else if r.len() != sum.len() {
                return Err(Error::invalid("rows differ in dimension"));
            }
            for (s, v) in sum.iter_mut().zip(r) {
                *s += v;
            }
            rows_vec.push(r);
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("cannot fit statistics on zero rows"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; mean.len()];
        for r in rows_vec {
            for ((acc, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "standardizer fitted on {} features, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }
}

/// Z-scores every window of a user-week with statistics pooled over all
/// windows of the training weeks.
///
/// Only a fitted standardizer exists, so applying one before fitting cannot
/// be expressed. Applying twice is not idempotent: each call shifts and
/// scales again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    stats: ColumnStats,
}

impl Standardizer {
    pub fn fit(train: &[UserWeek]) -> Result<Self> {
        let stats = ColumnStats::fit(train.iter().flat_map(|w| w.x_seq().iter().map(Vec::as_slice)))?;
        Ok(Self { stats })
    }

    pub fn stats(&self) -> &ColumnStats {
        &self.stats
    }

    pub fn apply(&self, week: &UserWeek) -> Result<UserWeek> {
        let x_seq = week
            .x_seq()
            .iter()
            .map(|x| self.stats.transform(x))
            .collect::<Result<Vec<_>>>()?;
        UserWeek::new(week.user_id.clone(), week.week_index, x_seq)
    }

    pub fn apply_all(&self, weeks: &[UserWeek]) -> Result<Vec<UserWeek>> {
        weeks.iter().map(|w| self.apply(w)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn week(vals: [f64; 5], c: f64) -> UserWeek {
        UserWeek::new("u", 0, vals.iter().map(|v| vec![*v, c]).collect()).unwrap()
    }

    #[test]
    fn two_values_map_to_plus_minus_one() {
        let s = ColumnStats::fit([[1.0].as_slice(), [3.0].as_slice()]).unwrap();
        assert_eq!(s.transform(&[1.0]).unwrap(), vec![-1.0]);
        assert_eq!(s.transform(&[3.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn constant_feature_keeps_unit_scale() {
        let train = vec![week([1.0, 2.0, 3.0, 4.0, 5.0], 7.0)];
        let st = Standardizer::fit(&train).unwrap();
        assert_eq!(st.stats().std[1], 1.0);
        let out = st.apply(&week([1.0; 5], 9.0)).unwrap();
        assert_eq!(out.x_seq()[0][1], 2.0);
    }

    #[test]
    fn training_set_is_centered_and_scaled() {
        let train = vec![week([1.0, 2.0, 3.0, 4.0, 5.0], 0.0), week([0.0, -2.0, 6.0, 1.0, 1.5], 0.0)];
        let st = Standardizer::fit(&train).unwrap();
        let z = st.apply_all(&train).unwrap();
        let vals: Vec<f64> = z.iter().flat_map(|w| w.x_seq().iter().map(|x| x[0])).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn applying_twice_shifts_again() {
        let train = vec![week([1.0, 2.0, 3.0, 4.0, 5.0], 0.0)];
        let st = Standardizer::fit(&train).unwrap();
        let once = st.apply(&train[0]).unwrap();
        let twice = st.apply(&once).unwrap();
        assert_ne!(once, twice);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let st = Standardizer::fit(&[week([1.0; 5], 0.0)]).unwrap();
        let bad = UserWeek::new("u", 0, vec![vec![1.0]; 5]).unwrap();
        assert!(st.apply(&bad).is_err());
    }
}
