use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{sym_eig, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// d×p, orthonormal columns ordered by descending eigenvalue.
    pub components: Matrix,
    /// Top-p covariance eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Trace of the covariance.
    pub total_variance: f64,
}

/// Sample covariance (divisor n - 1, or 1 for a single row), built
/// symmetric by construction.
pub fn covariance(x: &[Vec<f64>]) -> Result<(Vec<f64>, Matrix)> {
    let n = x.len();
    if n == 0 {
        return Err(Error::invalid("covariance of an empty set"));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("rows differ in dimension"));
    }
    let mut mean = vec![0.0; d];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for r in x {
        for ((c, v), m) in centered.iter_mut().zip(r).zip(&mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let row = cov.row_mut(i);
            for j in i..d {
                row[j] += ci * centered[j];
            }
        }
    }
    let div = (n.max(2) - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / div;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok((mean, cov))
}

/// Projection onto the top `p` principal components of `x`.
pub fn pca_fit(x: &[Vec<f64>], p: usize) -> Result<PcaModel> {
    let (mean, cov) = covariance(x)?;
    let d = mean.len();
    if p == 0 || p > d {
        return Err(Error::invalid(format!("PCA needs 1 <= p <= d, got p = {p}, d = {d}")));
    }
    let eig = sym_eig(&cov)?;
    let mut components = Matrix::zeros(d, p);
    for i in 0..d {
        for j in 0..p {
            components.set(i, j, eig.vectors.get(i, j));
        }
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues: eig.values[..p].to_vec(),
        total_variance: eig.values.iter().sum(),
    })
}

impl PcaModel {
    pub fn d(&self) -> usize {
        self.mean.len()
    }

    pub fn p(&self) -> usize {
        self.components.cols()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d() {
            return Err(Error::invalid(format!(
                "PCA expects {} inputs, got {}",
                self.d(),
                x.len()
            )));
        }
        Ok(())
    }

    /// `componentsᵀ (x - mean)`.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut z = vec![0.0; self.p()];
        for (i, (v, m)) in x.iter().zip(&self.mean).enumerate() {
            let c = v - m;
            for (zj, w) in z.iter_mut().zip(self.components.row(i)) {
                *zj += w * c;
            }
        }
        Ok(z)
    }

    /// `mean + components · encode(x)`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.encode(x)?;
        Ok((0..self.d())
            .map(|i| self.mean[i] + self.components.row(i).iter().zip(&z).map(|(w, v)| w * v).sum::<f64>())
            .collect())
    }

    /// Fraction of total variance carried by each kept component.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.p()];
        }
        self.eigenvalues.iter().map(|e| e / self.total_variance).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Rng;

    fn data(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        // Correlated columns so the spectrum is not flat.
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                (0..d).map(|j| z[..=j].iter().sum::<f64>() + j as f64).collect()
            })
            .collect()
    }

    fn sq_err(m: &PcaModel, x: &[Vec<f64>]) -> f64 {
        x.iter()
            .map(|r| m.reconstruct(r).unwrap().iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum()
    }

    #[test]
    fn full_basis_reconstructs_exactly() {
        let x = data(1, 30, 6);
        let m = pca_fit(&x, 6).unwrap();
        for r in &x {
            let y = m.reconstruct(r).unwrap();
            assert!(r.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-8));
        }
    }

    #[test]
    fn collinear_data_is_rank_one() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let m = pca_fit(&x, 2).unwrap();
        let r = m.explained_variance_ratio();
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert!(r[1].abs() < 1e-12);
    }

    #[test]
    fn components_are_orthonormal() {
        let m = pca_fit(&data(2, 50, 8), 5).unwrap();
        let g = m.components.transpose().matmul(&m.components).unwrap();
        assert!(g.max_abs_diff(&Matrix::identity(5)) < 1e-8);
        assert_eq!(m.encode(&[0.0; 8]).unwrap().len(), 5);
    }

    #[test]
    fn p_out_of_range_rejected() {
        let x = data(3, 10, 3);
        assert!(pca_fit(&x, 4).is_err());
        assert!(pca_fit(&x, 0).is_err());
        let m = pca_fit(&x, 2).unwrap();
        assert!(m.encode(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn reconstruction_error_non_increasing_in_p() {
        let x = data(4, 40, 7);
        let errs: Vec<f64> = (1..=7).map(|p| sq_err(&pca_fit(&x, p).unwrap(), &x)).collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{errs:?}");
        }
    }
}
