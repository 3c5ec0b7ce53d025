use serde::{Deserialize, Serialize};

use super::lstm::uniform;
use super::{train, EmbedderConfig, FitReport, Snapshot, Trainable};
use crate::error::{Error, Result};
use crate::numkernel::{derive_seed, Matrix, Rng, Tape, Var};

/// Input → tanh hidden layer (the representation) → linear reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeModel {
    /// p × d.
    pub w_enc: Matrix,
    /// p × 1.
    pub b_enc: Matrix,
    /// d × p.
    pub w_dec: Matrix,
    /// d × 1.
    pub b_dec: Matrix,
}

fn columns(x: &[&[f64]]) -> Result<Matrix> {
    Matrix::from_columns(x)
}

impl AeModel {
    /// Weights uniform in ±1/√fan_in.
    pub fn init(d: usize, p: usize, seed: u64) -> Self {
        let mut rng = Rng::new(derive_seed(seed, "init"));
        let ke = 1.0 / (d as f64).sqrt();
        let kd = 1.0 / (p as f64).sqrt();
        Self {
            w_enc: uniform(p, d, ke, &mut rng),
            b_enc: uniform(p, 1, ke, &mut rng),
            w_dec: uniform(d, p, kd, &mut rng),
            b_dec: uniform(d, 1, kd, &mut rng),
        }
    }

    pub fn d(&self) -> usize {
        self.w_enc.cols()
    }

    pub fn p(&self) -> usize {
        self.w_enc.rows()
    }

    fn check_inputs(&self, x: &[&[f64]]) -> Result<()> {
        if let Some(bad) = x.iter().find(|r| r.len() != self.d()) {
            return Err(Error::invalid(format!(
                "auto-encoder expects {} inputs, got {}",
                self.d(),
                bad.len()
            )));
        }
        Ok(())
    }

    fn record(&self, tape: &mut Tape, trainable: bool) -> [Var; 4] {
        let mut leaf = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        [leaf(&self.w_enc), leaf(&self.b_enc), leaf(&self.w_dec), leaf(&self.b_dec)]
    }

    /// Hidden activations and reconstruction of a d × B batch.
    fn forward(tape: &mut Tape, v: &[Var; 4], x: Var) -> Result<(Var, Var)> {
        let z = tape.matmul(v[0], x)?;
        let z = tape.add_col(z, v[1])?;
        let h = tape.tanh(z)?;
        let y = tape.matmul(v[2], h)?;
        let y = tape.add_col(y, v[3])?;
        Ok((h, y))
    }

    /// Mean over the batch of `‖x − x'‖² / d`.
    pub fn loss(&self, x: &[&[f64]]) -> Result<f64> {
        self.check_inputs(x)?;
        let mut tape = Tape::new();
        let v = self.record(&mut tape, false);
        let loss = self.loss_on(&mut tape, &v, x)?;
        Ok(tape.scalar(loss))
    }

    fn loss_on(&self, tape: &mut Tape, v: &[Var; 4], x: &[&[f64]]) -> Result<Var> {
        let xm = tape.constant(columns(x)?);
        let (_, y) = Self::forward(tape, v, xm)?;
        let diff = tape.sub(y, xm)?;
        let sq = tape.sum_squares(diff)?;
        tape.scale(sq, 1.0 / (self.d() * x.len()) as f64)
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode_batch(&[x.to_vec()])?.remove(0))
    }

    pub fn encode_batch(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if x.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        self.check_inputs(&refs)?;
        let mut tape = Tape::new();
        let v = self.record(&mut tape, false);
        let xm = tape.constant(columns(&refs)?);
        let (h, _) = Self::forward(&mut tape, &v, xm)?;
        let h = tape.value(h);
        Ok((0..h.cols()).map(|j| h.col(j)).collect())
    }
}

impl Trainable for AeModel {
    type Input = [f64];

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.w_enc, &self.b_enc, &self.w_dec, &self.b_dec]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_enc, &mut self.b_enc, &mut self.w_dec, &mut self.b_dec]
    }

    fn loss_and_grads(&self, batch: &[&[f64]]) -> Result<(f64, Vec<Matrix>)> {
        self.check_inputs(batch)?;
        let mut tape = Tape::new();
        let v = self.record(&mut tape, true);
        let loss = self.loss_on(&mut tape, &v, batch)?;
        let g = tape.grad(loss)?;
        let grads = v.iter().map(|&p| g.get(p).expect("parameter leaf").clone()).collect();
        Ok((tape.scalar(loss), grads))
    }
}

impl AeModel {
    /// Public view of [`Trainable::loss_and_grads`] for gradient checks.
    pub fn gradients(&self, batch: &[&[f64]]) -> Result<(f64, Vec<Matrix>)> {
        self.loss_and_grads(batch)
    }

    /// Parameters in gradient order.
    pub fn parameters(&self) -> Vec<Matrix> {
        self.params().into_iter().cloned().collect()
    }

    pub fn with_parameters(&self, params: &[Matrix]) -> Self {
        Self {
            w_enc: params[0].clone(),
            b_enc: params[1].clone(),
            w_dec: params[2].clone(),
            b_dec: params[3].clone(),
        }
    }
}

/// Trains an auto-encoder on flattened (standardized) inputs.
pub fn ae_fit(x: &[Vec<f64>], cfg: &EmbedderConfig, snapshot_set: Option<&[Vec<f64>]>) -> Result<(AeModel, FitReport)> {
    cfg.validate()?;
    let Some(first) = x.first() else {
        return Err(Error::invalid("no training examples"));
    };
    let mut model = AeModel::init(first.len(), cfg.p, cfg.seed);
    let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    model.check_inputs(&refs)?;
    let mut snapshots = Vec::new();
    let loss_history = train(&mut model, &refs, cfg, |epoch, m| {
        if let Some(set) = snapshot_set {
            if cfg.snapshot_epochs.contains(&epoch) {
                snapshots.push(Snapshot {
                    epoch,
                    representations: m.encode_batch(set)?,
                });
            }
        }
        Ok(())
    })?;
    Ok((model, FitReport { loss_history, snapshots }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::check_gradients;

    fn data(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| {
                let z = rng.normal();
                (0..d).map(|j| z * (j as f64 - 1.0) + 0.1 * rng.normal()).collect()
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let x = data(7, 6, seed);
            let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
            let m = AeModel::init(6, 4, seed);
            let (_, g) = m.gradients(&refs).unwrap();
            let r = check_gradients(&m.parameters(), &g, 1e-5, 1e-6, |p| m.with_parameters(p).loss(&refs).unwrap());
            assert!(r.max_rel_err < 1e-4, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn training_reduces_loss() {
        let x = data(64, 6, 1);
        let cfg = EmbedderConfig {
            p: 2,
            epochs: 30,
            lr: 1e-2,
            ..EmbedderConfig::default()
        };
        let (m, r) = ae_fit(&x, &cfg, None).unwrap();
        assert_eq!(r.loss_history.len(), 30);
        assert!(r.loss_history[29] < r.loss_history[0]);
        assert_eq!(m.encode(&x[0]).unwrap().len(), 2);
        assert!(m.encode(&x[0]).unwrap().iter().all(|h| h.abs() < 1.0));
    }

    #[test]
    fn overflowing_loss_reports_divergence() {
        let x: Vec<Vec<f64>> = data(32, 6, 2).into_iter().map(|r| r.iter().map(|v| v * 1e200).collect()).collect();
        let cfg = EmbedderConfig {
            p: 2,
            epochs: 5,
            ..EmbedderConfig::default()
        };
        let r = ae_fit(&x, &cfg, None);
        assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
    }

    #[test]
    fn same_seed_same_model() {
        let x = data(20, 4, 3);
        let cfg = EmbedderConfig {
            p: 2,
            epochs: 3,
            ..EmbedderConfig::default()
        };
        assert_eq!(ae_fit(&x, &cfg, None).unwrap(), ae_fit(&x, &cfg, None).unwrap());
    }
}
