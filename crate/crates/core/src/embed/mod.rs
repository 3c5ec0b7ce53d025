//! Representation learners: PCA, a one-hidden-layer tanh auto-encoder and
//! the attention sequence-to-sequence LSTM auto-encoder (AS2S).
//!
//! All three map a user-week to a `p`-dimensional vector through
//! [`Embedder::encode`].

mod ae;
mod as2s;
mod attention;
mod lstm;
mod optim;
mod pca;

use serde::{Deserialize, Serialize};

pub use ae::{ae_fit, AeModel};
pub use as2s::{as2s_fit, As2sModel, As2sOutput, Representation};
pub use attention::{attention_logits, attention_weights, AttentionParams};
pub use lstm::{lstm_step, LstmParams, LstmState};
pub use optim::{Adam, AdamConfig};
pub use pca::{covariance, pca_fit, PcaModel};

use crate::error::{Error, Result};
use crate::ingest::UserWeek;
use crate::numkernel::{derive_seed, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Pca,
    Ae,
    As2s,
}

impl EmbedderKind {
    pub const ALL: [EmbedderKind; 3] = [EmbedderKind::Pca, EmbedderKind::Ae, EmbedderKind::As2s];

    pub fn as_str(self) -> &'static str {
        match self {
            EmbedderKind::Pca => "pca",
            EmbedderKind::Ae => "ae",
            EmbedderKind::As2s => "as2s",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(EmbedderKind::Pca),
            "ae" => Ok(EmbedderKind::Ae),
            "as2s" => Ok(EmbedderKind::As2s),
            _ => Err(Error::config("embedder", format!("unknown embedder `{s}` (pca, ae, as2s)"))),
        }
    }
}

impl std::fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    /// Representation size.
    pub p: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stacked LSTM layers in the AS2S encoder and decoder.
    pub lstm_layers: usize,
    /// Feed the ground-truth previous window to the AS2S decoder while
    /// training; off means it always sees its own previous output.
    pub teacher_forcing: bool,
    pub representation: Representation,
    /// 1-based epochs after which representations are snapshotted.
    pub snapshot_epochs: Vec<usize>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            p: 32,
            epochs: 50,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
            lstm_layers: 1,
            teacher_forcing: true,
            representation: Representation::Final,
            snapshot_epochs: vec![1, 15, 24],
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::config("p", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr", "must be a positive number"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.lstm_layers == 0 {
            return Err(Error::config("lstm_layers", "must be at least 1"));
        }
        if self.snapshot_epochs.contains(&0) {
            return Err(Error::config("snapshot_epochs", "epochs are numbered from 1"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Representations of a fixed example set captured after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub representations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean per-example training loss of every epoch.
    pub loss_history: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
}

/// A model trained by minibatch gradient descent on the tape.
pub(crate) trait Trainable {
    type Input: ?Sized;

    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;
    /// Mean loss over the batch and its gradient for every parameter, in
    /// [`Trainable::params`] order.
    fn loss_and_grads(&self, batch: &[&Self::Input]) -> Result<(f64, Vec<Matrix>)>;
}

/// Shuffled minibatch Adam loop shared by the AE and AS2S.
pub(crate) fn train<M: Trainable>(
    model: &mut M,
    inputs: &[&M::Input],
    cfg: &EmbedderConfig,
    mut on_epoch: impl FnMut(usize, &M) -> Result<()>,
) -> Result<Vec<f64>> {
    if inputs.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    let shapes: Vec<_> = model.params().iter().map(|m| m.shape()).collect();
    let mut opt = Adam::new(cfg.adam(), &shapes);
    let mut rng = Rng::new(derive_seed(cfg.seed, "shuffle"));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&M::Input> = chunk.iter().map(|&i| inputs[i]).collect();
            let (loss, grads) = model.loss_and_grads(&batch)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            opt.step(&mut model.params_mut(), &grads);
        }
        let mean = total / inputs.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        history.push(mean);
        on_epoch(epoch, model)?;
    }
    Ok(history)
}

/// A fitted embedder of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Embedder {
    Pca(PcaModel),
    Ae(AeModel),
    As2s(As2sModel),
}

impl Embedder {
    pub fn kind(&self) -> EmbedderKind {
        match self {
            Embedder::Pca(_) => EmbedderKind::Pca,
            Embedder::Ae(_) => EmbedderKind::Ae,
            Embedder::As2s(_) => EmbedderKind::As2s,
        }
    }

    /// Representation size.
    pub fn p(&self) -> usize {
        match self {
            Embedder::Pca(m) => m.p(),
            Embedder::Ae(m) => m.p(),
            Embedder::As2s(m) => m.p,
        }
    }

    pub fn encode(&self, week: &UserWeek) -> Result<Vec<f64>> {
        Ok(self.encode_all(std::slice::from_ref(week))?.remove(0))
    }

    pub fn encode_all(&self, weeks: &[UserWeek]) -> Result<Vec<Vec<f64>>> {
        match self {
            Embedder::Pca(m) => weeks.iter().map(|w| m.encode(&w.flattened())).collect(),
            Embedder::Ae(m) => {
                let flat: Vec<Vec<f64>> = weeks.iter().map(UserWeek::flattened).collect();
                m.encode_batch(&flat)
            }
            Embedder::As2s(m) => {
                let seqs: Vec<&[Vec<f64>]> = weeks.iter().map(UserWeek::x_seq).collect();
                m.encode_batch(&seqs)
            }
        }
    }
}

/// Fits the chosen embedder on training weeks, snapshotting representations
/// of `snapshot_set` at the configured epochs. PCA has no epochs; its single
/// snapshot is labelled with the last configured epoch.
pub fn fit_embedder(
    kind: EmbedderKind,
    train: &[UserWeek],
    cfg: &EmbedderConfig,
    snapshot_set: Option<&[UserWeek]>,
) -> Result<(Embedder, FitReport)> {
    cfg.validate()?;
    match kind {
        EmbedderKind::Pca => {
            let flat: Vec<Vec<f64>> = train.iter().map(UserWeek::flattened).collect();
            let model = Embedder::Pca(pca_fit(&flat, cfg.p)?);
            let mut report = FitReport::default();
            if let Some(set) = snapshot_set {
                for &epoch in &cfg.snapshot_epochs {
                    report.snapshots.push(Snapshot {
                        epoch,
                        representations: model.encode_all(set)?,
                    });
                }
            }
            Ok((model, report))
        }
        EmbedderKind::Ae => {
            let flat: Vec<Vec<f64>> = train.iter().map(UserWeek::flattened).collect();
            let snap: Option<Vec<Vec<f64>>> = snapshot_set.map(|s| s.iter().map(UserWeek::flattened).collect());
            let (m, r) = ae_fit(&flat, cfg, snap.as_deref())?;
            Ok((Embedder::Ae(m), r))
        }
        EmbedderKind::As2s => {
            let (m, r) = as2s_fit(train, cfg, snapshot_set)?;
            Ok((Embedder::As2s(m), r))
        }
    }
}

/// Persisted model with the metadata needed to reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub method: EmbedderKind,
    pub cluster_id: usize,
    pub d: usize,
    pub p: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub epochs: usize,
    pub config: EmbedderConfig,
    pub config_hash: String,
    pub loss_history: Vec<f64>,
    pub model: Embedder,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weeks(n: usize, d: usize, seed: u64) -> Vec<UserWeek> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                let x = (0..5).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
                UserWeek::new(format!("u{i}"), 0, x).unwrap()
            })
            .collect()
    }

    #[test]
    fn every_embedder_encodes_to_p() {
        let train = weeks(30, 3, 1);
        let cfg = EmbedderConfig {
            p: 4,
            epochs: 2,
            ..EmbedderConfig::default()
        };
        for kind in EmbedderKind::ALL {
            let (m, _) = fit_embedder(kind, &train, &cfg, None).unwrap();
            assert_eq!(m.kind(), kind);
            assert_eq!(m.p(), 4);
            let all = m.encode_all(&train[..3]).unwrap();
            assert_eq!(all.len(), 3);
            assert!(all.iter().all(|z| z.len() == 4));
            assert_eq!(m.encode(&train[1]).unwrap(), all[1]);
        }
    }

    #[test]
    fn model_file_round_trips_bit_exactly() {
        let train = weeks(20, 3, 2);
        let cfg = EmbedderConfig {
            p: 3,
            epochs: 2,
            ..EmbedderConfig::default()
        };
        for kind in EmbedderKind::ALL {
            let (model, report) = fit_embedder(kind, &train, &cfg, None).unwrap();
            let file = ModelFile {
                method: kind,
                cluster_id: 1,
                d: 3,
                p: 3,
                n_steps: 5,
                seed: cfg.seed,
                epochs: cfg.epochs,
                config: cfg.clone(),
                config_hash: "abc".into(),
                loss_history: report.loss_history,
                model,
            };
            let text = serde_json::to_string(&file).unwrap();
            let back: ModelFile = serde_json::from_str(&text).unwrap();
            assert_eq!(back, file);
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            EmbedderConfig { p: 0, ..EmbedderConfig::default() },
            EmbedderConfig { epochs: 0, ..EmbedderConfig::default() },
            EmbedderConfig { lr: -1.0, ..EmbedderConfig::default() },
            EmbedderConfig { batch_size: 0, ..EmbedderConfig::default() },
            EmbedderConfig { snapshot_epochs: vec![0], ..EmbedderConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(EmbedderKind::parse("LSTM").is_err());
        assert_eq!(EmbedderKind::parse("AS2S").unwrap(), EmbedderKind::As2s);
    }

    #[test]
    fn snapshots_taken_at_requested_epochs() {
        let train = weeks(12, 2, 3);
        let cfg = EmbedderConfig {
            p: 2,
            epochs: 4,
            snapshot_epochs: vec![1, 3, 9],
            ..EmbedderConfig::default()
        };
        let (_, r) = fit_embedder(EmbedderKind::As2s, &train, &cfg, Some(&train[..5])).unwrap();
        assert_eq!(r.loss_history.len(), 4);
        let epochs: Vec<usize> = r.snapshots.iter().map(|s| s.epoch).collect();
        assert_eq!(epochs, vec![1, 3]);
        assert!(r.snapshots.iter().all(|s| s.representations.len() == 5));
    }
}
