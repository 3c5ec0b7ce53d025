use serde::{Deserialize, Serialize};

use super::attention::{AttentionParams, AttentionVars};
use super::lstm::{uniform, LstmParams, LstmVars};
use super::{train, EmbedderConfig, FitReport, Snapshot, Trainable};
use crate::error::{Error, Result};
use crate::ingest::UserWeek;
use crate::numkernel::{derive_seed, Matrix, Rng, Tape, Var};

/// Which encoder output represents a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Top-layer hidden state after the last window.
    #[default]
    Final,
    /// Mean of the top-layer hidden states over all windows.
    Mean,
}

/// Attention sequence-to-sequence LSTM auto-encoder.
///
/// The encoder reads `x_1..x_N`. The decoder starts from the final encoder
/// state and emits the windows in reverse, `x'_N` first. Before each decoder
/// step it attends over the encoder states with its previous hidden state
/// and feeds `[y_prev; context]` to its first layer, where `y_prev` is zero
/// at the first step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct As2sModel {
    pub d: usize,
    pub p: usize,
    pub n_steps: usize,
    pub representation: Representation,
    pub encoder: Vec<LstmParams>,
    pub decoder: Vec<LstmParams>,
    pub attention: AttentionParams,
    /// d × p.
    pub w_out: Matrix,
    /// d × 1.
    pub b_out: Matrix,
}

/// Reconstruction of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct As2sOutput {
    /// `recon[b][t]` reconstructs window `t` of sequence `b`, in input order.
    pub recon: Vec<Vec<Vec<f64>>>,
    /// Attention weights per decoder step (N × B), in decoding order.
    pub alphas: Vec<Matrix>,
    pub loss: f64,
}

struct ParamVars {
    encoder: Vec<LstmVars>,
    decoder: Vec<LstmVars>,
    attention: AttentionVars,
    w_out: Var,
    b_out: Var,
}

impl ParamVars {
    fn all(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for l in self.encoder.iter().chain(&self.decoder) {
            v.extend(l.vars());
        }
        v.extend(self.attention.vars());
        v.push(self.w_out);
        v.push(self.b_out);
        v
    }
}

struct Run {
    outs: Vec<Var>,
    alphas: Vec<Var>,
    loss: Var,
}

impl As2sModel {
    pub fn init(d: usize, p: usize, n_steps: usize, layers: usize, seed: u64) -> Result<Self> {
        if d == 0 || p == 0 || n_steps == 0 || layers == 0 {
            return Err(Error::invalid("AS2S needs d, p, N and layers all at least 1"));
        }
        let mut rng = Rng::new(derive_seed(seed, "init"));
        let k = 1.0 / (p as f64).sqrt();
        let encoder = (0..layers)
            .map(|l| LstmParams::init(if l == 0 { d } else { p }, p, &mut rng))
            .collect();
        let decoder = (0..layers)
            .map(|l| LstmParams::init(if l == 0 { d + p } else { p }, p, &mut rng))
            .collect();
        let attention = AttentionParams {
            ws: uniform(p, p, k, &mut rng),
            wh: uniform(p, p, k, &mut rng),
            v: uniform(1, p, k, &mut rng),
        };
        Ok(Self {
            d,
            p,
            n_steps,
            representation: Representation::Final,
            encoder,
            decoder,
            attention,
            w_out: uniform(d, p, k, &mut rng),
            b_out: uniform(d, 1, k, &mut rng),
        })
    }

    pub fn layers(&self) -> usize {
        self.encoder.len()
    }

    /// Parameters in gradient order: encoder layers, decoder layers (each
    /// `wx, wh, b`), then `W_s, W_h, v, w_out, b_out`.
    pub fn parameters(&self) -> Vec<Matrix> {
        self.params().into_iter().cloned().collect()
    }

    pub fn with_parameters(&self, params: &[Matrix]) -> Self {
        let mut m = self.clone();
        for (dst, src) in m.params_mut().into_iter().zip(params) {
            *dst = src.clone();
        }
        m
    }

    fn check_seqs(&self, seqs: &[&[Vec<f64>]]) -> Result<()> {
        if seqs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        for s in seqs {
            if s.len() != self.n_steps {
                return Err(Error::invalid(format!(
                    "model expects sequences of {} windows, got {}",
                    self.n_steps,
                    s.len()
                )));
            }
            if s.iter().any(|w| w.len() != self.d) {
                return Err(Error::invalid(format!("model expects windows of dimension {}", self.d)));
            }
        }
        Ok(())
    }

    fn record(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let leaf = |tape: &mut Tape, m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        ParamVars {
            encoder: self.encoder.iter().map(|l| LstmVars::record(tape, l, trainable)).collect(),
            decoder: self.decoder.iter().map(|l| LstmVars::record(tape, l, trainable)).collect(),
            attention: AttentionVars::record(tape, &self.attention, trainable),
            w_out: leaf(tape, &self.w_out),
            b_out: leaf(tape, &self.b_out),
        }
    }

    /// Window `t` of every sequence as a d × B constant.
    fn windows(&self, tape: &mut Tape, seqs: &[&[Vec<f64>]]) -> Result<Vec<Var>> {
        (0..self.n_steps)
            .map(|t| {
                let cols: Vec<&[f64]> = seqs.iter().map(|s| s[t].as_slice()).collect();
                Ok(tape.constant(Matrix::from_columns(&cols)?))
            })
            .collect()
    }

    /// Runs the encoder, returning the top-layer states and the final
    /// (h, c) of every layer.
    fn encode_on(&self, tape: &mut Tape, pv: &ParamVars, xs: &[Var], batch: usize) -> Result<(Vec<Var>, Vec<(Var, Var)>)> {
        let zero = tape.constant(Matrix::zeros(self.p, batch));
        let mut state = vec![(zero, zero); pv.encoder.len()];
        let mut hs = Vec::with_capacity(xs.len());
        for &x in xs {
            let mut input = x;
            for (l, layer) in pv.encoder.iter().enumerate() {
                let (h, c) = layer.step(tape, input, state[l].0, state[l].1)?;
                state[l] = (h, c);
                input = h;
            }
            hs.push(input);
        }
        Ok((hs, state))
    }

    fn run(&self, tape: &mut Tape, pv: &ParamVars, seqs: &[&[Vec<f64>]], teacher_forcing: bool) -> Result<Run> {
        let n = self.n_steps;
        let batch = seqs.len();
        let xs = self.windows(tape, seqs)?;
        let (hs, mut state) = self.encode_on(tape, pv, &xs, batch)?;
        let keys = pv.attention.project_keys(tape, &hs)?;
        let mut y_prev = tape.constant(Matrix::zeros(self.d, batch));
        let mut outs = Vec::with_capacity(n);
        let mut alphas = Vec::with_capacity(n);
        let mut loss = None;
        for i in 0..n {
            let target = xs[n - 1 - i];
            let s_prev = state.last().expect("at least one layer").0;
            let (alpha, ctx) = pv.attention.attend(tape, s_prev, &hs, &keys)?;
            let mut input = tape.concat_rows(&[y_prev, ctx])?;
            for (l, layer) in pv.decoder.iter().enumerate() {
                let (h, c) = layer.step(tape, input, state[l].0, state[l].1)?;
                state[l] = (h, c);
                input = h;
            }
            let out = tape.matmul(pv.w_out, input)?;
            let out = tape.add_col(out, pv.b_out)?;
            let diff = tape.sub(out, target)?;
            let sq = tape.sum_squares(diff)?;
            loss = Some(match loss {
                None => sq,
                Some(acc) => tape.add(acc, sq)?,
            });
            outs.push(out);
            alphas.push(alpha);
            y_prev = if teacher_forcing { target } else { out };
        }
        let loss = tape.scale(loss.expect("n_steps >= 1"), 1.0 / (n * self.d * batch) as f64)?;
        Ok(Run { outs, alphas, loss })
    }

    /// Reconstructs a batch. With `teacher_forcing` the decoder sees the
    /// true previous window; otherwise it sees its own previous output.
    /// The loss is `Σ_t ‖x_t − x'_t‖² / (N·d)` averaged over the batch.
    pub fn forward(&self, seqs: &[&[Vec<f64>]], teacher_forcing: bool) -> Result<As2sOutput> {
        self.check_seqs(seqs)?;
        let mut tape = Tape::new();
        let pv = self.record(&mut tape, false);
        let run = self.run(&mut tape, &pv, seqs, teacher_forcing)?;
        let n = self.n_steps;
        let recon = (0..seqs.len())
            .map(|b| (0..n).map(|t| tape.value(run.outs[n - 1 - t]).col(b)).collect())
            .collect();
        Ok(As2sOutput {
            recon,
            alphas: run.alphas.iter().map(|&a| tape.value(a).clone()).collect(),
            loss: tape.scalar(run.loss),
        })
    }

    pub fn loss(&self, seqs: &[&[Vec<f64>]], teacher_forcing: bool) -> Result<f64> {
        Ok(self.forward(seqs, teacher_forcing)?.loss)
    }

    /// Batch loss and gradients with the decoder mode chosen explicitly.
    pub fn gradients(&self, seqs: &[&[Vec<f64>]], teacher_forcing: bool) -> Result<(f64, Vec<Matrix>)> {
        self.check_seqs(seqs)?;
        let mut tape = Tape::new();
        let pv = self.record(&mut tape, true);
        let run = self.run(&mut tape, &pv, seqs, teacher_forcing)?;
        let g = tape.grad(run.loss)?;
        let grads = pv.all().iter().map(|&v| g.get(v).expect("parameter leaf").clone()).collect();
        Ok((tape.scalar(run.loss), grads))
    }

    pub fn encode(&self, seq: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.encode_batch(&[seq])?.remove(0))
    }

    pub fn encode_batch(&self, seqs: &[&[Vec<f64>]]) -> Result<Vec<Vec<f64>>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        self.check_seqs(seqs)?;
        let mut tape = Tape::new();
        let pv = self.record(&mut tape, false);
        let xs = self.windows(&mut tape, seqs)?;
        let (hs, _) = self.encode_on(&mut tape, &pv, &xs, seqs.len())?;
        let rep = match self.representation {
            Representation::Final => tape.value(*hs.last().expect("n_steps >= 1")).clone(),
            Representation::Mean => {
                let mut acc = Matrix::zeros(self.p, seqs.len());
                for &h in &hs {
                    acc.add_assign(tape.value(h));
                }
                acc.scale(1.0 / hs.len() as f64)
            }
        };
        Ok((0..rep.cols()).map(|j| rep.col(j)).collect())
    }
}

/// Training wrapper fixing the decoder mode.
struct Training<'a> {
    model: &'a mut As2sModel,
    teacher_forcing: bool,
}

impl Trainable for Training<'_> {
    type Input = [Vec<f64>];

    fn params(&self) -> Vec<&Matrix> {
        self.model.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.model.params_mut()
    }

    fn loss_and_grads(&self, batch: &[&[Vec<f64>]]) -> Result<(f64, Vec<Matrix>)> {
        self.model.gradients(batch, self.teacher_forcing)
    }
}

impl As2sModel {
    fn params(&self) -> Vec<&Matrix> {
        let mut v = Vec::new();
        for l in self.encoder.iter().chain(&self.decoder) {
            v.extend([&l.wx, &l.wh, &l.b]);
        }
        v.extend([&self.attention.ws, &self.attention.wh, &self.attention.v, &self.w_out, &self.b_out]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = Vec::new();
        for l in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            v.extend([&mut l.wx, &mut l.wh, &mut l.b]);
        }
        let a = &mut self.attention;
        v.extend([&mut a.ws, &mut a.wh, &mut a.v, &mut self.w_out, &mut self.b_out]);
        v
    }
}

/// Trains an AS2S model on standardized user-weeks.
pub fn as2s_fit(weeks: &[UserWeek], cfg: &EmbedderConfig, snapshot_set: Option<&[UserWeek]>) -> Result<(As2sModel, FitReport)> {
    cfg.validate()?;
    let Some(first) = weeks.first() else {
        return Err(Error::invalid("no training examples"));
    };
    let mut model = As2sModel::init(first.dim(), cfg.p, first.x_seq().len(), cfg.lstm_layers, cfg.seed)?;
    model.representation = cfg.representation;
    let seqs: Vec<&[Vec<f64>]> = weeks.iter().map(UserWeek::x_seq).collect();
    model.check_seqs(&seqs)?;
    let snap_seqs: Option<Vec<&[Vec<f64>]>> = snapshot_set.map(|s| s.iter().map(UserWeek::x_seq).collect());
    let mut snapshots = Vec::new();
    let mut t = Training {
        model: &mut model,
        teacher_forcing: cfg.teacher_forcing,
    };
    let loss_history = train(&mut t, &seqs, cfg, |epoch, m| {
        if let Some(set) = &snap_seqs {
            if cfg.snapshot_epochs.contains(&epoch) {
                snapshots.push(Snapshot {
                    epoch,
                    representations: m.model.encode_batch(set)?,
                });
            }
        }
        Ok(())
    })?;
    Ok((model, FitReport { loss_history, snapshots }))
}
