use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{sigmoid, Matrix, Rng, Tape, Var};

/// One LSTM layer. Gate rows are stacked input, forget, cell, output, each
/// `hidden` rows tall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// 4p × input.
    pub wx: Matrix,
    /// 4p × p.
    pub wh: Matrix,
    /// 4p × 1.
    pub b: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(p: usize) -> Self {
        Self {
            h: vec![0.0; p],
            c: vec![0.0; p],
        }
    }
}

pub(crate) fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
    Matrix::from_raw(rows, cols, data)
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            wx: Matrix::zeros(4 * hidden, input),
            wh: Matrix::zeros(4 * hidden, hidden),
            b: Matrix::zeros(4 * hidden, 1),
        }
    }

    /// Uniform in ±1/√hidden, then +1 on the forget-gate bias.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let wx = uniform(4 * hidden, input, k, rng);
        let wh = uniform(4 * hidden, hidden, k, rng);
        let mut b = uniform(4 * hidden, 1, k, rng);
        for r in hidden..2 * hidden {
            b.set(r, 0, b.get(r, 0) + 1.0);
        }
        Self { wx, wh, b }
    }

    pub fn input(&self) -> usize {
        self.wx.cols()
    }

    pub fn hidden(&self) -> usize {
        self.wh.cols()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let p = self.hidden();
        if self.wh.rows() != 4 * p || self.wx.rows() != 4 * p || self.b.shape() != (4 * p, 1) {
            return Err(Error::invalid("inconsistent LSTM parameter shapes"));
        }
        Ok(())
    }
}

/// One LSTM step on plain vectors:
/// `i, f, o = σ(·)`, `g = tanh(·)`, `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_step(params: &LstmParams, x: &[f64], prev: &LstmState) -> Result<LstmState> {
    params.check()?;
    let p = params.hidden();
    if x.len() != params.input() || prev.h.len() != p || prev.c.len() != p {
        return Err(Error::invalid(format!(
            "lstm_step expects input {} and state {p}, got {} and {}/{}",
            params.input(),
            x.len(),
            prev.h.len(),
            prev.c.len()
        )));
    }
    let z: Vec<f64> = (0..4 * p)
        .map(|r| {
            params.b.get(r, 0)
                + params.wx.row(r).iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                + params.wh.row(r).iter().zip(&prev.h).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect();
    let mut next = LstmState::zeros(p);
    for k in 0..p {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[p + k]);
        let g = z[2 * p + k].tanh();
        let o = sigmoid(z[3 * p + k]);
        next.c[k] = f * prev.c[k] + i * g;
        next.h[k] = o * next.c[k].tanh();
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmVars {
    pub fn record(tape: &mut Tape, p: &LstmParams, trainable: bool) -> Self {
        let mut leaf = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        Self {
            wx: leaf(&p.wx),
            wh: leaf(&p.wh),
            b: leaf(&p.b),
            hidden: p.hidden(),
        }
    }

    pub fn vars(&self) -> [Var; 3] {
        [self.wx, self.wh, self.b]
    }

    /// Batched step; columns of `x`, `h`, `c` are independent sequences.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let p = self.hidden;
        let zx = tape.matmul(self.wx, x)?;
        let zh = tape.matmul(self.wh, h)?;
        let z = tape.add(zx, zh)?;
        let z = tape.add_col(z, self.b)?;
        let i = tape.slice_rows(z, 0, p)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice_rows(z, p, p)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice_rows(z, 2 * p, p)?;
        let g = tape.tanh(g)?;
        let o = tape.slice_rows(z, 3 * p, p)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok((h, c))
    }
}
