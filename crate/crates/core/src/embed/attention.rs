use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{softmax, Matrix, Tape, Var};

/// Additive attention: `a_j = v · tanh(W_s s + W_h h_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// p × p.
    pub ws: Matrix,
    /// p × p.
    pub wh: Matrix,
    /// 1 × p.
    pub v: Matrix,
}

fn matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| m.row(r).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Logits `a_j` for every encoder state.
pub fn attention_logits(s_prev: &[f64], hs: &[Vec<f64>], params: &AttentionParams) -> Result<Vec<f64>> {
    let p = params.ws.rows();
    if hs.is_empty() {
        return Err(Error::invalid("attention over an empty sequence"));
    }
    if s_prev.len() != p || hs.iter().any(|h| h.len() != p) || params.v.shape() != (1, p) {
        return Err(Error::invalid(format!("attention expects vectors of length {p}")));
    }
    let ws = matvec(&params.ws, s_prev);
    Ok(hs
        .iter()
        .map(|h| {
            let wh = matvec(&params.wh, h);
            ws.iter()
                .zip(&wh)
                .zip(params.v.data())
                .map(|((a, b), v)| v * (a + b).tanh())
                .sum()
        })
        .collect())
}

/// Softmax of [`attention_logits`].
pub fn attention_weights(s_prev: &[f64], hs: &[Vec<f64>], params: &AttentionParams) -> Result<Vec<f64>> {
    softmax(&attention_logits(s_prev, hs, params)?)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttentionVars {
    pub ws: Var,
    pub wh: Var,
    pub v: Var,
}

impl AttentionVars {
    pub fn record(tape: &mut Tape, p: &AttentionParams, trainable: bool) -> Self {
        let mut leaf = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        Self {
            ws: leaf(&p.ws),
            wh: leaf(&p.wh),
            v: leaf(&p.v),
        }
    }

    pub fn vars(&self) -> [Var; 3] {
        [self.ws, self.wh, self.v]
    }

    /// `W_h h_j` for every encoder state, reused across decoder steps.
    pub fn project_keys(&self, tape: &mut Tape, hs: &[Var]) -> Result<Vec<Var>> {
        hs.iter().map(|&h| tape.matmul(self.wh, h)).collect()
    }

    /// Batched weights (N × B) and context (p × B) for decoder state `s`.
    pub fn attend(&self, tape: &mut Tape, s: Var, hs: &[Var], keys: &[Var]) -> Result<(Var, Var)> {
        let q = tape.matmul(self.ws, s)?;
        let mut logits = Vec::with_capacity(hs.len());
        for &k in keys {
            let e = tape.add(q, k)?;
            let e = tape.tanh(e)?;
            logits.push(tape.matmul(self.v, e)?);
        }
        let a = tape.concat_rows(&logits)?;
        let alpha = tape.softmax_cols(a)?;
        let mut ctx = None;
        for (j, &h) in hs.iter().enumerate() {
            let w = tape.slice_rows(alpha, j, 1)?;
            let term = tape.mul_row(h, w)?;
            ctx = Some(match ctx {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        Ok((alpha, ctx.expect("non-empty sequence")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Rng;

    fn random_params(p: usize, rng: &mut Rng) -> AttentionParams {
        let mut m = |r, c| Matrix::from_raw(r, c, (0..r * c).map(|_| rng.normal()).collect());
        AttentionParams {
            ws: m(p, p),
            wh: m(p, p),
            v: m(1, p),
        }
    }

    #[test]
    fn identical_states_give_uniform_weights() {
        let mut rng = Rng::new(1);
        let params = random_params(3, &mut rng);
        let h = vec![0.2, -1.0, 0.7];
        let a = attention_weights(&[1.0, 0.0, 2.0], &vec![h; 4], &params).unwrap();
        assert!(a.iter().all(|w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn one_dimensional_hand_evaluation() {
        let params = AttentionParams {
            ws: Matrix::filled(1, 1, 0.5),
            wh: Matrix::filled(1, 1, 2.0),
            v: Matrix::filled(1, 1, 3.0),
        };
        let a = attention_weights(&[1.0], &[vec![0.0], vec![1.0]], &params).unwrap();
        let l0 = 3.0 * 0.5f64.tanh();
        let l1 = 3.0 * 2.5f64.tanh();
        let z = l0.exp() + l1.exp();
        assert!((a[0] - l0.exp() / z).abs() < 1e-15);
        assert!((a[1] - l1.exp() / z).abs() < 1e-15);
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut rng = Rng::new(2);
        assert!(attention_weights(&[0.0; 2], &[], &random_params(2, &mut rng)).is_err());
    }

    #[test]
    fn batched_matches_plain() {
        let mut rng = Rng::new(5);
        let p = 3;
        let params = random_params(p, &mut rng);
        let hs: Vec<Vec<Vec<f64>>> = (0..2).map(|_| (0..4).map(|_| (0..p).map(|_| rng.normal()).collect()).collect()).collect();
        let s: Vec<Vec<f64>> = (0..2).map(|_| (0..p).map(|_| rng.normal()).collect()).collect();
        let mut tape = Tape::new();
        let av = AttentionVars::record(&mut tape, &params, false);
        let hv: Vec<Var> = (0..4)
            .map(|j| tape.constant(Matrix::from_columns(&[&hs[0][j], &hs[1][j]]).unwrap()))
            .collect();
        let sv = tape.constant(Matrix::from_columns(&[&s[0], &s[1]]).unwrap());
        let keys = av.project_keys(&mut tape, &hv).unwrap();
        let (alpha, ctx) = av.attend(&mut tape, sv, &hv, &keys).unwrap();
        for b in 0..2 {
            let w = attention_weights(&s[b], &hs[b], &params).unwrap();
            for j in 0..4 {
                assert!((tape.value(alpha).get(j, b) - w[j]).abs() < 1e-14);
            }
            for k in 0..p {
                let c: f64 = (0..4).map(|j| w[j] * hs[b][j][k]).sum();
                assert!((tape.value(ctx).get(k, b) - c).abs() < 1e-14);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn weights_are_a_distribution(seed in 0u64..10_000, n in 1usize..8, p in 1usize..6) {
            let mut rng = Rng::new(seed);
            let params = random_params(p, &mut rng);
            let hs: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| 3.0 * rng.normal()).collect()).collect();
            let s: Vec<f64> = (0..p).map(|_| 3.0 * rng.normal()).collect();
            let a = attention_weights(&s, &hs, &params).unwrap();
            proptest::prop_assert!(a.iter().all(|w| *w >= 0.0));
            proptest::prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
