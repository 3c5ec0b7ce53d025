//! Reverse-mode gradient tape over dense matrices.
//!
//! Every operation appends a node holding its forward value, so node indices
//! are already a topological order; the backward pass walks them in reverse.
//! Only nodes that depend on a parameter leaf are tracked. Constants never
//! receive gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use super::matrix::{sigmoid, softmax_into};
use super::Matrix;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// m×n plus an m×1 column broadcast over columns.
    AddCol(usize, usize),
    /// m×n scaled column-wise by a 1×n row.
    MulRow(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    SoftmaxCols(usize),
    SliceRows(usize, usize),
    ConcatRows(Vec<usize>),
    Transpose(usize),
    Sum(usize),
    SumSquares(usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to each tracked parameter leaf.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of a parameter leaf. Parameters the loss does not depend on
    /// get a zero matrix; constants and intermediate nodes get `None`.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.idx)
    }

    /// A trainable leaf; gradients flow into it.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An untracked leaf; it never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        assert_eq!(v.tape, self.id, "value() on a foreign Var");
        &self.nodes[v.idx].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn tracked(&self, i: usize) -> bool {
        self.nodes[i].tracked
    }

    fn binary(&mut self, a: Var, b: Var) -> Result<(usize, usize, bool)> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        Ok((a, b, self.tracked(a) || self.tracked(b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, t) = self.binary(a, b)?;
        let v = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        Ok(self.push(v, Op::MatMul(a, b), t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, t) = self.binary(a, b)?;
        let v = self.nodes[a].value.add(&self.nodes[b].value)?;
        Ok(self.push(v, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, t) = self.binary(a, b)?;
        let v = self.nodes[a].value.sub(&self.nodes[b].value)?;
        Ok(self.push(v, Op::Sub(a, b), t))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, t) = self.binary(a, b)?;
        let v = self.nodes[a].value.hadamard(&self.nodes[b].value)?;
        Ok(self.push(v, Op::Mul(a, b), t))
    }

    /// `a` (m×n) plus column `b` (m×1) added to every column.
    pub fn add_col(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, t) = self.binary(a, b)?;
        let (am, bm) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if bm.cols() != 1 || bm.rows() != am.rows() {
            return Err(Error::Shape {
                op: "add_col",
                left: am.shape(),
                right: bm.shape(),
            });
        }
        let mut v = am.clone();
        let cols = v.cols();
        for r in 0..v.rows() {
            let bias = bm.get(r, 0);
            for x in &mut v.data_mut()[r * cols..(r + 1) * cols] {
                *x += bias;
            }
        }
        Ok(self.push(v, Op::AddCol(ai, bi), t))
    }

    /// `a` (m×n) with column j scaled by `r[0, j]` (r is 1×n).
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (ai, ri, t) = self.binary(a, r)?;
        let (am, rm) = (&self.nodes[ai].value, &self.nodes[ri].value);
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::Shape {
                op: "mul_row",
                left: am.shape(),
                right: rm.shape(),
            });
        }
        let mut v = am.clone();
        let cols = v.cols();
        for row in v.data_mut().chunks_mut(cols) {
            for (x, s) in row.iter_mut().zip(rm.data()) {
                *x *= s;
            }
        }
        Ok(self.push(v, Op::MulRow(ai, ri), t))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.scale(s);
        let t = self.tracked(a);
        Ok(self.push(v, Op::Scale(a, s), t))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(sigmoid);
        let t = self.tracked(a);
        Ok(self.push(v, Op::Sigmoid(a), t))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(f64::tanh);
        let t = self.tracked(a);
        Ok(self.push(v, Op::Tanh(a), t))
    }

    /// Softmax applied independently to every column.
    pub fn softmax_cols(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let src = &self.nodes[a].value;
        if src.rows() == 0 {
            return Err(Error::invalid("softmax over an empty column"));
        }
        let src_t = src.transpose();
        let mut out_t = Matrix::zeros(src_t.rows(), src_t.cols());
        for c in 0..src_t.rows() {
            softmax_into(src_t.row(c), out_t.row_mut(c));
        }
        let t = self.tracked(a);
        Ok(self.push(out_t.transpose(), Op::SoftmaxCols(a), t))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let a = self.check(a)?;
        let src = &self.nodes[a].value;
        if start + len > src.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                left: src.shape(),
                right: (start, len),
            });
        }
        let c = src.cols();
        let v = Matrix::from_raw(len, c, src.data()[start * c..(start + len) * c].to_vec());
        let t = self.tracked(a);
        Ok(self.push(v, Op::SliceRows(a, start), t))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|p| self.check(*p)).collect::<Result<Vec<_>>>()?;
        let Some(&first) = idx.first() else {
            return Err(Error::invalid("concat_rows of nothing"));
        };
        let cols = self.nodes[first].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &idx {
            let m = &self.nodes[i].value;
            if m.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.nodes[first].value.shape(),
                    right: m.shape(),
                });
            }
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        let t = idx.iter().any(|&i| self.tracked(i));
        let v = Matrix::from_raw(rows, cols, data);
        Ok(self.push(v, Op::ConcatRows(idx), t))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.transpose();
        let t = self.tracked(a);
        Ok(self.push(v, Op::Transpose(a), t))
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let v = Matrix::filled(1, 1, self.nodes[a].value.sum());
        let t = self.tracked(a);
        Ok(self.push(v, Op::Sum(a), t))
    }

    /// Sum of squared entries, as a 1×1 node.
    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let s = self.nodes[a].value.data().iter().map(|x| x * x).sum();
        let t = self.tracked(a);
        Ok(self.push(Matrix::filled(1, 1, s), Op::SumSquares(a), t))
    }

    /// Backpropagates from a scalar `loss`, returning gradients for every
    /// parameter leaf recorded before it.
    pub fn grad(&self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        if self.nodes[root].value.shape() != (1, 1) {
            return Err(Error::invalid(format!(
                "loss must be a scalar, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root].tracked {
            grads[root] = Some(Matrix::filled(1, 1, 1.0));
        }

        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
        }

        // Parameters the loss does not reach get explicit zeros.
        for (i, node) in self.nodes.iter().enumerate() {
            if node.tracked && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Matrix::zeros(node.value.rows(), node.value.cols()));
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.tracked {
                grads[i] = None;
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], target: usize, contrib: Matrix) {
        if !self.nodes[target].tracked {
            return;
        }
        match &mut grads[target] {
            Some(g) => g.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let out = &self.nodes[i].value;
        let val = |j: usize| &self.nodes[j].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(grads, *a, g.matmul_t(val(*b))?);
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, val(*a).tmatmul(g)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(grads, *a, g.hadamard(val(*b))?);
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, g.hadamard(val(*a))?);
                }
            }
            Op::AddCol(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.tracked(*b) {
                    let sums: Vec<f64> = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                    self.accumulate(grads, *b, Matrix::column(sums));
                }
            }
            Op::MulRow(a, r) => {
                let (am, rm) = (val(*a), val(*r));
                if self.tracked(*a) {
                    let mut ga = g.clone();
                    let cols = ga.cols();
                    for row in ga.data_mut().chunks_mut(cols) {
                        for (x, s) in row.iter_mut().zip(rm.data()) {
                            *x *= s;
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.tracked(*r) {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for row in 0..g.rows() {
                        for ((acc, gx), ax) in gr.data_mut().iter_mut().zip(g.row(row)).zip(am.row(row)) {
                            *acc += gx * ax;
                        }
                    }
                    self.accumulate(grads, *r, gr);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::Sigmoid(a) => {
                let d = out.map(|y| y * (1.0 - y));
                self.accumulate(grads, *a, g.hadamard(&d)?);
            }
            Op::Tanh(a) => {
                let d = out.map(|y| 1.0 - y * y);
                self.accumulate(grads, *a, g.hadamard(&d)?);
            }
            Op::SoftmaxCols(a) => {
                let mut ga = Matrix::zeros(out.rows(), out.cols());
                for c in 0..out.cols() {
                    let dot: f64 = (0..out.rows()).map(|r| g.get(r, c) * out.get(r, c)).sum();
                    for r in 0..out.rows() {
                        ga.set(r, c, out.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SliceRows(a, start) => {
                let src = val(*a);
                let mut ga = Matrix::zeros(src.rows(), src.cols());
                let c = src.cols();
                ga.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let c = g.cols();
                for &p in parts {
                    let rows = val(p).rows();
                    if self.tracked(p) {
                        let piece = g.data()[offset * c..(offset + rows) * c].to_vec();
                        self.accumulate(grads, p, Matrix::from_raw(rows, c, piece));
                    }
                    offset += rows;
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g.get(0, 0);
                self.accumulate(grads, *a, val(*a).scale(s));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Rng;

    #[test]
    fn square_of_three() {
        let mut t = Tape::new();
        let x = t.param(Matrix::filled(1, 1, 3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.grad(y).unwrap();
        assert_eq!(g.get(x).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut t = Tape::new();
        let x = t.param(Matrix::filled(2, 2, 1.5));
        let c = t.constant(Matrix::filled(1, 1, 4.0));
        let loss = t.scale(c, 2.0).unwrap();
        let g = t.grad(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &Matrix::zeros(2, 2));
    }

    #[test]
    fn constants_have_no_gradient() {
        let mut t = Tape::new();
        let w = t.param(Matrix::filled(1, 2, 0.5));
        let x = t.constant(Matrix::column(vec![1.0, 2.0]));
        let y = t.matmul(w, x).unwrap();
        let g = t.grad(y).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn loss_from_other_tape_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let _ = a.param(Matrix::filled(1, 1, 1.0));
        let y = b.param(Matrix::filled(1, 1, 1.0));
        assert!(matches!(a.grad(y), Err(Error::ForeignVar)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 1));
        assert!(t.grad(x).is_err());
    }

    /// Two-layer tanh network with 10 parameters checked against central
    /// differences.
    #[test]
    fn two_layer_tanh_matches_finite_differences() {
        let mut rng = Rng::new(99);
        // W1 2x2, b1 2x1, W2 1x2, b2 1x1, output gain 1x1
        let shapes = [(2, 2), (2, 1), (1, 2), (1, 1), (1, 1)];
        let params: Vec<Matrix> = shapes
            .iter()
            .map(|&(r, c)| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap())
            .collect();
        let x = Matrix::column(vec![0.3, -0.7]);
        let f = |ps: &[Matrix]| -> (f64, Vec<Matrix>) {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.param(p.clone())).collect();
            let xin = t.constant(x.clone());
            let h = t.matmul(vs[0], xin).unwrap();
            let h = t.add(h, vs[1]).unwrap();
            let h = t.tanh(h).unwrap();
            let o = t.matmul(vs[2], h).unwrap();
            let o = t.add(o, vs[3]).unwrap();
            let o = t.tanh(o).unwrap();
            let o = t.mul(o, vs[4]).unwrap();
            let l = t.sum_squares(o).unwrap();
            let g = t.grad(l).unwrap();
            (t.scalar(l), vs.iter().map(|v| g.get(*v).unwrap().clone()).collect())
        };
        let (_, analytic) = f(&params);
        let h = 1e-5;
        for pi in 0..params.len() {
            for k in 0..params[pi].data().len() {
                let mut plus = params.clone();
                plus[pi].data_mut()[k] += h;
                let mut minus = params.clone();
                minus[pi].data_mut()[k] -= h;
                let fd = (f(&plus).0 - f(&minus).0) / (2.0 * h);
                let an = analytic[pi].data()[k];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(rel < 1e-4, "param {pi}[{k}]: fd {fd} analytic {an}");
            }
        }
    }
}
