//! Tape-based reverse-mode differentiation over matrices.
//!
//! A forward pass records one node per operation. [`Tape::backward`] walks
//! the tape in reverse, accumulating gradients for every node; gradients of
//! parameter leaves are then folded into a [`crate::params::ParameterRegistry`].
//!
//! The op set is exactly what the reranker needs, not a general tensor
//! library. Every op's adjoint is checked against central finite differences
//! in the test suite.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::{Element, Matrix};
use crate::params::ParameterRegistry;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<F: Element> {
    Leaf,
    MatMul(usize, usize),
    /// `a @ b.T`
    MatMulBt(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// matrix + broadcast row
    AddRow(usize, usize),
    /// matrix * broadcast row
    MulRow(usize, usize),
    /// matrix * broadcast column
    MulCol(usize, usize),
    /// per-row sum, output is rows x 1
    RowSums(usize),
    Scale(usize, F),
    AddScalar(usize, F),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    SoftmaxRows(usize),
    /// row-wise standardization to mean 0 / variance 1
    NormalizeRows(usize, F),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize, usize),
    SliceCols(usize, usize, usize),
    Sum(usize),
    Mean(usize),
    /// per-row log-sum-exp, output is rows x 1
    LogSumExpRows(usize),
    /// single element as 1x1
    Select(usize, usize, usize),
}

struct Node<F: Element> {
    value: Matrix<F>,
    op: Op<F>,
    /// registry slot when this leaf is a trainable parameter
    param: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TapeError {
    /// backward requested on a non-scalar node
    NonScalarLoss { rows: usize, cols: usize },
    /// loss value is NaN or infinite
    NonFiniteLoss(String),
}

impl core::fmt::Display for TapeError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TapeError::NonScalarLoss { rows, cols } => {
                write!(f, "backward requires a 1x1 loss, got {rows}x{cols}")
            }
            TapeError::NonFiniteLoss(ctx) => write!(f, "non-finite loss: {ctx}"),
        }
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<F: Element> {
    grads: Vec<Option<Matrix<F>>>,
}

impl<F: Element> Gradients<F> {
    /// Gradient of the loss with respect to `v`; zeros if `v` never
    /// influenced the loss.
    pub fn wrt(&self, tape: &Tape<F>, v: Var) -> Matrix<F> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.nodes[v.0].value.shape();
                Matrix::zeros(r, c)
            }
        }
    }

    /// Add parameter-leaf gradients into the registry's gradient buffers.
    pub fn accumulate_into(&self, tape: &Tape<F>, registry: &mut ParameterRegistry<F>) {
        for (node, grad) in tape.nodes.iter().zip(self.grads.iter()) {
            if let (Some(slot), Some(g)) = (node.param, grad) {
                registry.grad_mut(slot).add_assign(g);
            }
        }
    }
}

/// Records a forward computation; one tape per forward/backward pass.
pub struct Tape<F: Element> {
    nodes: Vec<Node<F>>,
}

impl<F: Element> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix<F>, op: Op<F>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked beyond the leaf itself.
    pub fn constant(&mut self, m: Matrix<F>) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Leaf bound to a registry parameter; its gradient is folded back by
    /// [`Gradients::accumulate_into`].
    pub fn param(&mut self, registry: &ParameterRegistry<F>, slot: usize) -> Var {
        let v = self.push(registry.value(slot).clone(), Op::Leaf);
        self.nodes[v.0].param = Some(slot);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a.0, b.0))
    }

    /// `a @ b.T`; the layout used by linear layers with row-major weights.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        self.push(value, Op::MatMulBt(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a.0, b.0))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a 1xC row");
        assert_eq!(self.value(a).cols(), r.cols(), "add_row width mismatch");
        let mut value = self.value(a).clone();
        let rowv = self.value(row).clone();
        for i in 0..value.rows() {
            for (x, &b) in value.row_mut(i).iter_mut().zip(rowv.data()) {
                *x = *x + b;
            }
        }
        self.push(value, Op::AddRow(a.0, row.0))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "mul_row expects a 1xC row");
        assert_eq!(self.value(a).cols(), r.cols(), "mul_row width mismatch");
        let mut value = self.value(a).clone();
        let rowv = self.value(row).clone();
        for i in 0..value.rows() {
            for (x, &b) in value.row_mut(i).iter_mut().zip(rowv.data()) {
                *x = *x * b;
            }
        }
        self.push(value, Op::MulRow(a.0, row.0))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let c = self.value(col);
        assert_eq!(c.cols(), 1, "mul_col expects an Rx1 column");
        assert_eq!(self.value(a).rows(), c.rows(), "mul_col height mismatch");
        let mut value = self.value(a).clone();
        let colv = self.value(col).clone();
        for i in 0..value.rows() {
            let s = colv.get(i, 0);
            for x in value.row_mut(i) {
                *x = *x * s;
            }
        }
        self.push(value, Op::MulCol(a.0, col.0))
    }

    pub fn row_sums(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = Matrix::zeros(x.rows(), 1);
        for r in 0..x.rows() {
            value.set(r, 0, x.row(r).iter().copied().sum::<F>());
        }
        self.push(value, Op::RowSums(a.0))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a.0, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > F::zero() { x } else { F::zero() });
        self.push(value, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(stable_sigmoid);
        self.push(value, Op::Sigmoid(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(stable_softplus);
        self.push(value, Op::Softplus(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            softmax_into(x.row(r), value.row_mut(r));
        }
        self.push(value, Op::SoftmaxRows(a.0))
    }

    /// Row-wise `(x - mean) / sqrt(var + eps)`; affine gain/shift are applied
    /// by the caller via [`Tape::mul_row`] / [`Tape::add_row`].
    pub fn normalize_rows(&mut self, a: Var, eps: F) -> Var {
        let x = self.value(a);
        let n = F::from_usize(x.cols());
        let mut value = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<F>()
                / n;
            let inv_std = (var + eps).sqrt().recip();
            for (o, &v) in value.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv_std;
            }
        }
        self.push(value, Op::NormalizeRows(a.0, eps))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(m.data());
        }
        self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.iter().map(|v| v.0).collect()),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p).clone();
            assert_eq!(m.rows(), rows, "concat_cols height mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        self.push(out, Op::ConcatCols(parts.iter().map(|v| v.0).collect()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.rows(), "slice_rows out of range");
        let cols = x.cols();
        let data = x.data()[start * cols..(start + len) * cols].to_vec();
        self.push(
            Matrix::from_vec(len, cols, data),
            Op::SliceRows(a.0, start, len),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "slice_cols out of range");
        let mut out = Matrix::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a.0, start, len))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<F>();
        self.push(Matrix::scalar(s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().copied().sum::<F>() / F::from_usize(x.len());
        self.push(Matrix::scalar(s), Op::Mean(a.0))
    }

    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = Matrix::zeros(x.rows(), 1);
        for r in 0..x.rows() {
            value.set(r, 0, logsumexp(x.row(r)));
        }
        self.push(value, Op::LogSumExpRows(a.0))
    }

    pub fn select(&mut self, a: Var, r: usize, c: usize) -> Var {
        let v = self.value(a).get(r, c);
        self.push(Matrix::scalar(v), Op::Select(a.0, r, c))
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, TapeError> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(TapeError::NonScalarLoss {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        if !lv.item().is_finite() {
            return Err(TapeError::NonFiniteLoss(String::from(
                "loss node is NaN or infinite",
            )));
        }

        let mut grads: Vec<Option<Matrix<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(F::one()));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Matrix<F>>], idx: usize, delta: Matrix<F>) {
        match &mut grads[idx] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, i: usize, g: &Matrix<F>, grads: &mut [Option<Matrix<F>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.matmul_bt(&self.nodes[*b].value);
                let db = self.nodes[*a].value.matmul_at(g);
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::MatMulBt(a, b) => {
                let da = g.matmul(&self.nodes[*b].value);
                let db = g.matmul_at(&self.nodes[*a].value);
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                Self::accumulate(grads, *a, g.zip_map(&self.nodes[*b].value, |x, y| x * y));
                Self::accumulate(grads, *b, g.zip_map(&self.nodes[*a].value, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                Self::accumulate(grads, *a, g.clone());
                let mut drow = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, &v) in drow.row_mut(0).iter_mut().zip(g.row(r)) {
                        *d = *d + v;
                    }
                }
                Self::accumulate(grads, *row, drow);
            }
            Op::MulRow(a, row) => {
                let rowv = &self.nodes[*row].value;
                let av = &self.nodes[*a].value;
                let mut da = g.clone();
                for r in 0..da.rows() {
                    for (d, &s) in da.row_mut(r).iter_mut().zip(rowv.data()) {
                        *d = *d * s;
                    }
                }
                Self::accumulate(grads, *a, da);
                let mut drow = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        let acc = drow.get(0, c) + g.get(r, c) * av.get(r, c);
                        drow.set(0, c, acc);
                    }
                }
                Self::accumulate(grads, *row, drow);
            }
            Op::MulCol(a, col) => {
                let colv = &self.nodes[*col].value;
                let av = &self.nodes[*a].value;
                let mut da = g.clone();
                let mut dcol = Matrix::zeros(g.rows(), 1);
                for r in 0..g.rows() {
                    let s = colv.get(r, 0);
                    let mut acc = F::zero();
                    for (d, &x) in da.row_mut(r).iter_mut().zip(av.row(r)) {
                        acc = acc + *d * x;
                        *d = *d * s;
                    }
                    dcol.set(r, 0, acc);
                }
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *col, dcol);
            }
            Op::RowSums(a) => {
                let src = &self.nodes[*a].value;
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for r in 0..src.rows() {
                    let gv = g.get(r, 0);
                    da.row_mut(r).fill(gv);
                }
                Self::accumulate(grads, *a, da);
            }
            Op::Scale(a, c) => Self::accumulate(grads, *a, g.map(|x| x * *c)),
            Op::AddScalar(a, _) => Self::accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let x = &self.nodes[*a].value;
                Self::accumulate(
                    grads,
                    *a,
                    g.zip_map(x, |gv, xv| if xv > F::zero() { gv } else { F::zero() }),
                );
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                Self::accumulate(grads, *a, g.zip_map(y, |gv, yv| gv * yv * (F::one() - yv)));
            }
            Op::Softplus(a) => {
                let x = &self.nodes[*a].value;
                Self::accumulate(grads, *a, g.zip_map(x, |gv, xv| gv * stable_sigmoid(xv)));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut da = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot = y
                        .row(r)
                        .iter()
                        .zip(g.row(r))
                        .map(|(&yv, &gv)| yv * gv)
                        .sum::<F>();
                    for ((d, &yv), &gv) in da.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *d = yv * (gv - dot);
                    }
                }
                Self::accumulate(grads, *a, da);
            }
            Op::NormalizeRows(a, eps) => {
                let x = &self.nodes[*a].value;
                let y = &node.value;
                let n = F::from_usize(x.cols());
                let mut da = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let mean = row.iter().copied().sum::<F>() / n;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
                    let inv_std = (var + *eps).sqrt().recip();
                    let g_mean = g.row(r).iter().copied().sum::<F>() / n;
                    let gy_mean = g
                        .row(r)
                        .iter()
                        .zip(y.row(r))
                        .map(|(&gv, &yv)| gv * yv)
                        .sum::<F>()
                        / n;
                    for ((d, &gv), &yv) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *d = inv_std * (gv - g_mean - yv * gy_mean);
                    }
                }
                Self::accumulate(grads, *a, da);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.nodes[p].value.rows();
                    let cols = g.cols();
                    let data = g.data()[start * cols..(start + rows) * cols].to_vec();
                    Self::accumulate(grads, p, Matrix::from_vec(rows, cols, data));
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let cols = self.nodes[p].value.cols();
                    let mut dp = Matrix::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[start..start + cols]);
                    }
                    Self::accumulate(grads, p, dp);
                    start += cols;
                }
            }
            Op::SliceRows(a, start, len) => {
                let src = &self.nodes[*a].value;
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for r in 0..*len {
                    da.row_mut(start + r).copy_from_slice(g.row(r));
                }
                Self::accumulate(grads, *a, da);
            }
            Op::SliceCols(a, start, len) => {
                let src = &self.nodes[*a].value;
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for r in 0..src.rows() {
                    da.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                }
                Self::accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let (r, c) = self.nodes[*a].value.shape();
                Self::accumulate(grads, *a, Matrix::full(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.nodes[*a].value.shape();
                let scale = g.item() / F::from_usize(r * c);
                Self::accumulate(grads, *a, Matrix::full(r, c, scale));
            }
            Op::LogSumExpRows(a) => {
                let x = &self.nodes[*a].value;
                let mut da = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    softmax_into(x.row(r), da.row_mut(r));
                    let gv = g.get(r, 0);
                    for d in da.row_mut(r) {
                        *d = *d * gv;
                    }
                }
                Self::accumulate(grads, *a, da);
            }
            Op::Select(a, r, c) => {
                let src = &self.nodes[*a].value;
                let mut da = Matrix::zeros(src.rows(), src.cols());
                da.set(*r, *c, g.item());
                Self::accumulate(grads, *a, da);
            }
        }
    }
}

#[inline]
pub fn stable_sigmoid<F: Element>(x: F) -> F {
    if x >= F::zero() {
        (F::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub fn stable_softplus<F: Element>(x: F) -> F {
    let zero = F::zero();
    let pos = if x > zero { x } else { zero };
    pos + (F::one() + (-x.abs()).exp()).ln()
}

fn softmax_into<F: Element>(row: &[F], out: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        sum = sum + e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

fn logsumexp<F: Element>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    if !max.is_finite() {
        return max;
    }
    let sum = row.iter().map(|&v| (v - max).exp()).sum::<F>();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    /// Central-difference gradient of a scalar function of one matrix input.
    fn fd_grad(
        f: &dyn Fn(&Matrix<f64>) -> f64,
        x: &Matrix<f64>,
        h: f64,
    ) -> Matrix<f64> {
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn check_op(build: impl Fn(&mut Tape<f64>, Var) -> Var, x: Matrix<f64>, tol: f64) {
        let f = |m: &Matrix<f64>| {
            let mut t = Tape::new();
            let v = t.constant(m.clone());
            let out = build(&mut t, v);
            // reduce to scalar with fixed weights so every output entry matters
            let out_val = t.value(out);
            out_val
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (0.3 + 0.1 * i as f64))
                .sum()
        };
        let mut t = Tape::new();
        let v = t.constant(x.clone());
        let out = build(&mut t, v);
        let w: Vec<f64> = (0..t.value(out).len()).map(|i| 0.3 + 0.1 * i as f64).collect();
        let (r, c) = t.value(out).shape();
        let wmat = t.constant(Matrix::from_vec(r, c, w));
        let weighted = t.mul(out, wmat);
        let loss = t.sum(weighted);
        let grads = t.backward(loss).unwrap();
        let analytic = grads.wrt(&t, v);
        let numeric = fd_grad(&f, &x, 1e-5);
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let denom = a.abs().max(n.abs()).max(1.0);
            assert!(
                (a - n).abs() / denom < tol,
                "analytic {a} vs numeric {n}"
            );
        }
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| next()).collect())
    }

    #[test]
    fn matmul_bt_gradients() {
        let w = sample(4, 3, 7);
        check_op(
            move |t, x| {
                let wv = t.constant(w.clone());
                t.matmul_bt(x, wv)
            },
            sample(2, 3, 3),
            1e-6,
        );
    }

    #[test]
    fn matmul_gradients_both_sides() {
        let b = sample(3, 4, 11);
        check_op(
            move |t, x| {
                let bv = t.constant(b.clone());
                t.matmul(x, bv)
            },
            sample(2, 3, 5),
            1e-6,
        );
    }

    #[test]
    fn softmax_rows_gradients() {
        check_op(|t, x| t.softmax_rows(x), sample(3, 5, 13), 1e-6);
    }

    #[test]
    fn normalize_rows_gradients() {
        check_op(|t, x| t.normalize_rows(x, 1e-5), sample(3, 6, 17), 1e-5);
    }

    #[test]
    fn sigmoid_softplus_relu_gradients() {
        check_op(|t, x| t.sigmoid(x), sample(2, 4, 19), 1e-6);
        check_op(|t, x| t.softplus(x), sample(2, 4, 23), 1e-6);
        // keep entries away from the relu kink
        let x = sample(2, 4, 29).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
        check_op(|t, x| t.relu(x), x, 1e-6);
    }

    #[test]
    fn logsumexp_and_select_gradients() {
        check_op(|t, x| t.logsumexp_rows(x), sample(3, 4, 31), 1e-6);
        check_op(|t, x| t.select(x, 1, 2), sample(2, 4, 37), 1e-6);
    }

    #[test]
    fn concat_slice_gradients() {
        check_op(
            |t, x| {
                let a = t.slice_cols(x, 0, 2);
                let b = t.slice_cols(x, 2, 3);
                let c = t.concat_cols(&[b, a]);
                let d = t.slice_rows(c, 0, 2);
                let e = t.slice_rows(c, 2, 1);
                t.concat_rows(&[e, d])
            },
            sample(3, 5, 41),
            1e-6,
        );
    }

    #[test]
    fn row_broadcast_gradients() {
        let row = sample(1, 4, 43);
        check_op(
            move |t, x| {
                let r = t.constant(row.clone());
                let y = t.mul_row(x, r);
                t.add_row(y, r)
            },
            sample(3, 4, 47),
            1e-6,
        );
    }

    #[test]
    fn col_broadcast_and_row_sum_gradients() {
        let col = sample(3, 1, 53);
        check_op(
            move |t, x| {
                let c = t.constant(col.clone());
                t.mul_col(x, c)
            },
            sample(3, 4, 57),
            1e-6,
        );
        // gradient with respect to the broadcast column itself
        let mat = sample(3, 4, 59);
        check_op(
            move |t, c| {
                let m = t.constant(mat.clone());
                t.mul_col(m, c)
            },
            sample(3, 1, 61),
            1e-6,
        );
        check_op(|t, x| t.row_sums(x), sample(4, 5, 63), 1e-6);
    }

    #[test]
    fn row_sums_match_manual_sum() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 0.5]]));
        let s = t.row_sums(x);
        assert_eq!(t.value(s).data(), &[6.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(sample(4, 7, 51).map(|v| v * 30.0));
        let y = t.softmax_rows(x);
        for r in 0..4 {
            let s: f64 = t.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Matrix::zeros(2, 2));
        assert!(matches!(
            t.backward(x),
            Err(TapeError::NonScalarLoss { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn backward_rejects_non_finite_loss() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Matrix::scalar(f64::NAN));
        assert!(matches!(t.backward(x), Err(TapeError::NonFiniteLoss(_))));
    }
}
