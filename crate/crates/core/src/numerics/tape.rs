//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] is built fresh for every training step. Nodes are appended in
//! evaluation order, so parents always precede children and one reverse
//! sweep visits each node once.

use std::sync::Arc;

use super::{Matrix, SparseOperator};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulCol(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    Spmm(Arc<SparseOperator>, Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    SumRows(Var),
    NormalizeRows(Var, Vec<f64>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; all zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow for large `|x|`.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(row));
        if bm.rows() != 1 || bm.cols() != am.cols() {
            return Err(Error::dim("add_row", am.shape(), bm.shape()));
        }
        let mut value = am.clone();
        for r in 0..value.rows() {
            for (x, &b) in value.row_mut(r).iter_mut().zip(bm.row(0)) {
                *x += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    /// Scales row `r` of an `m x n` matrix by entry `r` of an `m x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (am, cm) = (self.value(a), self.value(col));
        if cm.cols() != 1 || cm.rows() != am.rows() {
            return Err(Error::dim("mul_col", am.shape(), cm.shape()));
        }
        let mut value = am.clone();
        for r in 0..value.rows() {
            let s = cm.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        let ng = self.needs(a) || self.needs(col);
        Ok(self.push(value, Op::MulCol(a, col), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(Error::dim("concat_cols", (rows, cols), m.shape()));
            }
            cols += m.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Matrix::from_raw(rows, cols, data), Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(Error::dim("concat_rows", (rows, cols), m.shape()));
            }
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Matrix::from_raw(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(a);
        if start + len > m.rows() {
            return Err(Error::dim("slice_rows", m.shape(), (start + len, m.cols())));
        }
        let c = m.cols();
        let value = Matrix::from_raw(len, c, m.data()[start * c..(start + len) * c].to_vec());
        let ng = self.needs(a);
        Ok(self.push(value, Op::SliceRows(a, start), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(a);
        if start + len > m.cols() {
            return Err(Error::dim("slice_cols", m.shape(), (m.rows(), start + len)));
        }
        let value = Matrix::from_fn(m.rows(), len, |r, c| m.get(r, start + c));
        let ng = self.needs(a);
        Ok(self.push(value, Op::SliceCols(a, start), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.needs(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m.rows()) {
            return Err(Error::Contract(format!(
                "gather_rows index {bad} out of {} rows",
                m.rows()
            )));
        }
        let value = m.select_rows(idx);
        let ng = self.needs(a);
        Ok(self.push(value, Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// Constant sparse operator times a dense node.
    pub fn spmm(&mut self, op: &Arc<SparseOperator>, x: Var) -> Result<Var> {
        let value = op.forward.matmul_dense(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Spmm(Arc::clone(op), x), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(log_sigmoid);
        let ng = self.needs(a);
        self.push(value, Op::LogSigmoid(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push(value, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let ng = self.needs(a);
        self.push(value, Op::Log(a), ng)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_raw(1, 1, vec![self.value(a).sum()]);
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    /// Per-row sums, as an `m x 1` node.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let data = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
        let value = Matrix::from_raw(m.rows(), 1, data);
        let ng = self.needs(a);
        self.push(value, Op::SumRows(a), ng)
    }

    /// Divides every row by its L2 norm. Zero rows stay zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let norms: Vec<f64> = (0..m.rows())
            .map(|r| m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut value = m.clone();
        for (r, &n) in norms.iter().enumerate() {
            let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
            value.row_mut(r).iter_mut().for_each(|x| *x *= inv);
        }
        let ng = self.needs(a);
        self.push(value, Op::NormalizeRows(a, norms), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        let ng = self.needs(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let ng = self.needs(a);
        self.push(value, Op::LogSoftmaxRows(a), ng)
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let ga = g.matmul(&val(*b).transpose()).expect("shapes checked in forward");
                    accumulate(&mut grads[a.0], ga);
                }
                if wants(*b) {
                    let gb = val(*a).transpose().matmul(g).expect("shapes checked in forward");
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.hadamard(val(*b)).unwrap());
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.hadamard(val(*a)).unwrap());
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.scale(*s));
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(*row) {
                    let mut gr = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (acc, &x) in gr.iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads[row.0], Matrix::from_raw(1, g.cols(), gr));
                }
            }
            Op::MulCol(a, col) => {
                let (am, cm) = (val(*a), val(*col));
                if wants(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let s = cm.get(r, 0);
                        ga.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                if wants(*col) {
                    let data = (0..g.rows())
                        .map(|r| g.row(r).iter().zip(am.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    accumulate(&mut grads[col.0], Matrix::from_raw(g.rows(), 1, data));
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        let part = Matrix::from_fn(g.rows(), w, |r, c| g.get(r, offset + c));
                        accumulate(&mut grads[p.0], part);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let h = val(p).rows();
                    if wants(p) {
                        let part = Matrix::from_raw(h, c, g.data()[offset * c..(offset + h) * c].to_vec());
                        accumulate(&mut grads[p.0], part);
                    }
                    offset += h;
                }
            }
            Op::SliceRows(a, start) => {
                if wants(*a) {
                    let src = val(*a);
                    let c = src.cols();
                    let mut ga = Matrix::zeros(src.rows(), c);
                    ga.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::SliceCols(a, start) => {
                if wants(*a) {
                    let src = val(*a);
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.transpose());
                }
            }
            Op::GatherRows(a, idx) => {
                if wants(*a) {
                    let src = val(*a);
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for (k, &i) in idx.iter().enumerate() {
                        for (dst, &x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *dst += x;
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::Spmm(op, x) => {
                if wants(*x) {
                    let gx = op.adjoint.matmul_dense(g).expect("shapes checked in forward");
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    let ga = Matrix::from_raw(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    );
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    let ga = Matrix::from_raw(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    );
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::LogSigmoid(a) => {
                if wants(*a) {
                    let x = val(*a);
                    let ga = Matrix::from_raw(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(x.data()).map(|(g, &x)| g * sigmoid(-x)).collect(),
                    );
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::Exp(a) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.hadamard(y).unwrap());
                }
            }
            Op::Log(a) => {
                if wants(*a) {
                    let x = val(*a);
                    let ga = Matrix::from_raw(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(x.data()).map(|(g, x)| g / x).collect(),
                    );
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let (r, c) = val(*a).shape();
                    accumulate(&mut grads[a.0], Matrix::filled(r, c, g.get(0, 0)));
                }
            }
            Op::SumRows(a) => {
                if wants(*a) {
                    let (r, c) = val(*a).shape();
                    accumulate(&mut grads[a.0], Matrix::from_fn(r, c, |i, _| g.get(i, 0)));
                }
            }
            Op::NormalizeRows(a, norms) => {
                if wants(*a) {
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for (r, &n) in norms.iter().enumerate() {
                        if n == 0.0 {
                            continue;
                        }
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((dst, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *dst = (gv - yv * dot) / n;
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::SoftmaxRows(a) => {
                if wants(*a) {
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((dst, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *dst = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::LogSoftmaxRows(a) => {
                if wants(*a) {
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let total: f64 = gr.iter().sum();
                        for ((dst, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *dst = gv - yv.exp() * total;
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
            }
        }
    }
}
