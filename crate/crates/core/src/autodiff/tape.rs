//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values live in the
//! tape; callers hold lightweight [`Var`] handles. Node ids are assigned in
//! creation order, so the node list is already topologically sorted and
//! `backward` walks it once in reverse.

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Handle to a matrix recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Collapse rows, leaving a `1 x cols` result.
    Rows,
    /// Collapse columns, leaving a `rows x 1` result.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    AddRowBroadcast(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    SoftmaxRows(usize),
    NormalizeRows(usize),
    SumAll(usize),
    SumAxis(usize, Axis),
    ConcatCols(Vec<usize>),
    Transpose(usize),
    AdditiveScore { p: usize, q: usize, v: usize },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Operation record for a single forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Matrix>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.id].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`, if `v`
    /// requires a gradient and contributed to the loss.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.as_ref()?.get(v.id)?.as_ref()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        let (rows, cols) = value.shape();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { id, rows, cols }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::shape(op, a.shape(), b.shape()));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a.id]);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.cols != b.rows {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let value = self.value(a).matmul_unchecked(self.value(b));
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(value, Op::MatMul(a.id, b.id), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(value, Op::Add(a.id, b.id), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(value, Op::Sub(a.id, b.id), rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("hadamard", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(value, Op::Hadamard(a.id, b.id), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a.id, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a.id), |x| x + s)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Adds a `1 x cols` bias to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Result<Var> {
        if bias.rows != 1 || bias.cols != a.cols {
            return Err(Error::shape("add_row_broadcast", a.shape(), bias.shape()));
        }
        let b = self.value(bias).as_slice().to_vec();
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            for (x, bb) in value.row_mut(r).iter_mut().zip(&b) {
                *x += bb;
            }
        }
        let rg = self.rg(&[a.id, bias.id]);
        Ok(self.push(value, Op::AddRowBroadcast(a.id, bias.id), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a.id), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a.id), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a.id), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.id), f64::exp)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        if a.cols == 0 {
            return Err(Error::InvalidArgument(
                "softmax_rows needs at least one column".into(),
            ));
        }
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let rg = self.rg(&[a.id]);
        Ok(self.push(value, Op::SoftmaxRows(a.id), rg))
    }

    /// Divides each row by its sum. Rows summing to zero stay zero.
    /// Entries are expected to be nonnegative.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let s: f64 = row.iter().sum();
            if s != 0.0 {
                for x in row.iter_mut() {
                    *x /= s;
                }
            }
        }
        let rg = self.rg(&[a.id]);
        self.push(value, Op::NormalizeRows(a.id), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a.id]);
        self.push(Matrix::filled(1, 1, s), Op::SumAll(a.id), rg)
    }

    pub fn sum_over_axis(&mut self, a: Var, axis: Axis) -> Var {
        let m = self.value(a);
        let value = match axis {
            Axis::Rows => {
                let mut out = Matrix::zeros(1, m.cols());
                for r in 0..m.rows() {
                    for (o, x) in out.as_mut_slice().iter_mut().zip(m.row(r)) {
                        *o += x;
                    }
                }
                out
            }
            Axis::Cols => Matrix::column(&m.row_sums()),
        };
        let rg = self.rg(&[a.id]);
        self.push(value, Op::SumAxis(a.id, axis), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        for p in parts {
            if p.rows != first.rows {
                return Err(Error::shape("concat_cols", first.shape(), p.shape()));
            }
        }
        let rows = first.rows;
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.nodes[p.id].value.row(r);
                value.row_mut(r)[off..off + p.cols].copy_from_slice(src);
                off += p.cols;
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.rg(&ids);
        Ok(self.push(value, Op::ConcatCols(ids), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a.id]);
        self.push(value, Op::Transpose(a.id), rg)
    }

    /// Pairwise additive scores `s[i][j] = sum_f v[f] * tanh(p[i][f] + q[j][f])`.
    ///
    /// `p` is `n x f`, `q` is `m x f`, `v` is `f x 1`; the result is `n x m`.
    pub fn additive_score(&mut self, p: Var, q: Var, v: Var) -> Result<Var> {
        if p.cols != q.cols {
            return Err(Error::shape("additive_score", p.shape(), q.shape()));
        }
        if v.rows != p.cols || v.cols != 1 {
            return Err(Error::shape("additive_score", p.shape(), v.shape()));
        }
        let (pm, qm, vm) = (self.value(p), self.value(q), self.value(v));
        let (n, m, f) = (p.rows, q.rows, p.cols);
        let vv = vm.as_slice();
        let mut value = Matrix::zeros(n, m);
        for i in 0..n {
            let pi = pm.row(i);
            for j in 0..m {
                let qj = qm.row(j);
                let mut s = 0.0;
                for k in 0..f {
                    s += vv[k] * (pi[k] + qj[k]).tanh();
                }
                value.set(i, j, s);
            }
        }
        let rg = self.rg(&[p.id, q.id, v.id]);
        Ok(self.push(
            value,
            Op::AdditiveScore {
                p: p.id,
                q: q.id,
                v: v.id,
            },
            rg,
        ))
    }

    /// Populates gradients of the scalar `loss` with respect to every
    /// contributing node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Backward("empty tape".into()));
        }
        if self.grads.is_some() {
            return Err(Error::Backward(
                "backward already ran on this tape; record a fresh tape".into(),
            ));
        }
        if loss.shape() != (1, 1) {
            return Err(Error::Backward(format!(
                "loss must be 1x1, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Matrix::ones(1, 1));
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        // Intermediate gradients are kept; they are cheap at these sizes and
        // useful when debugging.
        self.grads = Some(grads);
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        let val = |i: usize| &self.nodes[i].value;
        let mut acc = |i: usize, contrib: Matrix| {
            if !self.nodes[i].requires_grad {
                return;
            }
            match &mut grads[i] {
                Some(existing) => existing.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[*a].requires_grad {
                    acc(*a, g.matmul_unchecked(&val(*b).transpose()));
                }
                if self.nodes[*b].requires_grad {
                    acc(*b, val(*a).transpose().matmul_unchecked(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Hadamard(a, b) => {
                if self.nodes[*a].requires_grad {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y));
                }
                if self.nodes[*b].requires_grad {
                    acc(*b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::AddRowBroadcast(a, b) => {
                acc(*a, g.clone());
                if self.nodes[*b].requires_grad {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(*b, gb);
                }
            }
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |gg, y| gg * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |gg, y| gg * y * (1.0 - y))),
            Op::Relu(a) => acc(
                *a,
                g.zip_map(val(*a), |gg, x| if x > 0.0 { gg } else { 0.0 }),
            ),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |gg, y| gg * y)),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut out = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols() {
                        out.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                acc(*a, out);
            }
            Op::NormalizeRows(a) => {
                let x = val(*a);
                let y = &node.value;
                let mut out = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let s: f64 = x.row(r).iter().sum();
                    if s == 0.0 {
                        continue;
                    }
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols() {
                        out.set(r, c, (g.get(r, c) - dot) / s);
                    }
                }
                acc(*a, out);
            }
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::SumAxis(a, axis) => {
                let (rows, cols) = val(*a).shape();
                let mut out = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        let gv = match axis {
                            Axis::Rows => g.get(0, c),
                            Axis::Cols => g.get(r, 0),
                        };
                        out.set(r, c, gv);
                    }
                }
                acc(*a, out);
            }
            Op::ConcatCols(ids) => {
                let mut off = 0;
                for &i in ids {
                    let w = val(i).cols();
                    if self.nodes[i].requires_grad {
                        let mut part = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            part.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        acc(i, part);
                    }
                    off += w;
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::AdditiveScore { p, q, v } => {
                let (pm, qm, vm) = (val(*p), val(*q), val(*v));
                let (n, m, f) = (pm.rows(), qm.rows(), pm.cols());
                let vv = vm.as_slice();
                let mut gp = Matrix::zeros(n, f);
                let mut gq = Matrix::zeros(m, f);
                let mut gv = Matrix::zeros(f, 1);
                for i in 0..n {
                    for j in 0..m {
                        let gij = g.get(i, j);
                        if gij == 0.0 {
                            continue;
                        }
                        for (k, &vk) in vv.iter().enumerate() {
                            let t = (pm.get(i, k) + qm.get(j, k)).tanh();
                            let d = gij * vk * (1.0 - t * t);
                            gp.as_mut_slice()[i * f + k] += d;
                            gq.as_mut_slice()[j * f + k] += d;
                            gv.as_mut_slice()[k] += gij * t;
                        }
                    }
                }
                acc(*p, gp);
                acc(*q, gq);
                acc(*v, gv);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
