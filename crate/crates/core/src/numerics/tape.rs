//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its output value and enough context to push adjoints back to its inputs.
//! Nodes are appended in evaluation order, so walking the node list from the
//! end visits each node after all of its consumers. [`Tape::backward`]
//! returns the gradient of a scalar output with respect to every
//! [`ParamId`] read during the pass.
//!
//! Parameters are never copied onto the tape: a parameter node refers back
//! into the borrowed [`ParameterStore`].

use std::collections::BTreeMap;

use rand::Rng;

use super::dropout::dropout_mask;
use super::{Matrix, ParamId, ParameterStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Matrix),
    Param(ParamId),
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    SoftmaxRows(Var),
    RowSum(Var),
    RowMean(Var),
    Sum(Var),
    SumSquares(Var),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    Segment {
        input: Var,
        offsets: Vec<usize>,
        mean: bool,
    },
    ScaleRows(Var, Var),
    Mask(Var, Matrix),
}

struct Node {
    value: Value,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], keyed by parameter.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    /// Adds every gradient into the matching parameter's `grad` buffer.
    pub fn accumulate_into(&self, store: &mut ParameterStore) -> Result<()> {
        for (id, g) in &self.grads {
            store.get_mut(*id).grad.add_assign(g)?;
        }
        Ok(())
    }
}

pub struct Tape<'a> {
    store: &'a ParameterStore,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Reads the single entry of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).scale(factor);
        self.push(out, Op::Scale(a, factor))
    }

    /// Sums any number of equally shaped nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::Config("add_all of nothing".into()))?;
        let mut acc = *first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    /// Horizontal concatenation `[a | b | ...]`; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Config("concat_cols of nothing".into()))?;
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::dim("concat_cols", self.shape(first), s));
            }
            cols += s.1;
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(logistic);
        self.push(out, Op::Sigmoid(a))
    }

    /// Numerically stable `log σ(x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(log_logistic);
        self.push(out, Op::LogSigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Sums each row to a single column: `n x d -> n x 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
        let out = Matrix::from_vec(x.rows(), 1, data).expect("row_sum shape");
        self.push(out, Op::RowSum(a))
    }

    /// Averages each row: `n x d -> n x 1`.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let d = x.cols().max(1) as f64;
        let data = (0..x.rows())
            .map(|r| x.row(r).iter().sum::<f64>() / d)
            .collect();
        let out = Matrix::from_vec(x.rows(), 1, data).expect("row_mean shape");
        self.push(out, Op::RowMean(a))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::row_vector(&[self.value(a).sum()]);
        self.push(out, Op::Sum(a))
    }

    /// Squared Frobenius norm, as a `1 x 1` node.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = Matrix::row_vector(&[self.value(a).sum_squares()]);
        self.push(out, Op::SumSquares(a))
    }

    /// Row lookup; indices may repeat. The adjoint scatter-adds.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let mut out = Matrix::zeros(indices.len(), x.cols());
        for (dst, &src) in indices.iter().enumerate() {
            if src >= x.rows() {
                return Err(Error::dim("gather_rows", x.shape(), (src, 0)));
            }
            out.row_mut(dst).copy_from_slice(x.row(src));
        }
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec())))
    }

    /// Column lookup; indices may repeat.
    pub fn gather_cols(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&c| c >= x.cols()) {
            return Err(Error::dim("gather_cols", x.shape(), (0, bad)));
        }
        let mut out = Matrix::zeros(x.rows(), indices.len());
        for r in 0..x.rows() {
            for (dst, &src) in indices.iter().enumerate() {
                out.set(r, dst, x.get(r, src));
            }
        }
        Ok(self.push(out, Op::GatherCols(a, indices.to_vec())))
    }

    /// Reduces consecutive row groups. Group `g` spans rows
    /// `offsets[g]..offsets[g + 1]`; an empty group yields a zero row.
    pub fn segment_sum(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        self.segment(a, offsets, false)
    }

    /// Like [`Tape::segment_sum`] but divides by the group size.
    pub fn segment_mean(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        self.segment(a, offsets, true)
    }

    fn segment(&mut self, a: Var, offsets: &[usize], mean: bool) -> Result<Var> {
        let x = self.value(a);
        let valid = offsets.first() == Some(&0)
            && offsets.last() == Some(&x.rows())
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if !valid {
            return Err(Error::dim(
                "segment",
                x.shape(),
                (offsets.last().copied().unwrap_or(0), offsets.len()),
            ));
        }
        let groups = offsets.len() - 1;
        let mut out = Matrix::zeros(groups, x.cols());
        for g in 0..groups {
            let (lo, hi) = (offsets[g], offsets[g + 1]);
            let dst = out.row_mut(g);
            for r in lo..hi {
                for (o, v) in dst.iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
            if mean && hi > lo {
                let inv = 1.0 / (hi - lo) as f64;
                dst.iter_mut().for_each(|o| *o *= inv);
            }
        }
        Ok(self.push(
            out,
            Op::Segment {
                input: a,
                offsets: offsets.to_vec(),
                mean,
            },
        ))
    }

    /// Scales each row of `x` (`n x d`) by the matching entry of `weights` (`n x 1`).
    pub fn scale_rows(&mut self, x: Var, weights: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(weights));
        if wv.cols() != 1 || wv.rows() != xv.rows() {
            return Err(Error::dim("scale_rows", xv.shape(), wv.shape()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let w = wv.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|v| *v *= w);
        }
        Ok(self.push(out, Op::ScaleRows(x, weights)))
    }

    /// Inverted dropout. Outside training, or with a zero rate, the input
    /// node itself is returned.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let (r, c) = self.shape(a);
        let mask = dropout_mask(r, c, rate, rng)?;
        let out = self.value(a).hadamard(&mask)?;
        Ok(self.push(out, Op::Mask(a, mask)))
    }

    /// Back-propagates from `output`, seeding its adjoint with ones.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let mut adj: Vec<Option<Matrix>> = (0..=output.0).map(|_| None).collect();
        let (r, c) = self.shape(output);
        adj[output.0] = Some(Matrix::filled(r, c, 1.0));
        let mut grads = Gradients::default();

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match grads.grads.get_mut(id) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        grads.grads.insert(*id, g);
                    }
                },
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut adj, *a, da)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0))?;
                    accumulate(&mut adj, *a, g)?;
                }
                Op::Mul(a, b) => {
                    let da = g.hadamard(self.value(*b))?;
                    let db = g.hadamard(self.value(*a))?;
                    accumulate(&mut adj, *a, da)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::Scale(a, f) => accumulate(&mut adj, *a, g.scale(*f))?,
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = self.shape(p);
                        let mut dp = Matrix::zeros(pr, pc);
                        for row in 0..pr {
                            dp.row_mut(row)
                                .copy_from_slice(&g.row(row)[offset..offset + pc]);
                        }
                        offset += pc;
                        accumulate(&mut adj, p, dp)?;
                    }
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(idx));
                    let da = g.hadamard(&y.map(|t| 1.0 - t * t))?;
                    accumulate(&mut adj, *a, da)?;
                }
                Op::Sigmoid(a) => {
                    let y = self.value(Var(idx));
                    let da = g.hadamard(&y.map(|s| s * (1.0 - s)))?;
                    accumulate(&mut adj, *a, da)?;
                }
                Op::LogSigmoid(a) => {
                    // d/dx log σ(x) = σ(-x)
                    let da = g.hadamard(&self.value(*a).map(|x| logistic(-x)))?;
                    accumulate(&mut adj, *a, da)?;
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(Var(idx));
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for row in 0..y.rows() {
                        let (yr, gr) = (y.row(row), g.row(row));
                        let inner: f64 = yr.iter().zip(gr).map(|(s, d)| s * d).sum();
                        for (k, out) in da.row_mut(row).iter_mut().enumerate() {
                            *out = yr[k] * (gr[k] - inner);
                        }
                    }
                    accumulate(&mut adj, *a, da)?;
                }
                Op::RowSum(a) | Op::RowMean(a) => {
                    let (ar, ac) = self.shape(*a);
                    let f = if matches!(node.op, Op::RowMean(_)) {
                        1.0 / ac.max(1) as f64
                    } else {
                        1.0
                    };
                    let mut da = Matrix::zeros(ar, ac);
                    for row in 0..ar {
                        let v = g.get(row, 0) * f;
                        da.row_mut(row).iter_mut().for_each(|x| *x = v);
                    }
                    accumulate(&mut adj, *a, da)?;
                }
                Op::Sum(a) => {
                    let (ar, ac) = self.shape(*a);
                    accumulate(&mut adj, *a, Matrix::filled(ar, ac, g.get(0, 0)))?;
                }
                Op::SumSquares(a) => {
                    let da = self.value(*a).scale(2.0 * g.get(0, 0));
                    accumulate(&mut adj, *a, da)?;
                }
                Op::GatherRows(a, indices) => {
                    let (ar, ac) = self.shape(*a);
                    let mut da = Matrix::zeros(ar, ac);
                    for (src, &dst) in indices.iter().enumerate() {
                        for (o, v) in da.row_mut(dst).iter_mut().zip(g.row(src)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut adj, *a, da)?;
                }
                Op::GatherCols(a, indices) => {
                    let (ar, ac) = self.shape(*a);
                    let mut da = Matrix::zeros(ar, ac);
                    for row in 0..ar {
                        for (src, &dst) in indices.iter().enumerate() {
                            let v = da.get(row, dst) + g.get(row, src);
                            da.set(row, dst, v);
                        }
                    }
                    accumulate(&mut adj, *a, da)?;
                }
                Op::Segment {
                    input,
                    offsets,
                    mean,
                } => {
                    let (ar, ac) = self.shape(*input);
                    let mut da = Matrix::zeros(ar, ac);
                    for grp in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[grp], offsets[grp + 1]);
                        let f = if *mean && hi > lo {
                            1.0 / (hi - lo) as f64
                        } else {
                            1.0
                        };
                        for row in lo..hi {
                            for (o, v) in da.row_mut(row).iter_mut().zip(g.row(grp)) {
                                *o = v * f;
                            }
                        }
                    }
                    accumulate(&mut adj, *input, da)?;
                }
                Op::ScaleRows(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let mut dx = g.clone();
                    let mut dw = Matrix::zeros(wv.rows(), 1);
                    for row in 0..xv.rows() {
                        let wr = wv.get(row, 0);
                        dx.row_mut(row).iter_mut().for_each(|v| *v *= wr);
                        let s: f64 = g.row(row).iter().zip(xv.row(row)).map(|(a, b)| a * b).sum();
                        dw.set(row, 0, s);
                    }
                    accumulate(&mut adj, *x, dx)?;
                    accumulate(&mut adj, *w, dw)?;
                }
                Op::Mask(a, mask) => accumulate(&mut adj, *a, g.hadamard(mask)?)?,
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, delta: Matrix) -> Result<()> {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&delta),
        slot @ None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

/// Logistic function `1 / (1 + e^{-x})`, evaluated without overflow.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x) = -softplus(-x)`, stable for large `|x|`.
pub fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}
