//! Tape-based reverse-mode automatic differentiation over rank-2 tensors.
//!
//! Every operation appends a node holding its forward value. Because nodes
//! can only reference earlier nodes, insertion order is a topological order
//! and the backward sweep simply walks the tape from the loss to the front.
//!
//! All operations treat tensors as `rows × cols` matrices (the last axis is
//! the column axis). Forward values are checked for NaN/Inf as they are
//! produced, so a non-finite intermediate surfaces as an error at the op
//! that created it.

use super::tensor::{gemm, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Silu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    SoftmaxRows(Var),
    L2NormalizeRows(Var),
    Gather { src: Var, index: Vec<usize>, groups: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SegmentMax { src: Var, argmax: Vec<usize> },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `like`'s shape when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Number of nodes processed by the backward sweep.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

fn check_same(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    /// Leaf honoring the tensor's own `requires_grad` flag.
    pub fn input(&mut self, t: Tensor) -> Var {
        let flag = t.requires_grad();
        self.leaf(t, flag)
    }

    fn leaf(&mut self, t: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng, "matmul")
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols() {
            return Err(Error::shape(format!("matmul_nt {:?} x {:?}ᵀ", av.shape(), bv.shape())));
        }
        let (m, n, k) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![0.0; m * k];
        gemm_nt(av.data(), bv.data(), &mut out, m, k, n);
        let value = Tensor::matrix(m, k, out)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulNT(a, b), ng, "matmul_nt")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng, "mul")
    }

    /// Adds a `1 × cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.len() != av.cols() {
            return Err(Error::shape(format!("add_row {:?} + {:?}", av.shape(), rv.shape())));
        }
        let mut value = av.clone();
        let c = av.cols();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += rv.data()[i % c];
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(value.with_grad(false), Op::AddRow(a, row), ng, "add_row")
    }

    /// `scale · a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let value = self.value(a).map(|x| scale * x + shift);
        let ng = self.ng(a);
        self.push(value, Op::Affine(a, scale), ng, "affine")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.affine(a, s, 0.0)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.ng(a);
        self.push(value, Op::Silu(a), ng, "silu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng, "tanh")
    }

    /// Natural log with inputs floored at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(LOG_FLOOR).ln());
        let ng = self.ng(a);
        self.push(value, Op::Log(a), ng, "log")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = super::ops::softmax_rows(self.value(a))?;
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng, "softmax")
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mut value = av.clone().with_grad(false);
        for r in 0..av.rows() {
            let row = value.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::invalid("cannot normalize a zero vector"));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let ng = self.ng(a);
        self.push(value, Op::L2NormalizeRows(a), ng, "l2_normalize")
    }

    /// Builds rows from groups of source rows: output row `r` is the
    /// concatenation of `src[index[r*groups + s]]` for `s in 0..groups`.
    pub fn gather_rows(&mut self, src: Var, index: Vec<usize>, groups: usize) -> Result<Var> {
        let sv = self.value(src);
        if groups == 0 || !index.len().is_multiple_of(groups) {
            return Err(Error::shape("gather index length must be a multiple of groups"));
        }
        let c = sv.cols();
        let rows = index.len() / groups;
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in &index {
            if i >= sv.rows() {
                return Err(Error::shape(format!("gather index {i} out of {} rows", sv.rows())));
            }
            data.extend_from_slice(sv.row(i));
        }
        let value = Tensor::matrix(rows, groups * c, data)?;
        let ng = self.ng(src);
        self.push(value, Op::Gather { src, index, groups }, ng, "gather")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat_cols row mismatch"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::shape("concat_rows column mismatch"));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
            rows += self.value(p).rows();
        }
        let value = Tensor::matrix(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng, "concat_rows")
    }

    /// Channelwise max over each row segment `offsets[b]..offsets[b+1]`.
    /// Ties resolve to the lowest row. Returns the pooled `B × C` matrix and
    /// the winning row (relative to its segment) per cell.
    pub fn segment_max(&mut self, src: Var, offsets: &[usize]) -> Result<(Var, Vec<usize>)> {
        let sv = self.value(src);
        let c = sv.cols();
        let b = offsets.len().saturating_sub(1);
        let mut data = vec![0.0; b * c];
        let mut argmax = vec![0usize; b * c];
        for s in 0..b {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if hi <= lo || hi > sv.rows() {
                return Err(Error::shape(format!("bad segment {lo}..{hi}")));
            }
            for ch in 0..c {
                let mut best = lo;
                for r in lo + 1..hi {
                    if sv.at(r, ch) > sv.at(best, ch) {
                        best = r;
                    }
                }
                data[s * c + ch] = sv.at(best, ch);
                argmax[s * c + ch] = best;
            }
        }
        let local = argmax
            .iter()
            .enumerate()
            .map(|(i, &r)| r - offsets[i / c])
            .collect();
        let value = Tensor::matrix(b, c, data)?;
        let ng = self.ng(src);
        let v = self.push(value, Op::SegmentMax { src, argmax }, ng, "segment_max")?;
        Ok((v, local))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// `−Σ target·log(probs)` averaged over rows.
    pub fn cross_entropy(&mut self, probs: Var, target: Var) -> Result<Var> {
        let rows = self.value(probs).rows().max(1) as f64;
        let lp = self.log(probs)?;
        let prod = self.mul(target, lp)?;
        let s = self.sum(prod)?;
        self.scale(s, -1.0 / rows)
    }

    /// `Σ target·(log target − log probs)` averaged over rows.
    pub fn kl_div(&mut self, target: Var, probs: Var) -> Result<Var> {
        let rows = self.value(probs).rows().max(1) as f64;
        let lt = self.log(target)?;
        let lp = self.log(probs)?;
        let diff = self.sub(lt, lp)?;
        let prod = self.mul(target, diff)?;
        let s = self.sum(prod)?;
        self.scale(s, 1.0 / rows)
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels.
    pub fn binary_cross_entropy(&mut self, probs: Var, labels: Var) -> Result<Var> {
        let n = self.value(probs).len().max(1) as f64;
        let lp = self.log(probs)?;
        let one_minus_p = self.affine(probs, -1.0, 1.0)?;
        let lq = self.log(one_minus_p)?;
        let one_minus_y = self.affine(labels, -1.0, 1.0)?;
        let pos = self.mul(labels, lp)?;
        let neg = self.mul(one_minus_y, lq)?;
        let tot = self.add(pos, neg)?;
        let s = self.sum(tot)?;
        self.scale(s, -1.0 / n)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut visited = 0;

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            visited += 1;
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of node {idx}")));
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                    *a += d;
                }
            }
            slot @ None => {
                let shape = self.value(v).shape().to_vec();
                *slot = Some(delta.reshape(shape).expect("gradient shape"));
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g.data(), bv.data(), &mut da, m, k, n);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da)?);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(av.data(), g.data(), &mut db, m, k, n);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db)?);
                }
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, n, k) = (av.rows(), av.cols(), bv.rows());
                if self.ng(*a) {
                    let mut da = vec![0.0; m * n];
                    gemm(g.data(), bv.data(), &mut da, m, k, n);
                    self.accumulate(grads, *a, Tensor::matrix(m, n, da)?);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(g.data(), av.data(), &mut db, m, k, n);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.ng(*row) {
                    let c = g.cols();
                    let mut d = vec![0.0; c];
                    for r in 0..g.rows() {
                        for (acc, v) in d.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::vector(d));
                }
            }
            Op::Affine(a, s) => self.accumulate(grads, *a, g.map(|v| v * s)),
            Op::Silu(a) => {
                let d = g.zip_map(self.value(*a), |gv, x| {
                    let s = sigmoid(x);
                    gv * (s + x * s * (1.0 - s))
                })?;
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(y, |gv, s| gv * s * (1.0 - s))?);
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, g.zip_map(y, |gv, t| gv * (1.0 - t * t))?);
            }
            Op::Log(a) => {
                let d = g.zip_map(self.value(*a), |gv, x| if x > LOG_FLOOR { gv / x } else { 0.0 })?;
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let mut d = g.clone().with_grad(false);
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let dot: f64 = g.row(r).iter().zip(yr).map(|(gv, yv)| gv * yv).sum();
                    for (dv, yv) in d.row_mut(r).iter_mut().zip(yr) {
                        *dv = yv * (*dv - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::L2NormalizeRows(a) => {
                let x = self.value(*a);
                let mut d = g.clone().with_grad(false);
                for r in 0..y.rows() {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let yr = y.row(r);
                    let dot: f64 = g.row(r).iter().zip(yr).map(|(gv, yv)| gv * yv).sum();
                    for (dv, yv) in d.row_mut(r).iter_mut().zip(yr) {
                        *dv = (*dv - yv * dot) / norm;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Gather { src, index, groups } => {
                if self.ng(*src) {
                    let sv = self.value(*src);
                    let c = sv.cols();
                    let mut d = Tensor::zeros(sv.shape());
                    let gd = g.data();
                    for (slot, &i) in index.iter().enumerate() {
                        let (r, s) = (slot / groups, slot % groups);
                        let base = r * groups * c + s * c;
                        for (acc, v) in d.row_mut(i).iter_mut().zip(&gd[base..base + c]) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *src, d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(g.rows() * pc);
                        for r in 0..g.rows() {
                            d.extend_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(g.rows(), pc, d)?);
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pr = self.value(p).rows();
                    if self.ng(p) {
                        self.accumulate(grads, p, g.slice_rows(offset, offset + pr));
                    }
                    offset += pr;
                }
            }
            Op::SegmentMax { src, argmax } => {
                if self.ng(*src) {
                    let sv = self.value(*src);
                    let c = sv.cols();
                    let mut d = Tensor::zeros(sv.shape());
                    for (cell, &r) in argmax.iter().enumerate() {
                        d.data_mut()[r * c + cell % c] += g.data()[cell];
                    }
                    self.accumulate(grads, *src, d);
                }
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.accumulate(grads, *a, Tensor::filled(self.value(*a).shape(), gv));
            }
        }
        Ok(())
    }
}
