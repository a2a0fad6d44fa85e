//! Value-level numerics shared by the graph and by evaluation code.

use super::graph::LOG_FLOOR;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Softmax along `axis`, computed with max-subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::invalid(format!("axis {axis} out of range for {shape:?}")));
    }
    let len = shape[axis];
    if len == 0 {
        return Err(Error::invalid("softmax over an empty axis"));
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone().with_grad(false);
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let max = (0..len).map(|k| data[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..len {
                let e = (data[at(k)] - max).exp();
                data[at(k)] = e;
                total += e;
            }
            for k in 0..len {
                data[at(k)] /= total;
            }
        }
    }
    Ok(out)
}

/// Softmax over the last axis.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    softmax(x, x.rank().max(1) - 1)
}

fn check_distribution_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `−Σ target·log(probs)` averaged over rows (last axis is the distribution).
///
/// Probabilities are floored at [`LOG_FLOOR`]; a target with mass on a cell
/// whose probability is exactly zero is rejected.
pub fn cross_entropy(probs: &Tensor, target: &Tensor) -> Result<f64> {
    check_distribution_pair(probs, target)?;
    let mut total = 0.0;
    for (&p, &t) in probs.data().iter().zip(target.data()) {
        if t > 0.0 && p <= 0.0 {
            return Err(Error::invalid("zero probability at a supported target index"));
        }
        if t != 0.0 {
            total -= t * p.max(LOG_FLOOR).ln();
        }
    }
    Ok(total / probs.rows() as f64)
}

/// `Σ target·(log target − log probs)` averaged over rows.
pub fn kl_div(target: &Tensor, probs: &Tensor) -> Result<f64> {
    check_distribution_pair(target, probs)?;
    for t in [target, probs] {
        for r in 0..t.rows() {
            let s: f64 = t.row(r).iter().sum();
            if (s - 1.0).abs() > 1e-6 || t.row(r).iter().any(|&v| v < 0.0) {
                return Err(Error::invalid(format!("row {r} is not a distribution (sum {s})")));
            }
        }
    }
    let mut total = 0.0;
    for (&t, &p) in target.data().iter().zip(probs.data()) {
        if t > 0.0 {
            total += t * (t.ln() - p.max(LOG_FLOOR).ln());
        }
    }
    Ok(total / target.rows() as f64)
}

/// Channelwise maximum over time of a `T × D` sequence, with the frame
/// index attaining it. Ties resolve to the lowest frame.
pub fn max_pool_time(seq: &Tensor) -> Result<(Vec<f64>, Vec<usize>)> {
    if seq.rank() != 2 || seq.rows() == 0 {
        return Err(Error::shape(format!("max_pool_time needs T≥1 × D, got {:?}", seq.shape())));
    }
    let d = seq.cols();
    let mut values = seq.row(0).to_vec();
    let mut index = vec![0; d];
    for t in 1..seq.rows() {
        for (c, &v) in seq.row(t).iter().enumerate() {
            if v > values[c] {
                values[c] = v;
                index[c] = t;
            }
        }
    }
    Ok((values, index))
}
