//! Small building blocks shared by the encoders and the denoiser.
//!
//! Variable-length sequences are processed as one stacked `ΣT × C` matrix
//! described by a [`SeqLayout`]; temporal convolutions become a row gather
//! (with per-sequence reflect padding) followed by a dense layer.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::Checkpoint;
use crate::error::{Error, Result};

/// Named parameter traversal in a fixed order.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.push(t.shape().to_vec()));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    /// Binds every parameter onto `g`, tracked or as constants.
    fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        let mut vars = Vec::new();
        self.visit("", &mut |_, t| {
            let t = t.clone();
            vars.push(if trainable { g.param(t) } else { g.constant(t) });
        });
        vars
    }

    fn save_into(&self, prefix: &str, ckpt: &mut Checkpoint) {
        self.visit(prefix, &mut |name, t| ckpt.push(name, t.clone()));
    }

    fn load_from(&mut self, prefix: &str, ckpt: &Checkpoint) -> Result<()> {
        let mut err = None;
        self.visit_mut(prefix, &mut |name, t| {
            if err.is_some() {
                return;
            }
            match ckpt.get(&name) {
                Some(src) if src.shape() == t.shape() => *t = src.clone(),
                Some(src) => {
                    err = Some(Error::Format(format!(
                        "`{name}` has shape {:?}, expected {:?}",
                        src.shape(),
                        t.shape()
                    )))
                }
                None => err = Some(Error::Format(format!("checkpoint has no entry `{name}`"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Flattens all parameters into one vector.
    fn flatten(&self) -> Tensor {
        let mut data = Vec::new();
        self.visit("", &mut |_, t| data.extend_from_slice(t.data()));
        Tensor::vector(data)
    }

    fn unflatten(&mut self, flat: &[f64]) {
        let mut pos = 0;
        self.visit_mut("", &mut |_, t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        });
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() { name.to_string() } else { format!("{prefix}.{name}") }
}

/// Sequential reader over bound parameter vars.
pub struct ParamCursor<'a> {
    vars: &'a [Var],
    pos: usize,
}

impl<'a> ParamCursor<'a> {
    pub fn new(vars: &'a [Var]) -> Self {
        Self { vars, pos: 0 }
    }

    pub fn next_var(&mut self) -> Var {
        let v = self.vars[self.pos];
        self.pos += 1;
        v
    }

    pub fn remaining(&self) -> usize {
        self.vars.len() - self.pos
    }
}

/// Fully connected layer `x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn init(rng: &mut impl Rng, inputs: usize, outputs: usize) -> Self {
        let bound = (3.0 / inputs as f64).sqrt();
        let dist = Uniform::new(-bound, bound).expect("valid bounds");
        let data = (0..inputs * outputs).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Tensor::matrix(inputs, outputs, data).expect("shape"),
            bias: Tensor::zeros(&[1, outputs]),
        }
    }

    /// Multiplies the initial weights by `s`.
    pub fn scaled(mut self, s: f64) -> Self {
        self.weight.data_mut().iter_mut().for_each(|w| *w *= s);
        self
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Tensor::zeros(&[inputs, outputs]), bias: Tensor::zeros(&[1, outputs]) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph, p: &mut ParamCursor, x: Var) -> Result<Var> {
        let (w, b) = (p.next_var(), p.next_var());
        let h = g.matmul(x, w)?;
        g.add_row(h, b)
    }
}

impl Parameterized for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Reflect an index into `0..n` (`-1 → 1`, `n → n-2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize { m as usize } else { (period - m) as usize }
}

/// Row layout of several sequences stacked into one matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqLayout {
    offsets: Vec<usize>,
}

impl SeqLayout {
    pub fn new(lengths: &[usize]) -> Result<Self> {
        if lengths.contains(&0) {
            return Err(Error::invalid("sequences need at least one frame"));
        }
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        for &l in lengths {
            offsets.push(offsets.last().unwrap() + l);
        }
        Ok(Self { offsets })
    }

    pub fn uniform(count: usize, length: usize) -> Result<Self> {
        Self::new(&vec![length; count])
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn length(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }

    /// Gather index for a centered window of `kernel` frames (odd), reflect padded.
    pub fn unfold_index(&self, kernel: usize) -> Vec<usize> {
        self.unfold_index_dilated(kernel, 1)
    }

    /// As [`Self::unfold_index`] with taps `dilation` frames apart.
    pub fn unfold_index_dilated(&self, kernel: usize, dilation: usize) -> Vec<usize> {
        let r = (kernel / 2) as isize;
        let d = dilation as isize;
        let mut idx = Vec::with_capacity(self.total() * kernel);
        for s in 0..self.count() {
            let (lo, n) = (self.offsets[s], self.length(s));
            for t in 0..n as isize {
                for o in -r..=r {
                    idx.push(lo + reflect_index(t + o * d, n));
                }
            }
        }
        idx
    }

    /// Gather index repeating row `s` of a per-sequence matrix over its frames.
    pub fn broadcast_index(&self) -> Vec<usize> {
        (0..self.count()).flat_map(|s| std::iter::repeat_n(s, self.length(s))).collect()
    }
}

/// Temporal 1-D convolution over stacked sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConv {
    pub kernel: usize,
    pub dilation: usize,
    pub dense: Dense,
}

impl TemporalConv {
    pub fn init(rng: &mut impl Rng, channels: usize, outputs: usize, kernel: usize) -> Self {
        Self::init_dilated(rng, channels, outputs, kernel, 1)
    }

    pub fn init_dilated(rng: &mut impl Rng, channels: usize, outputs: usize, kernel: usize, dilation: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        assert!(dilation >= 1, "dilation must be positive");
        Self { kernel, dilation, dense: Dense::init(rng, channels * kernel, outputs) }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &mut ParamCursor,
        x: Var,
        layout: &SeqLayout,
    ) -> Result<Var> {
        let cols = g.gather_rows(x, layout.unfold_index_dilated(self.kernel, self.dilation), self.kernel)?;
        self.dense.forward(g, p, cols)
    }
}

impl Parameterized for TemporalConv {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.dense.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.dense.visit_mut(prefix, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_padding() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(0, 1), 0);
        assert_eq!(reflect_index(-3, 2), 1);
        for i in -20..20 {
            assert!(reflect_index(i, 3) < 3);
        }
    }

    #[test]
    fn unfold_respects_sequence_boundaries() {
        let layout = SeqLayout::new(&[3, 2]).unwrap();
        let idx = layout.unfold_index(3);
        assert_eq!(idx, vec![1, 0, 1, 0, 1, 2, 1, 2, 1, 4, 3, 4, 3, 4, 3]);
        assert_eq!(layout.broadcast_index(), vec![0, 0, 0, 1, 1]);
        let wide = SeqLayout::new(&[4]).unwrap().unfold_index_dilated(3, 2);
        assert_eq!(wide, vec![2, 0, 2, 1, 1, 3, 0, 2, 2, 1, 3, 1]);
    }

    #[test]
    fn dense_forward_matches_matmul() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = Dense::init(&mut rng, 3, 2);
        let x = Tensor::matrix(2, 3, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap();
        let mut g = Graph::new();
        let vars = d.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = d.forward(&mut g, &mut ParamCursor::new(&vars), xv).unwrap();
        assert_eq!(g.value(y), &x.matmul(&d.weight).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_by_name() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let d = Dense::init(&mut rng, 4, 3);
        let mut ck = Checkpoint::new();
        d.save_into("layer", &mut ck);
        let mut e = Dense::zeros(4, 3);
        e.load_from("layer", &ck).unwrap();
        assert_eq!(d, e);
        let mut wrong = Dense::zeros(3, 3);
        assert!(wrong.load_from("layer", &ck).is_err());
    }

    use rand::SeedableRng;
}
