use serde::{Deserialize, Serialize};

use super::{Clip, Corpus};
use crate::error::{Error, Result};
use crate::rng::splitmix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.85, val: 0.075, test: 0.075 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::invalid("split ratios must be finite and non-negative"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split ratios must sum to 1"));
        }
        Ok(())
    }

    fn nonzero(&self) -> usize {
        [self.train, self.val, self.test].iter().filter(|r| **r > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Clip>,
    pub val: Vec<Clip>,
    pub test: Vec<Clip>,
}

impl Split {
    pub fn ids(clips: &[Clip]) -> Vec<u64> {
        clips.iter().map(|c| c.id).collect()
    }
}

/// Orders clips by a hash of their id, then takes `floor(r·n)` clips for
/// validation and test; the remainder goes to training.
pub fn split_corpus(corpus: &Corpus, ratios: &SplitRatios) -> Result<Split> {
    ratios.validate()?;
    let n = corpus.clips.len();
    if n < ratios.nonzero() {
        return Err(Error::invalid(format!("{n} clips cannot fill {} splits", ratios.nonzero())));
    }
    let mut order: Vec<&Clip> = corpus.clips.iter().collect();
    order.sort_by_key(|c| (splitmix64(c.id), c.id));
    let n_val = (ratios.val * n as f64 + 1e-9).floor() as usize;
    let n_test = (ratios.test * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    let by_id = |range: std::ops::Range<usize>| {
        let mut v: Vec<Clip> = order[range].iter().map(|c| (*c).clone()).collect();
        v.sort_by_key(|c| c.id);
        v
    };
    Ok(Split {
        train: by_id(0..n_train),
        val: by_id(n_train..n_train + n_val),
        test: by_id(n_train + n_val..n),
    })
}
