use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::encoder::ItmHead;
use crate::error::{Error, Result};
use crate::numcore::layers::ParamCursor;
use crate::numcore::{Graph, Tensor, Var};

/// Row-stochastic similarity distributions over a shared candidate set.
///
/// `a2m` row `i` is the softmax, for motion `i`, over candidate audios;
/// `m2a` row `i` is the softmax, for audio `i`, over candidate motions.
/// Candidates are the batch followed by the queue, so the positive of row
/// `i` is column `i`.
#[derive(Debug, Clone, Copy)]
pub struct DualSoftmax {
    pub a2m: Var,
    pub m2a: Var,
    pub candidates: usize,
}

pub fn dual_softmax(
    g: &mut Graph,
    a: Var,
    m: Var,
    queue_a: Option<Var>,
    queue_m: Option<Var>,
    tau: f64,
) -> Result<DualSoftmax> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let cand_a = match queue_a {
        Some(q) => g.concat_rows(&[a, q])?,
        None => a,
    };
    let cand_m = match queue_m {
        Some(q) => g.concat_rows(&[m, q])?,
        None => m,
    };
    let (ca, cm) = (g.value(cand_a).rows(), g.value(cand_m).rows());
    if ca != cm {
        return Err(Error::shape(format!("{ca} audio vs {cm} motion candidates")));
    }
    let s_a2m = g.matmul_nt(m, cand_a)?;
    let s_a2m = g.scale(s_a2m, 1.0 / tau)?;
    let a2m = g.softmax_rows(s_a2m)?;
    let s_m2a = g.matmul_nt(a, cand_m)?;
    let s_m2a = g.scale(s_m2a, 1.0 / tau)?;
    let m2a = g.softmax_rows(s_m2a)?;
    Ok(DualSoftmax { a2m, m2a, candidates: ca })
}

/// `[B × C]` targets with the positive in column `i` of row `i`.
pub fn one_hot_targets(batch: usize, candidates: usize) -> Tensor {
    let mut t = Tensor::zeros(&[batch, candidates]);
    for i in 0..batch.min(candidates) {
        t.data_mut()[i * candidates + i] = 1.0;
    }
    t
}

/// `½·(H(y_a2m, ρ_a2m) + H(y_m2a, ρ_m2a))`, each averaged over rows.
pub fn contrastive_loss(g: &mut Graph, rho: &DualSoftmax, y_a2m: Var, y_m2a: Var) -> Result<Var> {
    let h1 = g.cross_entropy(rho.a2m, y_a2m)?;
    let h2 = g.cross_entropy(rho.m2a, y_m2a)?;
    let s = g.add(h1, h2)?;
    g.scale(s, 0.5)
}

/// Teacher distributions must share the student's candidate set.
pub fn distillation_loss(g: &mut Graph, student: &DualSoftmax, teacher_a2m: &Tensor, teacher_m2a: &Tensor) -> Result<Var> {
    for (t, s) in [(teacher_a2m, student.a2m), (teacher_m2a, student.m2a)] {
        if t.shape() != g.value(s).shape() {
            return Err(Error::shape(format!(
                "teacher {:?} vs student {:?} candidates",
                t.shape(),
                g.value(s).shape()
            )));
        }
    }
    let ta = g.constant(teacher_a2m.clone());
    let tm = g.constant(teacher_m2a.clone());
    let k1 = g.kl_div(ta, student.a2m)?;
    let k2 = g.kl_div(tm, student.m2a)?;
    g.add(k1, k2)
}

/// Row gathers and labels for the `3B` match pairs: positives, then
/// (audio, hard-negative motion), then (hard-negative audio, motion).
pub fn itm_pairs(neg_motion: &[usize], neg_audio: &[usize]) -> Result<(Vec<usize>, Vec<usize>, Vec<f64>)> {
    let b = neg_motion.len();
    if neg_audio.len() != b {
        return Err(Error::shape("negative lists differ in length"));
    }
    let batch: Vec<usize> = (0..b).collect();
    let a_idx = [&batch[..], &batch[..], neg_audio].concat();
    let m_idx = [&batch[..], neg_motion, &batch[..]].concat();
    let labels = (0..3 * b).map(|k| if k < b { 1.0 } else { 0.0 }).collect();
    Ok((a_idx, m_idx, labels))
}

/// Mean binary cross-entropy of the match head over the `3B` pairs.
pub fn itm_loss(
    g: &mut Graph,
    head: &ItmHead,
    p: &mut ParamCursor,
    a: Var,
    m: Var,
    neg_motion: &[usize],
    neg_audio: &[usize],
) -> Result<Var> {
    let (a_idx, m_idx, labels) = itm_pairs(neg_motion, neg_audio)?;
    let n = labels.len();
    let pa = g.gather_rows(a, a_idx, 1)?;
    let pm = g.gather_rows(m, m_idx, 1)?;
    let prob = head.forward(g, p, pa, pm)?;
    let y = g.constant(Tensor::matrix(n, 1, labels)?);
    g.binary_cross_entropy(prob, y)
}

/// `α·ζ_ITM + (1−α)·ζ_m`.
pub fn combine_losses(alpha: f64, zeta_itm: f64, zeta_m: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * zeta_itm + (1.0 - alpha) * zeta_m)
}

pub fn total_loss(g: &mut Graph, zeta_itm: Var, zeta_m: Var, alpha: f64) -> Result<Var> {
    check_alpha(alpha)?;
    let a = g.scale(zeta_itm, alpha)?;
    let b = g.scale(zeta_m, 1.0 - alpha)?;
    g.add(a, b)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid(format!("α must lie in [0, 1], got {alpha}")))
    }
}

/// For `logits[i][j]` (audio `i`, motion `j`), draws one non-positive motion
/// per audio from row `i` and one non-positive audio per motion from column
/// `j`, each with probability proportional to `exp(logit)`.
pub fn sample_hard_negatives(logits: &Tensor, rng: &mut impl Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let b = logits.rows();
    if logits.rank() != 2 || logits.cols() != b {
        return Err(Error::shape(format!("hard negatives need a square matrix, got {:?}", logits.shape())));
    }
    if b < 2 {
        return Err(Error::invalid("hard negatives need a batch of at least 2"));
    }
    let draw = |rng: &mut dyn rand::RngCore, anchor: usize, score: &dyn Fn(usize) -> f64| -> Result<usize> {
        let others: Vec<usize> = (0..b).filter(|&j| j != anchor).collect();
        let max = others.iter().map(|&j| score(j)).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = others.iter().map(|&j| (score(j) - max).exp()).collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::NonFinite(format!("hard-negative weights: {e}")))?;
        Ok(others[dist.sample(rng)])
    };
    let mut neg_motion = Vec::with_capacity(b);
    for i in 0..b {
        neg_motion.push(draw(rng, i, &|j| logits.at(i, j))?);
    }
    let mut neg_audio = Vec::with_capacity(b);
    for j in 0..b {
        neg_audio.push(draw(rng, j, &|i| logits.at(i, j))?);
    }
    Ok((neg_motion, neg_audio))
}
