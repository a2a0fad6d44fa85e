use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::retrieval::RetrievalModel;

/// Diagonal loading applied to fitted covariances.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

/// Gaussian fit of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistribution {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FeatureDistribution {
    /// Sample mean and unbiased covariance of the rows of `features`, plus
    /// [`COVARIANCE_RIDGE`] on the diagonal.
    pub fn fit(features: &Tensor) -> Result<Self> {
        let (n, d) = (features.rows(), features.cols());
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 feature rows, got {n}")));
        }
        let x = DMatrix::from_row_slice(n, d, features.data());
        let mean = x.row_mean().transpose();
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
        cov = (&cov + cov.transpose()) * 0.5;
        for i in 0..d {
            cov[(i, i)] += COVARIANCE_RIDGE;
        }
        Ok(Self { mean, cov, count: n })
    }

    /// Exact moments, e.g. for closed-form checks.
    pub fn from_moments(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::shape(format!("mean {d} vs covariance {:?}", cov.shape())));
        }
        if (&cov - cov.transpose()).amax() > 1e-12 {
            return Err(Error::invalid("covariance must be symmetric"));
        }
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min_eig < -1e-8 {
            return Err(Error::invalid(format!("covariance has eigenvalue {min_eig}")));
        }
        Ok(Self { mean: DVector::from_vec(mean), cov, count: 0 })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁+Σ₂−2(Σ₁Σ₂)^{1/2})`, with the trace of the root taken
/// from the symmetric form `Σ₁^{1/2} Σ₂ Σ₁^{1/2}`.
pub fn frechet_distance(a: &FeatureDistribution, b: &FeatureDistribution) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("feature dims {} and {}", a.dim(), b.dim())));
    }
    let dm = (&a.mean - &b.mean).norm_squared();
    let ra = psd_sqrt(&a.cov);
    let inner = &ra * &b.cov * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok(dm + a.cov.trace() + b.cov.trace() - 2.0 * cross)
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn fgd(generated: &Tensor, reference: &Tensor) -> Result<f64> {
    if generated.cols() != reference.cols() {
        return Err(Error::shape(format!("feature dims {} and {}", generated.cols(), reference.cols())));
    }
    frechet_distance(&FeatureDistribution::fit(generated)?, &FeatureDistribution::fit(reference)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Per-channel mean, std and mean absolute velocity.
    RawStats,
    /// Pooled retrieval motion embeddings.
    Encoder,
}

#[derive(Debug, Clone, Copy)]
pub enum FeatureExtractor<'a> {
    RawStats,
    Encoder(&'a RetrievalModel),
}

/// One feature row per motion.
pub fn extract_features(motions: &[&Tensor], extractor: FeatureExtractor) -> Result<Tensor> {
    let first = motions.first().ok_or_else(|| Error::invalid("no motions to featurize"))?;
    match extractor {
        FeatureExtractor::RawStats => {
            let c = first.cols();
            let mut data = Vec::with_capacity(motions.len() * 3 * c);
            for m in motions {
                if m.cols() != c || m.rows() == 0 {
                    return Err(Error::shape(format!("motion {:?} vs {c} channels", m.shape())));
                }
                data.extend(raw_stats(m));
            }
            Tensor::matrix(motions.len(), 3 * c, data)
        }
        FeatureExtractor::Encoder(model) => model.motion_global(motions),
    }
}

fn raw_stats(m: &Tensor) -> Vec<f64> {
    let (n, c) = (m.rows(), m.cols());
    let mut mean = vec![0.0; c];
    for t in 0..n {
        for (k, v) in m.row(t).iter().enumerate() {
            mean[k] += v / n as f64;
        }
    }
    let mut var = vec![0.0; c];
    let mut vel = vec![0.0; c];
    for t in 0..n {
        for k in 0..c {
            var[k] += (m.at(t, k) - mean[k]).powi(2) / n as f64;
            if t > 0 {
                vel[k] += (m.at(t, k) - m.at(t - 1, k)).abs() / (n - 1) as f64;
            }
        }
    }
    mean.into_iter().chain(var.into_iter().map(f64::sqrt)).chain(vel).collect()
}
