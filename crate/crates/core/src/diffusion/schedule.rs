use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Discrete DDPM noise schedule with steps `1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// β linear from `beta_start` to `beta_end` over `steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid("noise schedule needs at least two steps"));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!("need 0 < β_start < β_end < 1, got {beta_start}, {beta_end}")));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alphas, alpha_bars })
    }

    /// Linear 1e-4 → 0.02 with both endpoints scaled by `1000 / steps`, so
    /// short schedules still end near pure noise. β_end is capped at 0.999.
    pub fn scaled_linear(steps: usize) -> Result<Self> {
        let s = 1000.0 / steps as f64;
        Self::linear(steps, 1e-4 * s, (0.02 * s).min(0.999))
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.check(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.check(t)?])
    }

    /// `ᾱ_{t−1}`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> Result<f64> {
        let i = self.check(t)?;
        Ok(if i == 0 { 1.0 } else { self.alpha_bars[i - 1] })
    }

    /// Posterior variance `β_t·(1−ᾱ_{t−1})/(1−ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        Ok(self.beta(t)? * (1.0 - self.alpha_bar_prev(t)?) / (1.0 - self.alpha_bar(t)?))
    }
}

/// `x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε`.
pub fn forward_diffuse(schedule: &NoiseSchedule, x0: &Tensor, t: usize, noise: &Tensor) -> Result<Tensor> {
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(noise, |x, e| a * x + b * e)
}
