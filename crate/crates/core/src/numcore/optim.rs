use serde::{Deserialize, Serialize};

use super::layers::Parameterized;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the joint gradient when its L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None }
    }
}

/// Adam moment accumulators for an ordered parameter list.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Result<Self> {
        let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
        Self::for_shapes(config, &shapes)
    }

    pub fn for_module(config: AdamConfig, module: &dyn Parameterized) -> Result<Self> {
        Self::for_shapes(config, &module.shapes())
    }

    pub fn for_shapes(config: AdamConfig, shapes: &[Vec<usize>]) -> Result<Self> {
        if config.learning_rate <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        let first = shapes.iter().map(|s| Tensor::zeros(s)).collect::<Vec<_>>();
        Ok(Self { config, second: first.clone(), first, step: 0 })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    /// Validates gradients and advances the step counter; returns the clip scale.
    fn begin_step(&mut self, grads: &[Tensor]) -> Result<f64> {
        if grads.len() != self.first.len() {
            return Err(Error::shape("parameter / gradient count mismatch"));
        }
        for (i, (m, g)) in self.first.iter().zip(grads).enumerate() {
            if m.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "param {i}: {:?} vs grad {:?}",
                    m.shape(),
                    g.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        let scale = match self.config.clip_norm {
            Some(max) => {
                let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
                if norm > max { max / norm } else { 1.0 }
            }
            None => 1.0,
        };
        self.step += 1;
        Ok(scale)
    }

    fn update(&mut self, i: usize, param: &mut Tensor, grad: &Tensor, scale: f64) {
        let AdamConfig { learning_rate, beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let (m, v) = (&mut self.first[i], &mut self.second[i]);
        for (((w, &gr), mv), vv) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            let gr = gr * scale;
            *mv = beta1 * *mv + (1.0 - beta1) * gr;
            *vv = beta2 * *vv + (1.0 - beta2) * gr * gr;
            *w -= learning_rate * (*mv / bc1) / ((*vv / bc2).sqrt() + eps);
        }
    }

    /// One Adam update; fails without touching `params` if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("parameter / gradient count mismatch"));
        }
        let scale = self.begin_step(grads)?;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, g, scale);
        }
        Ok(())
    }

    /// Adam update over a module's parameters in visiting order.
    pub fn step_module(&mut self, module: &mut dyn Parameterized, grads: &[Tensor]) -> Result<()> {
        let scale = self.begin_step(grads)?;
        let mut i = 0;
        module.visit_mut("", &mut |_, p| {
            self.update(i, p, &grads[i], scale);
            i += 1;
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let before = p.clone();
        let mut opt = OptimizerState::new(AdamConfig::default(), &[&p]).unwrap();
        opt.step(&mut [&mut p], &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_converges() {
        // f(w) = (w - 3)^2, minimizer 3
        let mut w = Tensor::vector(vec![-1.0]);
        let cfg = AdamConfig { learning_rate: 0.05, ..Default::default() };
        let mut opt = OptimizerState::new(cfg, &[&w]).unwrap();
        for _ in 0..500 {
            let g = Tensor::vector(vec![2.0 * (w.data()[0] - 3.0)]);
            opt.step(&mut [&mut w], &[g]).unwrap();
        }
        assert!((w.data()[0] - 3.0).abs() < 1e-3, "{}", w.data()[0]);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = Tensor::vector(vec![1.0]);
        let mut opt = OptimizerState::new(AdamConfig::default(), &[&p]).unwrap();
        let r = opt.step(&mut [&mut p], &[Tensor::vector(vec![f64::NAN])]);
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert_eq!(p.data(), &[1.0]);
    }

    #[test]
    fn deterministic_runs() {
        let run = || {
            let mut w = Tensor::vector(vec![0.5, -0.25]);
            let mut opt = OptimizerState::new(AdamConfig::default(), &[&w]).unwrap();
            for k in 0..50 {
                let g = w.map(|v| (v * 1.7 + k as f64 * 0.01).sin());
                opt.step(&mut [&mut w], &[g]).unwrap();
            }
            w
        };
        let (a, b) = (run(), run());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
