use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamConfig,
    m: ModelParams<T>,
    v: ModelParams<T>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamConfig, params: &ModelParams<T>) -> Self {
        AdamW {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) {
        self.step += 1;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let bc1 = one - T::of(c.beta1.powi(self.step as i32));
        let bc2 = one - T::of(c.beta2.powi(self.step as i32));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.eps);
        let wd = T::of(c.weight_decay);

        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * p[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = ModelConfig::new(3, 2, 0, 1);
        let mut p = ModelParams::<f64>::zeros(&cfg);
        let mut g = p.zeros_like();
        g.out_bias[0] = 0.5;
        g.out_bias[1] = -2.0;
        let mut opt = AdamW::new(
            AdamConfig {
                learning_rate: 0.1,
                ..Default::default()
            },
            &p,
        );
        opt.step(&mut p, &g);
        assert!((p.out_bias[0] + 0.1).abs() < 1e-6);
        assert!((p.out_bias[1] - 0.1).abs() < 1e-6);
        assert_eq!(p.out_bias[2], 0.0);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let cfg = ModelConfig::new(3, 2, 1, 1);
        let mut p = ModelParams::<f64>::zeros(&cfg);
        p.out_bias[1] = 0.25;
        let before = p.clone();
        let g = p.zeros_like();
        let mut opt = AdamW::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            opt.step(&mut p, &g);
        }
        assert_eq!(p, before);
    }
}
