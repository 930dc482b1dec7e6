use serde::{Deserialize, Serialize};

use super::network::{FieldGradients, FieldNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
        }
    }
}

/// Adam moments for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64, config: AdamConfig) -> Self {
        Self {
            lr,
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update. Shapes must match.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        let step = self.lr / c1;
        let c2_sqrt = c2.sqrt();
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= step * *m / ((*v).sqrt() / c2_sqrt + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub hash: f64,
    pub mlp: f64,
    pub vertices: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            hash: 1e-2,
            mlp: 1e-3,
            vertices: 1e-4,
        }
    }
}

/// Adam state for all network parameter groups.
#[derive(Debug, Clone)]
pub struct FieldOptimizer {
    pub hash: Adam,
    pub encoder: Adam,
    pub decoder: Adam,
    skipped: u64,
}

impl FieldOptimizer {
    pub fn new(net: &FieldNetwork, rates: &LearningRates, config: AdamConfig) -> Self {
        Self {
            hash: Adam::new(net.hash.params().len(), rates.hash, config),
            encoder: Adam::new(net.encoder.param_count(), rates.mlp, config),
            decoder: Adam::new(net.decoder.param_count(), rates.mlp, config),
            skipped: 0,
        }
    }

    /// Steps skipped because of non-finite gradients.
    pub fn skipped_steps(&self) -> u64 {
        self.skipped
    }

    /// Applies one update; returns `false` (and counts a skip) if any gradient is not finite.
    pub fn step(&mut self, net: &mut FieldNetwork, grads: &FieldGradients) -> bool {
        if !grads.is_finite() {
            self.skipped += 1;
            return false;
        }
        self.hash.step(net.hash.params_mut(), &grads.hash);
        self.encoder.step(net.encoder.params_mut(), &grads.encoder);
        self.decoder.step(net.decoder.params_mut(), &grads.decoder);
        true
    }
}
