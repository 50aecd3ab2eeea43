use serde::{Deserialize, Serialize};

use crate::msunet::ModelWeights;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelWeights,
    pub v: ModelWeights,
    pub step: u64,
}

impl AdamState {
    pub fn new(weights: &ModelWeights) -> Self {
        Self {
            m: weights.zeros_like(),
            v: weights.zeros_like(),
            step: 0,
        }
    }

    /// One update: `w ← w − lr·(m̂ / (√v̂ + ε) + wd·w)`.
    pub fn update(&mut self, cfg: &AdamConfig, weights: &mut ModelWeights, grads: &ModelWeights) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let names: Vec<String> = weights.names().cloned().collect();
        for name in &names {
            let g = grads.get(name);
            let m = self.m.get_mut(name);
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            });
            let v = self.v.get_mut(name);
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            });
            let (m, v) = (self.m.get(name), self.v.get(name));
            ndarray::Zip::from(weights.get_mut(name)).and(m).and(v).for_each(|w, &m, &v| {
                let step = (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
                *w -= cfg.lr * (step + cfg.weight_decay * *w);
            });
        }
    }
}
