use serde::{Deserialize, Serialize};

use super::Param;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments and no weight decay. Moment buffers are
/// matched to parameters by position, so the parameter list must come in
/// the same order on every step.
pub struct Adam {
    lr: f64,
    cfg: AdamConfig,
    t: i32,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, cfg: AdamConfig) -> Self {
        Adam {
            lr,
            cfg,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (slot, p) in params.iter_mut().filter(|p| p.trainable).enumerate() {
            if self.moments.len() <= slot {
                self.moments.push((vec![0.0; p.len()], vec![0.0; p.len()]));
            }
            let (m, v) = &mut self.moments[slot];
            assert_eq!(m.len(), p.len(), "parameter `{}` changed size", p.name);
            for (((w, &g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}
