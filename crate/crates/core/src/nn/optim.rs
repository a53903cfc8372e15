use serde::{Deserialize, Serialize};

use super::{Mat, ParamSet};

/// Adam with linear warmup followed by linear decay to zero, plus global
/// gradient-norm clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, warmup_steps: usize) -> Self {
        AdamConfig {
            learning_rate,
            warmup_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    total_steps: usize,
    step: usize,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet, total_steps: usize) -> Self {
        Adam {
            cfg,
            total_steps: total_steps.max(1),
            step: 0,
            m: params.zero_grads(),
            v: params.zero_grads(),
        }
    }

    /// Learning rate for the (1-based) step `t`.
    pub fn rate_at(&self, t: usize) -> f64 {
        let lr = self.cfg.learning_rate;
        let warm = self.cfg.warmup_steps;
        if warm > 0 && t <= warm {
            return lr * t as f64 / warm as f64;
        }
        let remaining = self.total_steps.saturating_sub(t) as f64;
        let span = self.total_steps.saturating_sub(warm).max(1) as f64;
        lr * (remaining / span).max(0.0)
    }

    /// Applies one update with `grads` scaled by `scale` (e.g. `1 / batch`).
    pub fn step(&mut self, params: &mut ParamSet, grads: &mut [Mat], scale: f64) {
        self.step += 1;
        let t = self.step;
        let mut norm2 = 0.0;
        for g in grads.iter_mut() {
            *g *= scale;
            norm2 += g.iter().map(|x| x * x).sum::<f64>();
        }
        let norm = norm2.sqrt();
        if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            let c = self.cfg.clip_norm / norm;
            for g in grads.iter_mut() {
                *g *= c;
            }
        }
        let lr = self.rate_at(t);
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let eps = self.cfg.eps;
        for ((p, g), (m, v)) in params
            .values
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
