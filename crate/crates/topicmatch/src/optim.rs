//! Adam with cosine learning-rate decay. Moments are held in f32 like the
//! parameters, so optimizer state checkpoints are bit-exact.

use crate::autograd::Tensor;
use crate::params::{ParamId, ParamStore};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub struct Adam {
    /// First and second moments per store entry (empty for non-trainables).
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    /// Completed optimizer steps.
    pub step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let m = store
            .entries()
            .iter()
            .map(|e| if e.trainable { vec![0.0f32; e.values.len()] } else { Vec::new() })
            .collect::<Vec<_>>();
        let v = m.clone();
        Adam { m, v, step: 0 }
    }

    /// Apply one update with the given learning rate. Gradient order is the
    /// deterministic parameter order, so updates are bit-reproducible.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for (id, grad) in grads {
            let idx = id.0;
            let mut values = store.values_f64(*id);
            debug_assert_eq!(values.len(), grad.len());
            for (k, g) in grad.data().iter().enumerate() {
                let m = BETA1 * self.m[idx][k] as f64 + (1.0 - BETA1) * g;
                let v = BETA2 * self.v[idx][k] as f64 + (1.0 - BETA2) * g * g;
                self.m[idx][k] = m as f32;
                self.v[idx][k] = v as f32;
                // Read the rounded state back so a resumed run replays the
                // exact same arithmetic.
                let m_hat = self.m[idx][k] as f64 / bc1;
                let v_hat = self.v[idx][k] as f64 / bc2;
                values[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            store.set_values_rounded(*id, &values);
        }
    }
}

/// Cosine decay from the initial rate to zero across the configured steps.
pub fn cosine_lr(lr0: f64, step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let t = (step as f64 / total_steps as f64).clamp(0.0, 1.0);
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}
