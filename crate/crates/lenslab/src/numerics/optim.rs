//! AdamW with decoupled weight decay.

use super::params::ParamSet;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(params: &ParamSet, lr: f32, weight_decay: f32) -> Self {
        let m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        let v = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` must align with parameter `i`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f32>]) {
        assert_eq!(grads.len(), params.len(), "gradient/parameter count mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..grads.len() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let g = &grads[i];
            let data = params.tensor_mut(i).data_mut();
            debug_assert_eq!(data.len(), g.len());
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * data[j]);
            }
        }
    }
}
