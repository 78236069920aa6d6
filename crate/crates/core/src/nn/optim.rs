//! Adam and global gradient-norm clipping.

use super::params::ParamSet;
use super::tape::Array;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Adam {
        let m = params.iter().map(|(_, a)| Array::zeros(a.rows, a.cols)).collect();
        let v = params.iter().map(|(_, a)| Array::zeros(a.rows, a.cols)).collect();
        Adam { lr, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters; `grads` aligns with the set's
    /// declaration order.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Array]) {
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - ADAM_BETA1.powf(t);
        let bias2 = 1.0 - ADAM_BETA2.powf(t);
        for idx in 0..params.len() {
            let g = &grads[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let p = params.entry_mut(idx);
            for k in 0..p.data.len() {
                m.data[k] = ADAM_BETA1 * m.data[k] + (1.0 - ADAM_BETA1) * g.data[k];
                v.data[k] = ADAM_BETA2 * v.data[k] + (1.0 - ADAM_BETA2) * g.data[k] * g.data[k];
                let mhat = m.data[k] / bias1;
                let vhat = v.data[k] / bias2;
                p.data[k] -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }

    /// (moment arrays, step counter) for checkpointing.
    pub fn state(&self) -> (&[Array], &[Array], u64) {
        (&self.m, &self.v, self.step)
    }

    pub fn restore(&mut self, m: Vec<Array>, v: Vec<Array>, step: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
        self.step = step;
    }
}

/// Rescales gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in &mut g.data {
                *x *= scale;
            }
        }
    }
    norm
}
