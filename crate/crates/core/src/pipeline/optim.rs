//! First-order adaptive-moment optimizer with decoupled weight decay and
//! a linear (polynomial, power 1) learning-rate decay to zero.

use crate::error::{Error, Result};

pub struct AdamW {
    lr0: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    total_steps: usize,
    t: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(param_count: usize, lr: f64, weight_decay: f64, total_steps: usize) -> Self {
        Self {
            lr0: lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps: total_steps.max(1),
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// Learning rate for the upcoming step.
    pub fn current_lr(&self) -> f64 {
        let frac = self.t as f64 / self.total_steps as f64;
        self.lr0 * (1.0 - frac).max(0.0)
    }

    /// One update of `params` in place given `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid_input(format!(
                "optimizer sized for {} params, got {}/{}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let lr = self.current_lr();
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }
}
