//! Adaptive-moment updates and step learning-rate schedules.

use serde::{Deserialize, Serialize};

/// Moment decay rates and denominator guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rate multiplied by `factor` every `step_size` ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial: f64,
    pub step_size: usize,
    pub factor: f64,
}

impl StepSchedule {
    pub fn lr_at(&self, tick: usize) -> f64 {
        let drops = if self.step_size == 0 { 0 } else { tick / self.step_size };
        self.initial * self.factor.powi(drops as i32)
    }
}

/// Dense Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Adam {
            params,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(x.len(), grad.len());
        let AdamParams { beta1, beta2, eps } = self.params;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..x.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            x[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Adam restricted to entries with a nonzero gradient.
///
/// Untouched entries keep their moments undecayed and do not move. Bias
/// correction uses the global step count `step` (1-based).
pub fn sparse_adam_update(
    x: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    grad: &[f64],
    step: u64,
    lr: f64,
    params: AdamParams,
) {
    let AdamParams { beta1, beta2, eps } = params;
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    let step_size = lr * bc2.sqrt() / bc1;
    for i in 0..x.len() {
        let g = grad[i];
        if g == 0.0 {
            continue;
        }
        m[i] += (g - m[i]) * (1.0 - beta1);
        v[i] += (g * g - v[i]) * (1.0 - beta2);
        x[i] -= step_size * m[i] / (v[i].sqrt() + eps);
    }
}
