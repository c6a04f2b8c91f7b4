//! Adam optimizer with bias correction.

use crate::nn::Params;

/// Adam state: first and second moment estimates per parameter group.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &Params, beta1: f64, beta2: f64, eps: f64) -> Self {
        let shapes: Vec<Vec<f64>> = params
            .ids()
            .map(|id| vec![0.0; params.entry(id).data.len()])
            .collect();
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    /// One update using the gradients currently held in `params`.
    pub fn step(&mut self, params: &mut Params, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in params.ids().collect::<Vec<_>>() {
            let e = params.entry_mut(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for i in 0..e.data.len() {
                let g = e.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                e.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    /// Drops accumulated statistics (used at stage boundaries).
    pub fn reset(&mut self) {
        self.t = 0;
        for m in &mut self.m {
            m.fill(0.0);
        }
        for v in &mut self.v {
            v.fill(0.0);
        }
    }
}
