//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
}

impl AdamState {
    /// Moments are allocated to mirror the given parameter shapes.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let mut first = Vec::new();
        let mut second = Vec::new();
        for p in params {
            first.push(Matrix::zeros(p.rows(), p.cols()));
            second.push(Matrix::zeros(p.rows(), p.cols()));
        }
        AdamState {
            config,
            step: 0,
            first_moment: first,
            second_moment: second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over the whole parameter group. `updates` pairs each named
    /// parameter with its gradient, in the order the state was built with.
    pub fn step(&mut self, updates: Vec<(&str, &mut Matrix, &Matrix)>) -> Result<()> {
        if updates.len() != self.first_moment.len() {
            return Err(Error::Contract(format!(
                "adam group size mismatch: state has {} tensors, got {}",
                self.first_moment.len(),
                updates.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);

        for (i, (name, param, grad)) in updates.into_iter().enumerate() {
            if param.shape() != grad.shape() || param.shape() != self.first_moment[i].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: param.shape(),
                    rhs: grad.shape(),
                });
            }
            if !grad.all_finite() {
                return Err(Error::Train(format!(
                    "non-finite gradient for parameter {name}"
                )));
            }
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for ((pv, gv), (mv, vv)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}
