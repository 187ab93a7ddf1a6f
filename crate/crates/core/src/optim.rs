//! Adam with a linear learning-rate schedule over flat parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A model whose parameters can be visited as flat `f64` tensors in a fixed
/// order. Gradients and optimizer moments use the same type.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Inverse of [`ParamSet::flatten`].
    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "parameter blob has {} values, model needs {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

pub struct Adam<P: ParamSet> {
    cfg: AdamConfig,
    m: P,
    v: P,
    t: i32,
}

impl<P: ParamSet> Adam<P> {
    pub fn new(cfg: AdamConfig, like: &P) -> Self {
        Self {
            cfg,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    /// One update with the learning rate scaled by `lr_factor`.
    pub fn step(&mut self, params: &mut P, grads: &P, lr_factor: f64) {
        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let lr = learning_rate * lr_factor;
        let bc1 = 1.0 - beta1.powi(self.t);
        let bc2 = 1.0 - beta2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

/// Linear interpolation of the learning-rate factor from `start_factor` to
/// `end_factor` over `total_iters` epochs, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSchedule {
    pub start_factor: f64,
    pub end_factor: f64,
    pub total_iters: usize,
}

impl Default for LinearSchedule {
    fn default() -> Self {
        Self {
            start_factor: 1.0,
            end_factor: 0.1,
            total_iters: 50,
        }
    }
}

impl LinearSchedule {
    pub fn factor(&self, epoch: usize) -> f64 {
        if self.total_iters == 0 {
            return self.end_factor;
        }
        let t = (epoch.min(self.total_iters)) as f64 / self.total_iters as f64;
        self.start_factor + (self.end_factor - self.start_factor) * t
    }
}
