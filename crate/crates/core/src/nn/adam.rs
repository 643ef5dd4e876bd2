//! The Adam optimizer.

use super::graph::ParamStore;
use super::tensor::Mat;
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |t: &super::graph::ParameterTensor| Mat::zeros(t.value.rows(), t.value.cols());
        Self { config, step: 0, m: store.iter().map(zeros).collect(), v: store.iter().map(zeros).collect() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    ///
    /// Fails without touching any parameter if a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NnError> {
        if let Some((i, t)) = store.iter().enumerate().find(|(_, t)| !t.grad.all_finite()) {
            return Err(NnError::NonFiniteGradient { index: i, name: t.name.clone() });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((t, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if t.trainable {
                let w = t.value.as_mut_slice();
                let g = t.grad.as_slice();
                for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.as_mut_slice()).zip(v.as_mut_slice()) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                }
            }
            t.grad.fill(0.0);
        }
        Ok(())
    }
}
