//! Adam with bias-corrected moment estimates.

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: one first and second moment per parameter plus the step count.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Float> Adam<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = |t: &Tensor<T>| Tensor::zeros(t.shape().to_vec());
        Self {
            config,
            m: params.tensors().iter().map(zeros).collect(),
            v: params.tensors().iter().map(zeros).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Parameters whose gradient is `None` (frozen or
    /// unreached) keep their values and moments.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(TensorError::Contract(format!(
                "adam: {} gradients for {} parameters (state sized for {})",
                grads.len(),
                params.len(),
                self.m.len()
            )));
        }
        for (id, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != params.get(id).shape() || g.shape() != self.m[id].shape() {
                    return Err(TensorError::Shape {
                        op: "adam_step",
                        left: params.get(id).shape().to_vec(),
                        right: g.shape().to_vec(),
                    });
                }
            }
        }

        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));

        for (id, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let m = self.m[id].data_mut();
            let v = self.v[id].data_mut();
            let p = params.get_mut(id).data_mut();
            for (((pi, mi), vi), &gi) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::full(vec![1], v));
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = store(0.7);
        let mut adam = Adam::new(&p, AdamConfig::with_lr(1e-3));
        adam.step(&mut p, &[Some(Tensor::zeros(vec![1]))]).unwrap();
        assert_eq!(p.get(0).item(), 0.7);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = store(0.0);
        let mut adam = Adam::new(&p, AdamConfig::with_lr(1e-3));
        adam.step(&mut p, &[Some(Tensor::full(vec![1], 1.0))]).unwrap();
        let delta = p.get(0).item();
        assert!((delta + 1e-3).abs() < 1e-6, "{delta}");
    }

    #[test]
    fn constant_sign_gradient_is_monotone() {
        let mut p = store(1.0);
        let mut adam = Adam::new(&p, AdamConfig::with_lr(1e-2));
        let mut prev = p.get(0).item();
        for i in 0..10 {
            let g = Tensor::full(vec![1], 0.3 + 0.1 * i as f64);
            adam.step(&mut p, &[Some(g)]).unwrap();
            let now = p.get(0).item();
            assert!(now < prev);
            prev = now;
        }
        assert_eq!(adam.steps(), 10);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = store(1.0);
        let mut adam = Adam::new(&p, AdamConfig::default());
        let err = adam.step(&mut p, &[Some(Tensor::zeros(vec![2]))]).unwrap_err();
        assert!(matches!(err, TensorError::Shape { .. }));
        assert_eq!(adam.steps(), 0);
    }
}
