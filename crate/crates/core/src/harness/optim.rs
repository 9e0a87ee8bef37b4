use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with decoupled weight decay:
/// `p <- p - lr * wd * p - lr * mhat / (sqrt(vhat) + eps)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. A non-finite gradient aborts before anything changes.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64, weight_decay: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::shape("adam_step", params.get(id).shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(params.name(id).to_string()));
            }
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::one() - T::of(self.beta1.powi(self.step as i32));
        let c2 = T::one() - T::of(self.beta2.powi(self.step as i32));
        let (lr, wd, eps) = (T::of(lr), T::of(weight_decay), T::of(self.eps));
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w = *w - lr * wd * *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
