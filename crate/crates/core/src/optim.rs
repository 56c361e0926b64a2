//! Adam with bias correction.

use crate::nn_core::ParamSet;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Real = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamSet<T>, beta1: f64, beta2: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { beta1, beta2, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    /// One update of every array with learning rate `lr`.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64) {
        debug_assert_eq!(grads.len(), params.len());
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64c(self.beta1), T::from_f64c(self.beta2));
        let bc1 = T::from_f64c(1.0 - self.beta1.powi(t));
        let bc2 = T::from_f64c(1.0 - self.beta2.powi(t));
        let lr = T::from_f64c(lr);
        let eps = T::from_f64c(self.eps);
        let one = T::one();
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    /// Moments as parameter sets named after `params`, for checkpointing.
    pub fn moments(&self, params: &ParamSet<T>) -> (ParamSet<T>, ParamSet<T>) {
        let names = params.names().to_vec();
        (ParamSet::from_parts(names.clone(), self.m.clone()), ParamSet::from_parts(names, self.v.clone()))
    }

    pub fn restore(&mut self, step: u64, m: ParamSet<T>, v: ParamSet<T>) {
        self.step = step;
        self.m = m.tensors().to_vec();
        self.v = v.tensors().to_vec();
    }
}
