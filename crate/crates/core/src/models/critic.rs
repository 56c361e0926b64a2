//! PatchGAN critic (normal discriminator): stride-2 3×3 convolutions with
//! leaky ReLU, no normalization, and a linear (unsquashed) patch score map.
//!
//! The gradient penalty needs the derivative of `‖∇ₓ D(x)‖` with respect to the
//! weights. Because the network is piecewise linear in its input, that
//! second-order term is computed exactly by a backward pass followed by one
//! tangent pass through the same convolution kernels.

use crate::error::{Error, Result};
use crate::models::{ModelConfig, IMAGE_CHANNELS};
use crate::nn_core::kernels;
use crate::nn_core::{seeded_rng, Conv, Graph, ParamBuilder, ParamSet, Var};
use crate::tensor::{Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct Critic<T: Real = f32> {
    pub params: ParamSet<T>,
    layers: Vec<Conv>,
    image_size: usize,
}

/// Output of the penalty pass.
#[derive(Clone, Debug)]
pub struct PenaltyPass<T: Real> {
    pub penalty: T,
    pub grad_norms: Vec<T>,
    /// Gradient of the penalty for every parameter, in [`ParamSet`] order.
    pub param_grads: Vec<Tensor<T>>,
}

impl<T: Real> Critic<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut params = ParamSet::default();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut params, &mut rng);
        let mut layers = Vec::new();
        let mut cin = IMAGE_CHANNELS;
        for i in 0..cfg.disc_layers {
            let cout = cfg.disc_base << i;
            layers.push(Conv::new(&mut pb, &format!("conv{}", i + 1), cin, cout, 3, 2, 1, true));
            cin = cout;
        }
        layers.push(Conv::new(&mut pb, "score", cin, 1, 3, 1, 1, true));
        Self { params, layers, image_size: cfg.image_size }
    }

    /// Spatial size of the patch score map.
    pub fn patch_size(&self) -> usize {
        self.layers.iter().fold(self.image_size, |h, l| l.geom.out_size(h).unwrap_or(0))
    }

    fn check(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != IMAGE_CHANNELS || shape[2] != self.image_size || shape[3] != self.image_size {
            return Err(Error::Shape(format!("critic expects N×3×{0}×{0}, got {shape:?}", self.image_size)));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        self.check(g.shape(x))?;
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, p, h)?;
            if i < last {
                h = g.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    /// `N×1×h×w` patch scores.
    pub fn scores(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv)?;
        Ok(g.value(y).clone())
    }

    /// Per-sample gradient of the mean patch score with respect to the input.
    pub fn input_gradient(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.input(x.clone(), true);
        let y = self.forward(&mut g, &p, xv)?;
        let per = g.value(y).len() / x.shape()[0];
        let seed = Tensor::full(g.shape(y), T::one() / T::from_usize(per).unwrap());
        g.backward_with(y, seed)?;
        Ok(g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
    }

    /// `lambda · mean_n (‖∇ₓ mean D(x_n)‖₂ − 1)²` and its exact weight gradient.
    pub fn penalty_pass(&self, x: &Tensor<T>, lambda: f64) -> Result<PenaltyPass<T>> {
        self.check(x.shape())?;
        let n = x.shape()[0];
        let ws: Vec<&Tensor<T>> = self.layers.iter().map(|l| &self.params.tensors()[l.w]).collect();
        let slope = T::from_f64c(LEAKY_SLOPE);
        let last = self.layers.len() - 1;

        // forward: keep layer inputs and activation slopes
        let mut inputs = vec![x.clone()];
        let mut masks: Vec<Tensor<T>> = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let b = l.b.map(|bi| &self.params.tensors()[bi]);
            let h = kernels::conv2d_forward(&inputs[i], ws[i], b, l.geom);
            if i < last {
                masks.push(h.map(|v| if v > T::zero() { T::one() } else { slope }));
                inputs.push(h.map(|v| if v > T::zero() { v } else { v * slope }));
            } else {
                inputs.push(h);
            }
        }

        // backward: cotangents of every pre-activation, ending at the input gradient
        let out_shape = inputs[last + 1].shape().to_vec();
        let per = T::from_usize(out_shape[1..].iter().product()).unwrap();
        let mut dpre = vec![Tensor::zeros(&[1]); self.layers.len()];
        dpre[last] = Tensor::full(&out_shape, T::one() / per);
        let mut grad_in = Tensor::zeros(&[1]);
        for i in (0..=last).rev() {
            let l = &self.layers[i];
            let da = kernels::conv2d_input_grad(&dpre[i], ws[i], inputs[i].shape(), l.geom);
            if i > 0 {
                dpre[i - 1] = da.zip_map(&masks[i - 1], |d, m| d * m);
            } else {
                grad_in = da;
            }
        }

        let per_sample = grad_in.len() / n;
        let lam = T::from_f64c(lambda);
        let nn = T::from_usize(n).unwrap();
        let mut penalty = T::zero();
        let mut norms = Vec::with_capacity(n);
        let mut v = grad_in.clone();
        for i in 0..n {
            let s = &mut v.data_mut()[i * per_sample..(i + 1) * per_sample];
            let nr = s.iter().map(|&a| a * a).sum::<T>().sqrt();
            if !nr.is_finite() {
                return Err(Error::Numerical("non-finite critic input gradient".into()));
            }
            penalty += (nr - T::one()) * (nr - T::one());
            norms.push(nr);
            let coef = if nr > T::zero() { lam * T::from_f64c(2.0) * (nr - T::one()) / (nr * nn) } else { T::zero() };
            for a in s.iter_mut() {
                *a *= coef;
            }
        }
        penalty = lam * penalty / nn;

        // tangent pass: push dP/d(grad_in) forward through the linearized network
        let mut param_grads: Vec<Tensor<T>> = self.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        for (i, l) in self.layers.iter().enumerate() {
            param_grads[l.w] = kernels::conv2d_weight_grad(&v, &dpre[i], l.geom);
            if i < last {
                let u = kernels::conv2d_forward(&v, ws[i], None, l.geom);
                v = u.zip_map(&masks[i], |a, m| a * m);
            }
        }
        Ok(PenaltyPass { penalty, grad_norms: norms, param_grads })
    }
}

impl<T: Real> crate::losses::InputGradient<T> for Critic<T> {
    fn input_gradient(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Critic::input_gradient(self, x)
    }
}
