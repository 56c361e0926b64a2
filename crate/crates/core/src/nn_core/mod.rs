//! Differentiable building blocks: convolution, instance normalization,
//! residual, non-local and squeeze-excitation blocks, plus the tape and
//! finite-difference checker they are verified with.

pub mod blocks;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;

pub use blocks::{Conv, InstanceNorm, Linear, NonLocalBlock, ResidualBlock, SeBlock};
pub use gradcheck::{grad_check, graph_fn, GradCheckReport};
pub use graph::{Graph, Var};
pub use kernels::ConvGeom;
pub use params::{seeded_rng, Init, ParamBuilder, ParamSet};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Promotes `C×H×W` to `1×C×H×W`; returns whether a batch axis was added.
fn batched<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, bool)> {
    match x.shape().len() {
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(x.shape());
            Ok((x.clone().reshape(&s)?, true))
        }
        4 => Ok((x.clone(), false)),
        _ => Err(Error::Shape(format!("expected C×H×W or N×C×H×W, got {:?}", x.shape()))),
    }
}

fn unbatched<T: Real>(y: Tensor<T>, added: bool) -> Result<Tensor<T>> {
    if added {
        let s = y.shape()[1..].to_vec();
        y.reshape(&s)
    } else {
        Ok(y)
    }
}

/// Runs a block on a throwaway graph with constant parameters.
pub fn apply<T: Real, F>(params: &ParamSet<T>, x: &Tensor<T>, f: F) -> Result<Tensor<T>>
where
    F: FnOnce(&mut Graph<T>, &[Var], Var) -> Result<Var>,
{
    let (xb, added) = batched(x)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let xv = g.constant(xb);
    let y = f(&mut g, &p, xv)?;
    unbatched(g.value(y).clone(), added)
}

/// Zero-padded 2-D convolution with a `Cout×Cin×k×k` kernel.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let (xb, added) = batched(x)?;
    let k = *w.shape().get(2).ok_or_else(|| Error::Shape("kernel must be 4-D".into()))?;
    let mut g = Graph::new();
    let xv = g.constant(xb);
    let wv = g.constant(w.clone());
    let bv = b.map(|b| g.constant(b.clone()));
    let y = g.conv2d(xv, wv, bv, ConvGeom::new(k, stride, pad))?;
    unbatched(g.value(y).clone(), added)
}

pub fn instance_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let (xb, added) = batched(x)?;
    let mut g = Graph::new();
    let xv = g.constant(xb);
    let gv = g.constant(gamma.clone());
    let bv = g.constant(beta.clone());
    let y = g.instance_norm(xv, gv, bv, eps)?;
    unbatched(g.value(y).clone(), added)
}

pub fn residual_block<T: Real>(x: &Tensor<T>, block: &ResidualBlock, params: &ParamSet<T>) -> Result<Tensor<T>> {
    apply(params, x, |g, p, xv| block.forward(g, p, xv))
}

pub fn nonlocal_block<T: Real>(x: &Tensor<T>, block: &NonLocalBlock, params: &ParamSet<T>) -> Result<Tensor<T>> {
    apply(params, x, |g, p, xv| block.forward(g, p, xv))
}

pub fn se_block<T: Real>(x: &Tensor<T>, block: &SeBlock, params: &ParamSet<T>) -> Result<Tensor<T>> {
    apply(params, x, |g, p, xv| block.forward(g, p, xv))
}
