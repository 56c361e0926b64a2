//! Parameterized layers composed on a [`Graph`]. Each layer stores indices into
//! the owning network's [`ParamSet`]; `forward` takes the bound variables.

use crate::error::{Error, Result};
use crate::nn_core::graph::{Graph, Var};
use crate::nn_core::kernels::ConvGeom;
use crate::nn_core::params::{Init, ParamBuilder};
use crate::tensor::Real;

/// Standard deviation of the GAN-convention normal initialization.
pub const INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: usize,
    pub b: Option<usize>,
    pub geom: ConvGeom,
    pub transpose: bool,
    pub cin: usize,
    pub cout: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        Self::build(pb, name, cin, cout, k, stride, pad, bias, false, Init::Normal(INIT_STD))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn transposed<T: Real>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        Self::build(pb, name, cin, cout, k, stride, pad, bias, true, Init::Normal(INIT_STD))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Real>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        transpose: bool,
        init: Init,
    ) -> Self {
        let mut s = pb.scope(name);
        let shape = if transpose { [cin, cout, k, k] } else { [cout, cin, k, k] };
        let w = s.param("w", &shape, init);
        let b = bias.then(|| s.param("b", &[cout], Init::Zeros));
        Self { w, b, geom: ConvGeom::new(k, stride, pad), transpose, cin, cout }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let b = self.b.map(|i| p[i]);
        if self.transpose {
            g.conv_transpose2d(x, p[self.w], b, self.geom)
        } else {
            g.conv2d(x, p[self.w], b, self.geom)
        }
    }
}

#[derive(Clone, Debug)]
pub struct InstanceNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl InstanceNorm {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize) -> Self {
        let mut s = pb.scope(name);
        Self { gamma: s.param("gamma", &[c], Init::Ones), beta: s.param("beta", &[c], Init::Zeros) }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.instance_norm(x, p[self.gamma], p[self.beta], NORM_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: Option<usize>,
}

impl Linear {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, fin: usize, fout: usize, bias: bool, init: Init) -> Self {
        let mut s = pb.scope(name);
        let w = s.param("w", &[fout, fin], init);
        let b = bias.then(|| s.param("b", &[fout], Init::Zeros));
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.linear(x, p[self.w], self.b.map(|i| p[i]))
    }
}

/// conv → IN → ReLU → conv → IN, added to the (optionally projected) input.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    conv1: Conv,
    norm1: InstanceNorm,
    conv2: Conv,
    norm2: InstanceNorm,
    skip: Option<Conv>,
}

impl ResidualBlock {
    /// Shape-preserving block as used in the generator trunk.
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize) -> Self {
        Self::with_stride(pb, name, c, c, 1)
    }

    /// Basic block with a 1×1 projection on the skip path when the shape changes.
    pub fn with_stride<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        let mut s = pb.scope(name);
        let conv1 = Conv::new(&mut s, "conv1", cin, cout, 3, stride, 1, false);
        let norm1 = InstanceNorm::new(&mut s, "norm1", cout);
        let conv2 = Conv::new(&mut s, "conv2", cout, cout, 3, 1, 1, false);
        let norm2 = InstanceNorm::new(&mut s, "norm2", cout);
        let skip = (cin != cout || stride != 1).then(|| Conv::new(&mut s, "skip", cin, cout, 1, stride, 0, true));
        Self { conv1, norm1, conv2, norm2, skip }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let c = g.shape(x).get(1).copied().unwrap_or(0);
        if c != self.conv1.cin {
            return Err(Error::Shape(format!("residual block expects {} channels, got {c}", self.conv1.cin)));
        }
        let h = self.conv1.forward(g, p, x)?;
        let h = self.norm1.forward(g, p, h)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, p, h)?;
        let h = self.norm2.forward(g, p, h)?;
        let skip = match &self.skip {
            Some(conv) => conv.forward(g, p, x)?,
            None => x,
        };
        g.add(skip, h)
    }
}

/// Embedded-Gaussian non-local block with a zero-initialized output projection.
#[derive(Clone, Debug)]
pub struct NonLocalBlock {
    theta: Conv,
    phi: Conv,
    g: Conv,
    out: Conv,
    channels: usize,
}

impl NonLocalBlock {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize) -> Self {
        let inner = (c / 2).max(1);
        let mut s = pb.scope(name);
        Self {
            theta: Conv::new(&mut s, "theta", c, inner, 1, 1, 0, true),
            phi: Conv::new(&mut s, "phi", c, inner, 1, 1, 0, true),
            g: Conv::new(&mut s, "g", c, inner, 1, 1, 0, true),
            out: Conv::build(&mut s, "out", inner, c, 1, 1, 0, true, false, Init::Zeros),
            channels: c,
        }
    }

    /// Returns the block output and the attention node (for inspecting row sums).
    pub fn forward_with_attention<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<(Var, Var)> {
        let c = g.shape(x).get(1).copied().unwrap_or(0);
        if c != self.channels {
            return Err(Error::Shape(format!("non-local block expects {} channels, got {c}", self.channels)));
        }
        let t = self.theta.forward(g, p, x)?;
        let ph = self.phi.forward(g, p, x)?;
        let gg = self.g.forward(g, p, x)?;
        let y = g.attention(t, ph, gg)?;
        let z = self.out.forward(g, p, y)?;
        Ok((g.add(x, z)?, y))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        self.forward_with_attention(g, p, x).map(|(y, _)| y)
    }
}

/// Squeeze (global average pool), excite (FC → ReLU → FC → sigmoid), scale.
#[derive(Clone, Debug)]
pub struct SeBlock {
    fc1: Linear,
    fc2: Linear,
    channels: usize,
}

impl SeBlock {
    pub fn new<T: Real>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || c % reduction != 0 {
            return Err(Error::Config(format!("{c} channels not divisible by SE reduction {reduction}")));
        }
        let mut s = pb.scope(name);
        Ok(Self {
            fc1: Linear::new(&mut s, "fc1", c, c / reduction, true, Init::Normal(INIT_STD)),
            fc2: Linear::new(&mut s, "fc2", c / reduction, c, true, Init::Normal(INIT_STD)),
            channels: c,
        })
    }

    /// Returns the rescaled output and the `N×C` gate node.
    pub fn forward_with_gate<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<(Var, Var)> {
        let c = g.shape(x).get(1).copied().unwrap_or(0);
        if c != self.channels {
            return Err(Error::Shape(format!("SE block expects {} channels, got {c}", self.channels)));
        }
        let s = g.global_avg_pool(x)?;
        let s = self.fc1.forward(g, p, s)?;
        let s = g.relu(s);
        let s = self.fc2.forward(g, p, s)?;
        let gate = g.sigmoid(s);
        Ok((g.scale_channels(x, gate)?, gate))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        self.forward_with_gate(g, p, x).map(|(y, _)| y)
    }
}
