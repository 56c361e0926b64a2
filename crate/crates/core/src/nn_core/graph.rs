//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op appends a node holding its value; [`Graph::backward`] walks the tape
//! in reverse and accumulates gradients only into nodes that need them.

use crate::error::{Error, Result};
use crate::nn_core::kernels::{self, ConvGeom};
use crate::tensor::{matmul, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Option<Vec<T>> },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    InstanceNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor<T>, inv_std: Vec<T> },
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleChannels { x: Var, s: Var },
    GlobalAvgPool(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Reshape(Var),
    Narrow { x: Var, start: usize },
    BroadcastConcat { x: Var, z: Var },
    Attention { theta: Var, phi: Var, g: Var, attn: Vec<T> },
    L2NormalizeRows { x: Var, norms: Vec<T> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor<T> },
    Mean(Var),
    Sum(Var),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recording of one forward computation.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<V>(msg: String) -> Result<V> {
    Err(Error::Shape(msg))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf value; gradients are collected for it when `requires_grad`.
    pub fn input(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.input(t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`Graph::backward`] root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Row-stochastic attention matrices recorded by an attention node, one `P×P` block per sample.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { attn, .. } => Some(attn),
            _ => None,
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let xs = self.value(x).dims4()?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[1] != xs.1 || ws[2] != geom.k || ws[3] != geom.k {
            return shape_err(format!("conv kernel {ws:?} does not match input {:?}", self.shape(x)));
        }
        if geom.out_size(xs.2).is_none() || geom.out_size(xs.3).is_none() {
            return shape_err(format!("kernel {} does not fit input {:?}", geom.k, self.shape(x)));
        }
        if let Some(b) = b {
            if self.value(b).len() != ws[0] {
                return shape_err("conv bias length mismatch".into());
            }
        }
        let (y, cols) = kernels::conv2d_forward_cols(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        // the unfolded input is only needed for the kernel gradient
        let cols = self.rg(w).then_some(cols);
        Ok(self.push(y, Op::Conv2d { x, w, b, geom, cols }, rg))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let xs = self.value(x).dims4()?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[0] != xs.1 || ws[2] != geom.k || ws[3] != geom.k {
            return shape_err(format!("transposed kernel {ws:?} does not match input {:?}", self.shape(x)));
        }
        if geom.transpose_out_size(xs.2).is_none() {
            return shape_err("transposed conv produces empty output".into());
        }
        let y = kernels::conv_transpose2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(y, Op::ConvTranspose2d { x, w, b, geom }, rg))
    }

    /// Per-sample, per-channel normalization over space followed by an affine map.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return shape_err("instance norm affine length mismatch".into());
        }
        let p = h * w;
        if p == 1 && eps == 0.0 {
            return Err(Error::DegenerateVariance("single spatial position with eps = 0".into()));
        }
        let eps = T::from_f64c(eps);
        let pn = T::from_usize(p).unwrap();
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); n * c];
        for i in 0..n * c {
            let ch = i % c;
            let s = &xv[i * p..(i + 1) * p];
            let mean = s.iter().copied().sum::<T>() / pn;
            let var = s.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / pn;
            let denom = var + eps;
            if denom <= T::zero() {
                return Err(Error::DegenerateVariance(format!("zero variance in channel {ch} with eps = 0")));
            }
            let inv = T::one() / denom.sqrt();
            inv_std[i] = inv;
            for j in 0..p {
                let xh = (s[j] - mean) * inv;
                xhat[i * p + j] = xh;
                out[i * p + j] = gv[ch] * xh + bv[ch];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let xhat = Tensor::new(&shape, xhat)?;
        Ok(self.push(Tensor::new(&shape, out)?, Op::InstanceNorm { x, gamma, beta, xhat, inv_std }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let y = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(y, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64c(slope);
        self.unary(x, move |v| if v > T::zero() { v } else { v * s }, Op::LeakyRelu(x, s))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::from_f64c(s);
        self.unary(x, move |v| v * s, Op::Scale(x, s))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("operand shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        let y = self.value(a).zip_map(self.value(b), f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[n,c,:,:] * s[n,c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(s).shape() != [n, c] {
            return shape_err(format!("channel gate {:?} does not match {:?}", self.shape(s), self.shape(x)));
        }
        let p = h * w;
        let sv = self.value(s).data().to_vec();
        let mut y = self.value(x).clone();
        for (i, chunk) in y.data_mut().chunks_mut(p).enumerate() {
            for v in chunk {
                *v *= sv[i];
            }
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(y, Op::ScaleChannels { x, s }, rg))
    }

    /// `N×C×H×W → N×C` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let p = h * w;
        let pn = T::from_usize(p).unwrap();
        let y: Vec<T> = self.value(x).data().chunks(p).map(|s| s.iter().copied().sum::<T>() / pn).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[n, c], y)?, Op::GlobalAvgPool(x), rg))
    }

    /// `x(N×F) · w(O×F)ᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, f) = self.value(x).dims2()?;
        let (o, fw) = self.value(w).dims2()?;
        if f != fw {
            return shape_err(format!("linear weight {:?} does not match input {:?}", self.shape(w), self.shape(x)));
        }
        let mut y = Tensor::zeros(&[n, o]);
        T::gemm(
            n, f, o, T::one(), self.value(x).data(), f as isize, 1, self.value(w).data(), 1, f as isize, T::zero(),
            y.data_mut(), o as isize, 1,
        );
        if let Some(b) = b {
            let bv = self.value(b).data().to_vec();
            if bv.len() != o {
                return shape_err("linear bias length mismatch".into());
            }
            for row in y.data_mut().chunks_mut(o) {
                for (v, &bb) in row.iter_mut().zip(&bv) {
                    *v += bb;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(y, Op::Linear { x, w, b }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Reshape(x), rg))
    }

    /// Columns `start..start+len` of an `N×F` matrix.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, f) = self.value(x).dims2()?;
        if start + len > f || len == 0 {
            return shape_err(format!("narrow {start}+{len} out of {f} columns"));
        }
        let xv = self.value(x).data();
        let y: Vec<T> = (0..n).flat_map(|i| xv[i * f + start..i * f + start + len].iter().copied()).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[n, len], y)?, Op::Narrow { x, start }, rg))
    }

    /// Appends each component of `z` as a constant spatial channel: `N×C×H×W ⊕ (N|1)×L → N×(C+L)×H×W`.
    pub fn broadcast_concat(&mut self, x: Var, z: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (nz, l) = self.value(z).dims2()?;
        if nz != n && nz != 1 {
            return shape_err(format!("latent batch {nz} does not match image batch {n}"));
        }
        let p = h * w;
        let xv = self.value(x).data();
        let zv = self.value(z).data();
        let mut y = Vec::with_capacity(n * (c + l) * p);
        for i in 0..n {
            y.extend_from_slice(&xv[i * c * p..(i + 1) * c * p]);
            let zi = if nz == 1 { 0 } else { i };
            for j in 0..l {
                y.extend(std::iter::repeat_n(zv[zi * l + j], p));
            }
        }
        let rg = self.rg(x) || self.rg(z);
        Ok(self.push(Tensor::new(&[n, c + l, h, w], y)?, Op::BroadcastConcat { x, z }, rg))
    }

    /// Embedded-Gaussian attention: for each sample, `y = g · softmax(θᵀφ)ᵀ`
    /// with θ, φ, g of shape `N×C'×H×W`.
    pub fn attention(&mut self, theta: Var, phi: Var, g: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(theta).dims4()?;
        if self.shape(phi) != self.shape(theta) || self.shape(g) != self.shape(theta) {
            return shape_err("attention projections must share a shape".into());
        }
        let p = h * w;
        let (tv, pv, gv) = (self.value(theta).data(), self.value(phi).data(), self.value(g).data());
        let mut attn = vec![T::zero(); n * p * p];
        let mut y = vec![T::zero(); n * c * p];
        let cp = c * p;
        for i in 0..n {
            let a = &mut attn[i * p * p..(i + 1) * p * p];
            let (ti, pi, gi) = (&tv[i * cp..(i + 1) * cp], &pv[i * cp..(i + 1) * cp], &gv[i * cp..(i + 1) * cp]);
            // f = θᵀ φ  (P×P)
            T::gemm(p, c, p, T::one(), ti, 1, p as isize, pi, p as isize, 1, T::zero(), a, p as isize, 1);
            for row in a.chunks_mut(p) {
                softmax_in_place(row);
            }
            // y = g · Aᵀ  (C'×P)
            T::gemm(
                c, p, p, T::one(), gi, p as isize, 1, a, 1, p as isize, T::zero(), &mut y[i * cp..(i + 1) * cp],
                p as isize, 1,
            );
        }
        let rg = self.rg(theta) || self.rg(phi) || self.rg(g);
        let shape = self.shape(theta).to_vec();
        Ok(self.push(Tensor::new(&shape, y)?, Op::Attention { theta, phi, g, attn }, rg))
    }

    /// Scales each row of an `N×F` matrix to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (n, f) = self.value(x).dims2()?;
        let xv = self.value(x).data();
        let mut norms = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n * f);
        for row in xv.chunks(f) {
            let nr = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if nr <= T::zero() || !nr.is_finite() {
                return Err(Error::DegenerateEmbedding("zero-norm row".into()));
            }
            norms.push(nr);
            y.extend(row.iter().map(|&v| v / nr));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[n, f], y)?, Op::L2NormalizeRows { x, norms }, rg))
    }

    /// Mean softmax cross-entropy of `N×K` logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.value(logits).dims2()?;
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(Error::Input("labels do not match logits".into()));
        }
        let mut probs = self.value(logits).clone();
        let mut loss = T::zero();
        for (row, &l) in probs.data_mut().chunks_mut(k).zip(labels) {
            softmax_in_place(row);
            loss -= row[l].max(T::from_f64c(1e-30)).ln();
        }
        loss = loss / T::from_usize(n).unwrap();
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Seeds `d root = 1` for a scalar root and propagates to every node that requires grad.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return shape_err(format!("backward root must be scalar, got {:?}", self.shape(root)));
        }
        let seed = Tensor::ones(self.shape(root));
        self.backward_with(root, seed)
    }

    /// Reverse pass seeded with an explicit output cotangent.
    pub fn backward_with(&mut self, root: Var, seed: Tensor<T>) -> Result<()> {
        if seed.shape() != self.shape(root) {
            return shape_err("seed shape mismatch".into());
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(gy) = self.grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                self.grads[idx] = Some(gy);
                continue;
            }
            let contributions = self.local_grads(idx, &gy);
            self.grads[idx] = Some(gy);
            for (v, g) in contributions {
                if !self.rg(v) {
                    continue;
                }
                match &mut self.grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, gy: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                let (x, w, b, geom) = (*x, *w, *b, *geom);
                if self.rg(x) {
                    out.push((x, kernels::conv2d_input_grad(gy, self.value(w), self.shape(x), geom)));
                }
                if let Some(cols) = cols {
                    out.push((w, kernels::conv2d_weight_grad_cols(cols, self.shape(x)[1], gy, geom)));
                }
                if let Some(b) = b.filter(|&b| self.rg(b)) {
                    out.push((b, kernels::channel_sum(gy)));
                }
            }
            &Op::ConvTranspose2d { x, w, b, geom } => {
                if self.rg(x) {
                    out.push((x, kernels::conv_transpose2d_input_grad(gy, self.value(w), geom)));
                }
                if self.rg(w) {
                    out.push((w, kernels::conv_transpose2d_weight_grad(self.value(x), gy, geom)));
                }
                if let Some(b) = b.filter(|&b| self.rg(b)) {
                    out.push((b, kernels::channel_sum(gy)));
                }
            }
            Op::InstanceNorm { x, gamma, beta, xhat, inv_std } => {
                let (n, c, h, w) = xhat.dims4().unwrap();
                let p = h * w;
                let pn = T::from_usize(p).unwrap();
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); n * c * p];
                for i in 0..n * c {
                    let ch = i % c;
                    let gyi = &gy.data()[i * p..(i + 1) * p];
                    let xh = &xhat.data()[i * p..(i + 1) * p];
                    let mut s_dy = T::zero();
                    let mut s_dyx = T::zero();
                    for j in 0..p {
                        s_dy += gyi[j];
                        s_dyx += gyi[j] * xh[j];
                    }
                    dgamma[ch] += s_dyx;
                    dbeta[ch] += s_dy;
                    let g = gv[ch];
                    let (m1, m2) = (g * s_dy / pn, g * s_dyx / pn);
                    for j in 0..p {
                        dx[i * p + j] = inv_std[i] * (g * gyi[j] - m1 - xh[j] * m2);
                    }
                }
                if self.rg(*x) {
                    out.push((*x, Tensor::new(xhat.shape(), dx).unwrap()));
                }
                if self.rg(*gamma) {
                    out.push((*gamma, Tensor::new(&[c], dgamma).unwrap()));
                }
                if self.rg(*beta) {
                    out.push((*beta, Tensor::new(&[c], dbeta).unwrap()));
                }
            }
            &Op::Relu(x) => {
                out.push((x, gy.zip_map(self.value(x), |g, v| if v > T::zero() { g } else { T::zero() })));
            }
            &Op::LeakyRelu(x, s) => {
                out.push((x, gy.zip_map(self.value(x), |g, v| if v > T::zero() { g } else { g * s })));
            }
            &Op::Tanh(x) => out.push((x, gy.zip_map(y, |g, t| g * (T::one() - t * t)))),
            &Op::Sigmoid(x) => out.push((x, gy.zip_map(y, |g, s| g * s * (T::one() - s)))),
            &Op::Exp(x) => out.push((x, gy.zip_map(y, |g, e| g * e))),
            &Op::Abs(x) => out.push((x, gy.zip_map(self.value(x), |g, v| g * v.signum_or_zero()))),
            &Op::Add(a, b) => {
                out.push((a, gy.clone()));
                out.push((b, gy.clone()));
            }
            &Op::Sub(a, b) => {
                out.push((a, gy.clone()));
                out.push((b, gy.map(|g| -g)));
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    out.push((a, gy.zip_map(self.value(b), |g, v| g * v)));
                }
                if self.rg(b) {
                    out.push((b, gy.zip_map(self.value(a), |g, v| g * v)));
                }
            }
            &Op::Scale(x, s) => out.push((x, gy.map(|g| g * s))),
            &Op::ScaleChannels { x, s } => {
                let (_, _, h, w) = gy.dims4().unwrap();
                let p = h * w;
                let sv = self.value(s).data();
                if self.rg(x) {
                    let mut dx = gy.clone();
                    for (i, chunk) in dx.data_mut().chunks_mut(p).enumerate() {
                        for v in chunk {
                            *v *= sv[i];
                        }
                    }
                    out.push((x, dx));
                }
                if self.rg(s) {
                    let xv = self.value(x).data();
                    let ds: Vec<T> = gy
                        .data()
                        .chunks(p)
                        .zip(xv.chunks(p))
                        .map(|(g, xx)| g.iter().zip(xx).map(|(&a, &b)| a * b).sum::<T>())
                        .collect();
                    out.push((s, Tensor::new(self.shape(s), ds).unwrap()));
                }
            }
            &Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = self.value(x).dims4().unwrap();
                let p = h * w;
                let pn = T::from_usize(p).unwrap();
                let dx: Vec<T> = gy.data().iter().flat_map(|&g| std::iter::repeat_n(g / pn, p)).collect();
                out.push((x, Tensor::new(self.shape(x), dx).unwrap()));
            }
            &Op::Linear { x, w, b } => {
                let (n, f) = self.value(x).dims2().unwrap();
                let o = gy.shape()[1];
                if self.rg(x) {
                    let mut dx = Tensor::zeros(&[n, f]);
                    matmul(n, o, f, gy.data(), self.value(w).data(), dx.data_mut(), false);
                    out.push((x, dx));
                }
                if self.rg(w) {
                    let mut dw = Tensor::zeros(&[o, f]);
                    T::gemm(
                        o, n, f, T::one(), gy.data(), 1, o as isize, self.value(x).data(), f as isize, 1, T::zero(),
                        dw.data_mut(), f as isize, 1,
                    );
                    out.push((w, dw));
                }
                if let Some(b) = b.filter(|&b| self.rg(b)) {
                    let mut db = vec![T::zero(); o];
                    for row in gy.data().chunks(o) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    out.push((b, Tensor::new(&[o], db).unwrap()));
                }
            }
            &Op::Reshape(x) => out.push((x, gy.clone().reshape(self.shape(x)).unwrap())),
            &Op::Narrow { x, start } => {
                let (n, f) = self.value(x).dims2().unwrap();
                let len = gy.shape()[1];
                let mut dx = Tensor::zeros(&[n, f]);
                for i in 0..n {
                    dx.data_mut()[i * f + start..i * f + start + len]
                        .copy_from_slice(&gy.data()[i * len..(i + 1) * len]);
                }
                out.push((x, dx));
            }
            &Op::BroadcastConcat { x, z } => {
                let (n, c, h, w) = self.value(x).dims4().unwrap();
                let (nz, l) = self.value(z).dims2().unwrap();
                let p = h * w;
                let ct = c + l;
                if self.rg(x) {
                    let mut dx = Vec::with_capacity(n * c * p);
                    for i in 0..n {
                        dx.extend_from_slice(&gy.data()[i * ct * p..(i * ct + c) * p]);
                    }
                    out.push((x, Tensor::new(self.shape(x), dx).unwrap()));
                }
                if self.rg(z) {
                    let mut dz = vec![T::zero(); nz * l];
                    for i in 0..n {
                        let zi = if nz == 1 { 0 } else { i };
                        for j in 0..l {
                            let off = (i * ct + c + j) * p;
                            dz[zi * l + j] += gy.data()[off..off + p].iter().copied().sum::<T>();
                        }
                    }
                    out.push((z, Tensor::new(&[nz, l], dz).unwrap()));
                }
            }
            Op::Attention { theta, phi, g, attn } => {
                let (theta, phi, g) = (*theta, *phi, *g);
                let (n, c, h, w) = self.value(theta).dims4().unwrap();
                let p = h * w;
                let cp = c * p;
                let (tv, pv, gv) = (self.value(theta).data(), self.value(phi).data(), self.value(g).data());
                let mut dtheta = vec![T::zero(); n * cp];
                let mut dphi = vec![T::zero(); n * cp];
                let mut dg = vec![T::zero(); n * cp];
                let mut da = vec![T::zero(); p * p];
                for i in 0..n {
                    let a = &attn[i * p * p..(i + 1) * p * p];
                    let dy = &gy.data()[i * cp..(i + 1) * cp];
                    let sl = i * cp..(i + 1) * cp;
                    // dG = dY · A
                    T::gemm(c, p, p, T::one(), dy, p as isize, 1, a, p as isize, 1, T::zero(), &mut dg[sl.clone()], p as isize, 1);
                    // dA = dYᵀ · G
                    T::gemm(p, c, p, T::one(), dy, 1, p as isize, &gv[sl.clone()], p as isize, 1, T::zero(), &mut da, p as isize, 1);
                    // softmax backward, row-wise
                    for (drow, arow) in da.chunks_mut(p).zip(a.chunks(p)) {
                        let dot: T = drow.iter().zip(arow).map(|(&d, &s)| d * s).sum();
                        for (d, &s) in drow.iter_mut().zip(arow) {
                            *d = s * (*d - dot);
                        }
                    }
                    // F = Θᵀ Φ: dΘ = Φ · dFᵀ, dΦ = Θ · dF
                    T::gemm(c, p, p, T::one(), &pv[sl.clone()], p as isize, 1, &da, 1, p as isize, T::zero(), &mut dtheta[sl.clone()], p as isize, 1);
                    T::gemm(c, p, p, T::one(), &tv[sl.clone()], p as isize, 1, &da, p as isize, 1, T::zero(), &mut dphi[sl.clone()], p as isize, 1);
                }
                let shape = self.shape(theta).to_vec();
                out.push((theta, Tensor::new(&shape, dtheta).unwrap()));
                out.push((phi, Tensor::new(&shape, dphi).unwrap()));
                out.push((g, Tensor::new(&shape, dg).unwrap()));
            }
            Op::L2NormalizeRows { x, norms } => {
                let (_, f) = y.dims2().unwrap();
                let mut dx = Vec::with_capacity(y.len());
                for ((yr, gr), &nr) in y.data().chunks(f).zip(gy.data().chunks(f)).zip(norms) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&yy, &gg)| (gg - yy * dot) / nr));
                }
                out.push((*x, Tensor::new(y.shape(), dx).unwrap()));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = probs.shape()[1];
                let scale = gy.item() / T::from_usize(labels.len()).unwrap();
                let mut d = probs.clone();
                for (row, &l) in d.data_mut().chunks_mut(k).zip(labels) {
                    row[l] -= T::one();
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                out.push((*logits, d));
            }
            &Op::Mean(x) => {
                let n = T::from_usize(self.value(x).len()).unwrap();
                out.push((x, Tensor::full(self.shape(x), gy.item() / n)));
            }
            &Op::Sum(x) => out.push((x, Tensor::full(self.shape(x), gy.item()))),
        }
        out
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> Self;
}

impl<T: Real> SignumOrZero for T {
    fn signum_or_zero(self) -> Self {
        if self > T::zero() {
            T::one()
        } else if self < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    }
}
