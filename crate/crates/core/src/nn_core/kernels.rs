//! Raw convolution kernels (im2col + GEMM) shared by the tape and the critic's
//! hand-written penalty pass. Layouts are NCHW; conv weights are `Cout×Cin×K×K`,
//! transposed-conv weights are `Cin×Cout×K×K`.

use crate::tensor::{Real, Tensor};

/// Spatial geometry of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        Self { k, stride, pad }
    }

    /// `floor((h + 2·pad − k) / stride) + 1`, or `None` when the kernel does not fit.
    pub fn out_size(&self, h: usize) -> Option<usize> {
        let padded = h + 2 * self.pad;
        if padded < self.k || self.stride == 0 {
            return None;
        }
        Some((padded - self.k) / self.stride + 1)
    }

    /// Output size of the transposed convolution: `(h − 1)·stride − 2·pad + k`.
    pub fn transpose_out_size(&self, h: usize) -> Option<usize> {
        ((h - 1) * self.stride + self.k).checked_sub(2 * self.pad).filter(|&v| v > 0)
    }
}

/// Output columns `ox` whose input column `ox·stride − pad + kx` lies inside `0..w`.
fn valid_range(w: usize, wo: usize, g: ConvGeom, kx: usize) -> (usize, usize) {
    let (s, pad) = (g.stride, g.pad);
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(s) };
    let hi = if w + pad > kx { ((w + pad - kx - 1) / s + 1).min(wo) } else { 0 };
    (lo.min(hi), hi)
}

/// Writes one kernel tap of one plane into a zeroed `ho·wo` slice.
#[allow(clippy::too_many_arguments)]
fn fill_tap<T: Real>(plane: &[T], h: usize, w: usize, ho: usize, wo: usize, g: ConvGeom, ky: usize, kx: usize, dst: &mut [T]) {
    let (lo, hi) = valid_range(w, wo, g, kx);
    if lo == hi {
        return;
    }
    let ix0 = lo * g.stride + kx - g.pad;
    for oy in 0..ho {
        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
        let d = &mut dst[oy * wo + lo..oy * wo + hi];
        if g.stride == 1 {
            d.copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
        } else {
            for (j, v) in d.iter_mut().enumerate() {
                *v = src[ix0 + j * g.stride];
            }
        }
    }
}

/// Unfolds one `c×h×w` image into a `(c·k·k) × (ho·wo)` matrix.
pub fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeom, out: &mut Vec<T>) -> (usize, usize) {
    let ho = g.out_size(h).expect("kernel fits");
    let wo = g.out_size(w).expect("kernel fits");
    let p = ho * wo;
    out.clear();
    out.resize(c * g.k * g.k * p, T::zero());
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                fill_tap(plane, h, w, ho, wo, g, ky, kx, &mut out[row * p..(row + 1) * p]);
            }
        }
    }
    (ho, wo)
}

/// Adjoint of [`im2col`]: scatters-and-adds a column matrix back into `c×h×w`.
pub fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, g: ConvGeom, x: &mut [T]) {
    let p = g.out_size(h).expect("kernel fits") * g.out_size(w).expect("kernel fits");
    col2im_at(col, c, h, w, g, x, p, 0);
}

#[allow(clippy::too_many_arguments)]
fn col2im_at<T: Real>(col: &[T], c: usize, h: usize, w: usize, g: ConvGeom, x: &mut [T], ld: usize, off: usize) {
    let ho = g.out_size(h).expect("kernel fits");
    let wo = g.out_size(w).expect("kernel fits");
    let k = g.k;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let (lo, hi) = valid_range(w, wo, g, kx);
                if lo == hi {
                    continue;
                }
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * ld + off..row * ld + off + ho * wo];
                let ix0 = lo * g.stride + kx - g.pad;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let s = &src[oy * wo + lo..oy * wo + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[ix0..ix0 + (hi - lo)].iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[ix0..].iter_mut().step_by(g.stride).zip(s) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds a whole batch into `(c·k·k) × (n·p)`, sample-major columns.
fn batch_cols<T: Real>(x: &Tensor<T>, g: ConvGeom) -> (Vec<T>, usize, usize) {
    let (n, c, h, w) = x.dims4().expect("4d input");
    let ho = g.out_size(h).expect("kernel fits");
    let wo = g.out_size(w).expect("kernel fits");
    let p = ho * wo;
    let ld = n * p;
    let mut col = vec![T::zero(); c * g.k * g.k * ld];
    for ci in 0..c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                for i in 0..n {
                    let plane = &x.data()[(i * c + ci) * h * w..(i * c + ci + 1) * h * w];
                    let off = row * ld + i * p;
                    fill_tap(plane, h, w, ho, wo, g, ky, kx, &mut col[off..off + p]);
                }
            }
        }
    }
    (col, p, ld)
}

/// `N×C×P` (flattened NCHW) to `C × (N·P)`.
fn to_channel_major<T: Real>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..n {
        for ci in 0..c {
            out[ci * n * p + i * p..ci * n * p + (i + 1) * p].copy_from_slice(&x[(i * c + ci) * p..(i * c + ci + 1) * p]);
        }
    }
    out
}

fn from_channel_major<T: Real>(x: &[T], n: usize, c: usize, p: usize, out: &mut [T]) {
    for i in 0..n {
        for ci in 0..c {
            out[(i * c + ci) * p..(i * c + ci + 1) * p].copy_from_slice(&x[ci * n * p + i * p..ci * n * p + (i + 1) * p]);
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], p: usize) {
    for (co, &b) in bias.iter().enumerate() {
        for v in &mut out[co * p..(co + 1) * p] {
            *v += b;
        }
    }
}

/// Forward convolution. `w` is `Cout×Cin×K×K`.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, g: ConvGeom) -> Tensor<T> {
    conv2d_forward_cols(x, w, b, g).0
}

/// [`conv2d_forward`] that also returns the unfolded input for [`conv2d_weight_grad_cols`].
pub fn conv2d_forward_cols<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, g: ConvGeom) -> (Tensor<T>, Vec<T>) {
    let (n, c, h, wd) = x.dims4().expect("4d input");
    let cout = w.shape()[0];
    let ckk = c * g.k * g.k;
    let ho = g.out_size(h).unwrap();
    let wo = g.out_size(wd).unwrap();
    let (col, p, ld) = batch_cols(x, g);
    let mut tmp = vec![T::zero(); cout * ld];
    crate::tensor::matmul(cout, ckk, ld, w.data(), &col, &mut tmp, false);
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    from_channel_major(&tmp, n, cout, p, out.data_mut());
    if let Some(b) = b {
        for i in 0..n {
            add_bias(&mut out.data_mut()[i * cout * p..(i + 1) * cout * p], b.data(), p);
        }
    }
    (out, col)
}

/// Gradient of [`conv2d_forward`] with respect to its input.
pub fn conv2d_input_grad<T: Real>(dy: &Tensor<T>, w: &Tensor<T>, in_shape: &[usize], g: ConvGeom) -> Tensor<T> {
    let (n, c, h, wd) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (_, cout, ho, wo) = dy.dims4().unwrap();
    let ckk = c * g.k * g.k;
    let p = ho * wo;
    let ld = n * p;
    let dyc = to_channel_major(dy.data(), n, cout, p);
    // dcol = Wᵀ · dy
    let mut dcol = vec![T::zero(); ckk * ld];
    T::gemm(ckk, cout, ld, T::one(), w.data(), 1, ckk as isize, &dyc, ld as isize, 1, T::zero(), &mut dcol, ld as isize, 1);
    let mut dx = Tensor::zeros(in_shape);
    for i in 0..n {
        col2im_at(&dcol, c, h, wd, g, &mut dx.data_mut()[i * c * h * wd..(i + 1) * c * h * wd], ld, i * p);
    }
    dx
}

/// Gradient of [`conv2d_forward`] with respect to the kernel, `Cout×Cin×K×K`.
pub fn conv2d_weight_grad<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, g: ConvGeom) -> Tensor<T> {
    let (col, _, _) = batch_cols(x, g);
    conv2d_weight_grad_cols(&col, x.shape()[1], dy, g)
}

/// Kernel gradient from the unfolded input of [`conv2d_forward_cols`].
pub fn conv2d_weight_grad_cols<T: Real>(col: &[T], c: usize, dy: &Tensor<T>, g: ConvGeom) -> Tensor<T> {
    let (n, cout, ho, wo) = dy.dims4().unwrap();
    let ckk = c * g.k * g.k;
    let p = ho * wo;
    let ld = n * p;
    let dyc = to_channel_major(dy.data(), n, cout, p);
    let mut dw = Tensor::zeros(&[cout, c, g.k, g.k]);
    // dW = dy · colᵀ
    T::gemm(cout, ld, ckk, T::one(), &dyc, ld as isize, 1, col, 1, ld as isize, T::zero(), dw.data_mut(), ckk as isize, 1);
    dw
}

/// Per-channel sum over batch and space, the bias gradient of any conv.
pub fn channel_sum<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = dy.dims4().unwrap();
    let p = h * w;
    let mut out = vec![T::zero(); c];
    for i in 0..n {
        for (ci, o) in out.iter_mut().enumerate() {
            let s: T = dy.data()[(i * c + ci) * p..(i * c + ci + 1) * p].iter().copied().sum();
            *o += s;
        }
    }
    Tensor::new(&[c], out).unwrap()
}

/// Transposed convolution. `w` is `Cin×Cout×K×K`; output spatial size follows
/// [`ConvGeom::transpose_out_size`].
pub fn conv_transpose2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Tensor<T> {
    let (n, _, h, wd) = x.dims4().unwrap();
    let cout = w.shape()[1];
    let ho = g.transpose_out_size(h).unwrap();
    let wo = g.transpose_out_size(wd).unwrap();
    let mut y = conv2d_input_grad(x, w, &[n, cout, ho, wo], g);
    if let Some(b) = b {
        let p = ho * wo;
        for i in 0..n {
            add_bias(&mut y.data_mut()[i * cout * p..(i + 1) * cout * p], b.data(), p);
        }
    }
    y
}

/// Gradient of [`conv_transpose2d_forward`] with respect to its input.
pub fn conv_transpose2d_input_grad<T: Real>(dy: &Tensor<T>, w: &Tensor<T>, g: ConvGeom) -> Tensor<T> {
    conv2d_forward(dy, w, None, g)
}

/// Gradient of [`conv_transpose2d_forward`] with respect to the kernel, `Cin×Cout×K×K`.
pub fn conv_transpose2d_weight_grad<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, g: ConvGeom) -> Tensor<T> {
    conv2d_weight_grad(dy, x, g)
}
