//! Oracles and gradient cases shared by the module tests and the acceptance suite.
#![allow(dead_code)]

use a3gn::losses::{graph_adversarial, graph_cosine, graph_kl, graph_reconstruction};
use a3gn::models::{Critic, ModelConfig};
use a3gn::nn_core::params::{randomize, uniform_tensor};
use a3gn::nn_core::{
    grad_check, graph_fn, seeded_rng, Conv, ConvGeom, GradCheckReport, Graph, Init, InstanceNorm, Linear,
    NonLocalBlock, ParamBuilder, ParamSet, ResidualBlock, SeBlock, Var,
};
use a3gn::{Result, Tensor};

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform_tensor(shape, 1.0, &mut seeded_rng(seed))
}

// ---------------------------------------------------------------------------
// attention oracles

fn p<'a>(ps: &'a ParamSet<f64>, name: &str) -> &'a [f64] {
    ps.get(name).unwrap_or_else(|| panic!("missing {name}")).data()
}

/// 1×1 convolution applied position by position: `out[k][i] = b[k] + Σ_c w[k][c]·x[c][i]`.
fn pointwise(w: &[f64], b: &[f64], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cin = x.len();
    let np = x[0].len();
    (0..b.len()).map(|k| (0..np).map(|i| b[k] + (0..cin).map(|c| w[k * cin + c] * x[c][i]).sum::<f64>()).collect()).collect()
}

fn planes(x: &Tensor<f64>) -> Vec<Vec<f64>> {
    let s = x.shape();
    let np = s[1] * s[2];
    x.data().chunks(np).map(|c| c.to_vec()).collect()
}

/// Non-local block on a single `C×H×W` input, written as explicit loops over position pairs.
/// Also returns the attention matrix.
pub fn nonlocal_oracle(x: &Tensor<f64>, ps: &ParamSet<f64>, prefix: &str) -> (Tensor<f64>, Vec<Vec<f64>>) {
    let xs = planes(x);
    let get = |n: &str| p(ps, &format!("{prefix}.{n}"));
    let theta = pointwise(get("theta.w"), get("theta.b"), &xs);
    let phi = pointwise(get("phi.w"), get("phi.b"), &xs);
    let gx = pointwise(get("g.w"), get("g.b"), &xs);
    let np = xs[0].len();
    let mut attn = vec![vec![0.0; np]; np];
    for i in 0..np {
        let mut f = vec![0.0; np];
        for j in 0..np {
            for k in 0..theta.len() {
                f[j] += theta[k][i] * phi[k][j];
            }
        }
        let m = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = f.iter().map(|v| (v - m).exp()).sum();
        for j in 0..np {
            attn[i][j] = (f[j] - m).exp() / z;
        }
    }
    let mut y = vec![vec![0.0; np]; gx.len()];
    for k in 0..gx.len() {
        for i in 0..np {
            for j in 0..np {
                y[k][i] += attn[i][j] * gx[k][j];
            }
        }
    }
    let z = pointwise(get("out.w"), get("out.b"), &y);
    let out: Vec<f64> = xs.iter().zip(&z).flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect::<Vec<_>>()).collect();
    (Tensor::new(x.shape(), out).unwrap(), attn)
}

/// Squeeze, excite, scale on a single `C×H×W` input; also returns the gates.
pub fn se_oracle(x: &Tensor<f64>, ps: &ParamSet<f64>, prefix: &str) -> (Tensor<f64>, Vec<f64>) {
    let xs = planes(x);
    let get = |n: &str| p(ps, &format!("{prefix}.{n}"));
    let c = xs.len();
    let squeeze: Vec<f64> = xs.iter().map(|pl| pl.iter().sum::<f64>() / pl.len() as f64).collect();
    let (w1, b1, w2, b2) = (get("fc1.w"), get("fc1.b"), get("fc2.w"), get("fc2.b"));
    let r = b1.len();
    let hidden: Vec<f64> = (0..r).map(|j| (b1[j] + (0..c).map(|i| w1[j * c + i] * squeeze[i]).sum::<f64>()).max(0.0)).collect();
    let gates: Vec<f64> =
        (0..c).map(|i| 1.0 / (1.0 + (-(b2[i] + (0..r).map(|j| w2[i * r + j] * hidden[j]).sum::<f64>())).exp())).collect();
    let out: Vec<f64> = xs.iter().zip(&gates).flat_map(|(pl, s)| pl.iter().map(move |v| v * s)).collect();
    (Tensor::new(x.shape(), out).unwrap(), gates)
}

pub fn nonlocal_params(c: usize, seed: u64) -> (ParamSet<f64>, NonLocalBlock) {
    let mut set = ParamSet::default();
    let mut rng = seeded_rng(seed);
    let block = NonLocalBlock::new(&mut ParamBuilder::new(&mut set, &mut rng), "nl", c);
    (set, block)
}

pub fn se_params(c: usize, reduction: usize, seed: u64) -> (ParamSet<f64>, SeBlock) {
    let mut set = ParamSet::default();
    let mut rng = seeded_rng(seed);
    let block = SeBlock::new(&mut ParamBuilder::new(&mut set, &mut rng), "se", c, reduction).unwrap();
    (set, block)
}

pub fn residual_params(cin: usize, cout: usize, stride: usize, seed: u64) -> (ParamSet<f64>, ResidualBlock) {
    let mut set = ParamSet::default();
    let mut rng = seeded_rng(seed);
    let block = ResidualBlock::with_stride(&mut ParamBuilder::new(&mut set, &mut rng), "res", cin, cout, stride);
    (set, block)
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// SSIM reference

/// skimage `structural_similarity(gaussian_weights=True, sigma=1.5,
/// use_sample_covariance=False, data_range=1, channel_axis=0)` on [`lcg_pair`]
/// images 0..20, then a constant image (byte 200) against its inverse (byte 55).
pub const SKIMAGE_SSIM: [f64; 21] = [
    9.75519692736017574e-01,
    -9.90960092788858021e-02,
    -9.58418063512217255e-01,
    9.71354349228260805e-01,
    3.18639309794660763e-02,
    -9.74284771261288873e-01,
    9.73658153441465557e-01,
    3.37031478316618671e-02,
    -9.70543817073838633e-01,
    9.73151616207519665e-01,
    -9.09285698742521714e-02,
    -9.66666266289472720e-01,
    9.73582915415404426e-01,
    -3.65933844164425537e-02,
    -9.51164886705721080e-01,
    9.76173117709034810e-01,
    2.57316381196744381e-02,
    -9.49173741910355750e-01,
    9.71183964662837962e-01,
    1.64000629586248919e-01,
    5.11404431279542826e-01,
];

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0 >> 33
    }
}

fn bytes_to_tensor(k: &[i64], shape: &[usize]) -> Tensor<f32> {
    let data = k.iter().map(|&v| (v as f64 / 127.5 - 1.0) as f32).collect();
    Tensor::new(shape, data).unwrap()
}

/// Image pair `p` of the frozen reference set: byte images of odd sizes, either
/// lightly perturbed, unrelated, or inverted depending on `p % 3`.
pub fn lcg_pair(p: usize) -> (Tensor<f32>, Tensor<f32>) {
    let h = 11 + (p * 3) % 10;
    let w = 11 + (p * 7) % 10;
    let mut g = Lcg(1000 + p as u64);
    let n = 3 * h * w;
    let a: Vec<i64> = (0..n).map(|_| (g.next() % 256) as i64).collect();
    let b: Vec<i64> = match p % 3 {
        0 => a.iter().map(|&v| (v + (g.next() % 61) as i64 - 30).clamp(0, 255)).collect(),
        1 => (0..n).map(|_| (g.next() % 256) as i64).collect(),
        _ => a.iter().map(|&v| 255 - v).collect(),
    };
    (bytes_to_tensor(&a, &[3, h, w]), bytes_to_tensor(&b, &[3, h, w]))
}

pub fn constant_pair() -> (Tensor<f32>, Tensor<f32>) {
    (bytes_to_tensor(&[200; 768], &[3, 16, 16]), bytes_to_tensor(&[55; 768], &[3, 16, 16]))
}

/// SSIM evaluated window by window with a full 2-D Gaussian weight table.
pub fn ssim_direct(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let s = a.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut wt = [[0.0f64; 11]; 11];
    let mut tot = 0.0;
    for (i, row) in wt.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            tot += *v;
        }
    }
    let px = |t: &Tensor<f32>, ch: usize, y: usize, x: usize| (t.data()[(ch * h + y) * w + x] as f64 + 1.0) / 2.0;
    let mut sum = 0.0;
    for ch in 0..c {
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = wt[i][j] / tot;
                        mx += k * px(a, ch, y0 + i, x0 + j);
                        my += k * px(b, ch, y0 + i, x0 + j);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = wt[i][j] / tot;
                        let (dx, dy) = (px(a, ch, y0 + i, x0 + j) - mx, px(b, ch, y0 + i, x0 + j) - my);
                        vx += k * dx * dx;
                        vy += k * dy * dy;
                        cxy += k * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        sum += acc / count as f64;
    }
    sum / c as f64
}

// ---------------------------------------------------------------------------
// gradient cases

pub struct GradCase {
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Dot product with a fixed random tensor, so that sums through normalizations
/// do not collapse to a constant.
fn probe(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let w = g.constant(rand_tensor(&g.shape(y).to_vec(), 4242));
    let m = g.mul(y, w)?;
    Ok(g.sum(m))
}

fn input_case<B>(out: &mut Vec<GradCase>, name: &str, seed: u64, x: &Tensor<f64>, build: B) -> Result<()>
where
    B: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let report = grad_check(graph_fn(|g, xv| build(g, xv).and_then(|y| probe(g, y))), x, GRAD_TOL)?;
    out.push(GradCase { name: format!("{name} d/dx"), seed, report });
    Ok(())
}

/// One check per parameter array of `set`, with `x` held constant.
fn param_cases<F>(out: &mut Vec<GradCase>, name: &str, seed: u64, set: &ParamSet<f64>, x: &Tensor<f64>, fwd: F) -> Result<()>
where
    F: Fn(&mut Graph<f64>, &[Var], Var) -> Result<Var>,
{
    for i in 0..set.len() {
        let f = |t: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
            let mut s = set.clone();
            s.tensors_mut()[i] = t.clone();
            let mut g = Graph::new();
            let pv = s.bind(&mut g, true);
            let xv = g.constant(x.clone());
            let y = fwd(&mut g, &pv, xv)?;
            let root = probe(&mut g, y)?;
            g.backward(root)?;
            Ok((g.value(root).item(), s.grads(&g, &pv).swap_remove(i)))
        };
        let report = grad_check(f, &set.tensors()[i], GRAD_TOL)?;
        out.push(GradCase { name: format!("{name} d/{}", set.names()[i]), seed, report });
    }
    Ok(())
}

fn layer_set<F, L>(seed: u64, build: F) -> (ParamSet<f64>, L)
where
    F: FnOnce(&mut ParamBuilder<'_, f64>) -> L,
{
    let mut set = ParamSet::default();
    let mut rng = seeded_rng(seed);
    let l = build(&mut ParamBuilder::new(&mut set, &mut rng));
    randomize(&mut set, seed + 100, 0.5);
    (set, l)
}

/// Every differentiable primitive and block, inputs and parameters.
pub fn nn_core_gradient_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();

    let x = rand_tensor(&[2, 3, 6, 6], seed);
    let (set, conv) = layer_set(seed, |pb| Conv::new(pb, "conv", 3, 4, 3, 2, 1, true));
    input_case(&mut out, "conv2d s2 p1", seed, &x, |g, xv| {
        let pv = set.bind(g, false);
        conv.forward(g, &pv, xv)
    })?;
    param_cases(&mut out, "conv2d s2 p1", seed, &set, &x, |g, pv, xv| conv.forward(g, pv, xv))?;

    let x = rand_tensor(&[2, 4, 3, 3], seed + 1);
    let (set, tconv) = layer_set(seed, |pb| Conv::transposed(pb, "up", 4, 3, 4, 2, 1, true));
    input_case(&mut out, "conv_transpose2d", seed, &x, |g, xv| {
        let pv = set.bind(g, false);
        tconv.forward(g, &pv, xv)
    })?;
    param_cases(&mut out, "conv_transpose2d", seed, &set, &x, |g, pv, xv| tconv.forward(g, pv, xv))?;

    let x = rand_tensor(&[2, 3, 4, 4], seed + 2);
    let (set, norm) = layer_set(seed, |pb| InstanceNorm::new(pb, "in", 3));
    input_case(&mut out, "instance_norm", seed, &x, |g, xv| {
        let pv = set.bind(g, false);
        norm.forward(g, &pv, xv)
    })?;
    param_cases(&mut out, "instance_norm", seed, &set, &x, |g, pv, xv| norm.forward(g, pv, xv))?;

    let x = rand_tensor(&[3, 5], seed + 3);
    let (set, lin) = layer_set(seed, |pb| Linear::new(pb, "fc", 5, 4, true, Init::Normal(0.1)));
    input_case(&mut out, "linear", seed, &x, |g, xv| {
        let pv = set.bind(g, false);
        lin.forward(g, &pv, xv)
    })?;
    param_cases(&mut out, "linear", seed, &set, &x, |g, pv, xv| lin.forward(g, pv, xv))?;

    for (cin, cout, stride) in [(4, 4, 1), (3, 4, 2)] {
        let x = rand_tensor(&[1, cin, 5, 5], seed + 4);
        let (mut set, block) = residual_params(cin, cout, stride, seed);
        randomize(&mut set, seed + 100, 0.5);
        let name = format!("residual_block {cin}->{cout} s{stride}");
        input_case(&mut out, &name, seed, &x, |g, xv| {
            let pv = set.bind(g, false);
            block.forward(g, &pv, xv)
        })?;
        param_cases(&mut out, &name, seed, &set, &x, |g, pv, xv| block.forward(g, pv, xv))?;
    }

    for (c, h, w) in [(2, 2, 2), (4, 3, 3)] {
        let x = rand_tensor(&[1, c, h, w], seed + 5);
        let (mut set, block) = nonlocal_params(c, seed);
        randomize(&mut set, seed + 100, 0.5);
        let name = format!("nonlocal_block {c}x{h}x{w}");
        input_case(&mut out, &name, seed, &x, |g, xv| {
            let pv = set.bind(g, false);
            block.forward(g, &pv, xv)
        })?;
        param_cases(&mut out, &name, seed, &set, &x, |g, pv, xv| block.forward(g, pv, xv))?;
    }

    let x = rand_tensor(&[2, 4, 2, 2], seed + 6);
    let (mut set, block) = se_params(4, 2, seed);
    randomize(&mut set, seed + 100, 0.5);
    input_case(&mut out, "se_block 4x2x2", seed, &x, |g, xv| {
        let pv = set.bind(g, false);
        block.forward(g, &pv, xv)
    })?;
    param_cases(&mut out, "se_block 4x2x2", seed, &set, &x, |g, pv, xv| block.forward(g, pv, xv))?;

    let x = rand_tensor(&[2, 3, 2, 2], seed + 7);
    input_case(&mut out, "leaky_relu", seed, &x, |g, xv| Ok(g.leaky_relu(xv, 0.01)))?;
    input_case(&mut out, "relu", seed, &x, |g, xv| Ok(g.relu(xv)))?;
    input_case(&mut out, "tanh", seed, &x, |g, xv| Ok(g.tanh(xv)))?;
    input_case(&mut out, "sigmoid", seed, &x, |g, xv| Ok(g.sigmoid(xv)))?;
    input_case(&mut out, "exp", seed, &x, |g, xv| Ok(g.exp(xv)))?;
    input_case(&mut out, "abs", seed, &x, |g, xv| Ok(g.abs(xv)))?;
    input_case(&mut out, "global_avg_pool", seed, &x, |g, xv| g.global_avg_pool(xv))?;
    let gate = rand_tensor(&[2, 3], seed + 8);
    input_case(&mut out, "scale_channels x", seed, &x, |g, xv| {
        let s = g.constant(gate.clone());
        g.scale_channels(xv, s)
    })?;
    input_case(&mut out, "scale_channels s", seed, &gate, |g, sv| {
        let xc = g.constant(x.clone());
        g.scale_channels(xc, sv)
    })?;
    let z = rand_tensor(&[1, 7], seed + 9);
    input_case(&mut out, "broadcast_concat x", seed, &x, |g, xv| {
        let zc = g.constant(z.clone());
        g.broadcast_concat(xv, zc)
    })?;
    input_case(&mut out, "broadcast_concat z", seed, &z, |g, zv| {
        let xc = g.constant(x.clone());
        g.broadcast_concat(xc, zv)
    })?;

    let (t, ph, gg) = (rand_tensor(&[1, 2, 2, 3], seed + 10), rand_tensor(&[1, 2, 2, 3], seed + 11), rand_tensor(&[1, 2, 2, 3], seed + 12));
    for which in 0..3 {
        let arg = [&t, &ph, &gg][which].clone();
        input_case(&mut out, &format!("attention arg{which}"), seed, &arg, |g, v| {
            let mut vs = [t.clone(), ph.clone(), gg.clone()].map(|a| g.constant(a));
            vs[which] = v;
            g.attention(vs[0], vs[1], vs[2])
        })?;
    }

    let m = rand_tensor(&[3, 5], seed + 13);
    input_case(&mut out, "l2_normalize_rows", seed, &m, |g, v| g.l2_normalize_rows(v))?;
    input_case(&mut out, "cross_entropy", seed, &m, |g, v| g.cross_entropy(v, &[0, 4, 2]))?;
    input_case(&mut out, "narrow+reshape", seed, &m, |g, v| {
        let n = g.narrow(v, 1, 3)?;
        g.reshape(n, &[9])
    })?;
    Ok(out)
}

/// Every loss term in graph form plus the exact gradient-penalty weight gradient.
pub fn loss_gradient_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    let a = rand_tensor(&[2, 3, 4, 4], seed);
    let b = rand_tensor(&[2, 3, 4, 4], seed + 1);
    input_case(&mut out, "reconstruction_loss x", seed, &a, |g, v| {
        let bc = g.constant(b.clone());
        graph_reconstruction(g, v, bc)
    })?;
    input_case(&mut out, "reconstruction_loss x_rec", seed, &b, |g, v| {
        let ac = g.constant(a.clone());
        graph_reconstruction(g, ac, v)
    })?;

    let t = rand_tensor(&[1, 6], seed + 2);
    let f = rand_tensor(&[3, 6], seed + 3);
    input_case(&mut out, "cosine_loss target", seed, &t, |g, v| {
        let fc = g.constant(f.clone());
        graph_cosine(g, v, fc)
    })?;
    input_case(&mut out, "cosine_loss fake", seed, &f, |g, v| {
        let tc = g.constant(t.clone());
        graph_cosine(g, tc, v)
    })?;

    let s = rand_tensor(&[2, 1, 2, 2], seed + 4);
    input_case(&mut out, "adversarial term", seed, &s, |g, v| Ok(graph_adversarial(g, v)))?;

    let mu = rand_tensor(&[2, 7], seed + 5);
    let lv = rand_tensor(&[2, 7], seed + 6);
    input_case(&mut out, "kl mu", seed, &mu, |g, v| {
        let l = g.constant(lv.clone());
        graph_kl(g, v, l)
    })?;
    input_case(&mut out, "kl logvar", seed, &lv, |g, v| {
        let m = g.constant(mu.clone());
        graph_kl(g, m, v)
    })?;

    // penalty through a small critic: d penalty / d weights from the tangent pass
    let cfg = ModelConfig { image_size: 8, disc_base: 2, disc_layers: 2, ..ModelConfig::desk() };
    let mut critic = Critic::<f64>::new(&cfg, seed);
    randomize(&mut critic.params, seed + 100, 0.4);
    let x = rand_tensor(&[2, 3, 8, 8], seed + 7);
    for i in 0..critic.params.len() {
        let f = |w: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
            let mut c = critic.clone();
            c.params.tensors_mut()[i] = w.clone();
            let pass = c.penalty_pass(&x, 10.0)?;
            Ok((pass.penalty, pass.param_grads[i].clone()))
        };
        let report = grad_check(f, &critic.params.tensors()[i], GRAD_TOL)?;
        out.push(GradCase { name: format!("gradient_penalty d/{}", critic.params.names()[i]), seed, report });
    }
    // and the critic score w.r.t. its input, which the penalty is built on
    let f = |xi: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
        let scores = critic.scores(xi)?;
        let per = scores.len() / 2;
        let v = scores.data().iter().sum::<f64>() / per as f64;
        Ok((v, critic.input_gradient(xi)?))
    };
    out.push(GradCase { name: "critic d/dx".into(), seed, report: grad_check(f, &x, GRAD_TOL)? });
    Ok(out)
}

pub fn conv_direct(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let g = ConvGeom::new(k, stride, pad);
    let (ho, wo) = (g.out_size(h).unwrap(), g.out_size(wd).unwrap());
    let mut y = vec![0.0; cout * ho * wo];
    for o in 0..cout {
        for i in 0..ho {
            for j in 0..wo {
                let mut s = 0.0;
                for c in 0..cin {
                    for a in 0..k {
                        for b in 0..k {
                            let (yy, xx) = ((i * stride + a) as isize - pad as isize, (j * stride + b) as isize - pad as isize);
                            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < wd {
                                s += w.data()[((o * cin + c) * k + a) * k + b] * x.data()[(c * h + yy as usize) * wd + xx as usize];
                            }
                        }
                    }
                }
                y[(o * ho + i) * wo + j] = s;
            }
        }
    }
    Tensor::new(&[cout, ho, wo], y).unwrap()
}

// ---------------------------------------------------------------------------
// small training setups

use a3gn::data::{synth_faces, TargetSet};
use a3gn::models::{Embedder, EmbedderConfig, InstanceDiscriminator, Mode};
use a3gn::training::{TrainConfig, TrainData};
use a3gn::Real;

/// Smallest architecture that still exercises every block, on 16×16 faces.
pub fn tiny_config(seed: u64, total_iters: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk(seed);
    cfg.total_iters = total_iters;
    cfg.batch_size = 2;
    cfg.model = ModelConfig {
        image_size: 16,
        gen_base: 2,
        gen_res_blocks: 1,
        enc_base: 2,
        disc_base: 2,
        disc_layers: 2,
        ..ModelConfig::desk()
    };
    cfg
}

pub fn tiny_setup<T: Real>() -> (TrainData<T>, InstanceDiscriminator<T>) {
    let ds = synth_faces(1, 3, 6, 16).unwrap().dataset;
    let target = TargetSet::from_dataset(&ds, 0, 3).unwrap();
    let pool = ds.filter(|l, _| l != 0);
    let arch = EmbedderConfig { image_size: 16, widths: vec![4, 8], embed_dim: 8 };
    let d2 = InstanceDiscriminator::new(Embedder::<T>::new(&arch, 5).unwrap(), Mode::WhiteBox);
    (TrainData::new(&pool, &target).unwrap(), d2)
}
