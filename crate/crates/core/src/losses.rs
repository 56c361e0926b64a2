//! Objective terms: the reference log-likelihood adversarial loss, the
//! Wasserstein critic objective with gradient penalty, the L1 reconstruction
//! loss, the cosine loss and the composite generator objective.
//!
//! Scalar versions operate on finished tensors; the `graph_*` versions build
//! the same terms on a [`Graph`] for training.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::EmbeddingVector;
use crate::nn_core::{seeded_rng, Graph, Var};
use crate::tensor::{Real, Tensor};

/// Floor applied inside both logarithms of [`adversarial_loss_reference`].
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_cos: f64,
    pub lambda_gp: f64,
    pub lambda_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_rec: 10.0, lambda_cos: 10.0, lambda_gp: 10.0, lambda_kl: 0.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_rec, self.lambda_cos, self.lambda_gp, self.lambda_kl];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Anything that can report the per-sample gradient of its mean patch score.
pub trait InputGradient<T: Real> {
    /// `∇ₓ mean(D(x_n))` for every sample of an `N×C×H×W` batch.
    fn input_gradient(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Input(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// `mean log σ(real) + mean log(1 − σ(fake))` over patches. Not used in training.
pub fn adversarial_loss_reference<T: Real>(real_scores: &Tensor<T>, fake_scores: &Tensor<T>) -> f64 {
    let mut clamped = 0usize;
    let mut log_floor = |p: f64| {
        if p < LOG_FLOOR {
            clamped += 1;
            LOG_FLOOR.ln()
        } else {
            p.ln()
        }
    };
    let sig = |s: f64| 1.0 / (1.0 + (-s).exp());
    let real: f64 = real_scores.data().iter().map(|s| log_floor(sig(s.to_f64c()))).sum::<f64>() / real_scores.len() as f64;
    let fake: f64 = fake_scores.data().iter().map(|s| log_floor(1.0 - sig(s.to_f64c()))).sum::<f64>() / fake_scores.len() as f64;
    if clamped > 0 {
        warn!("adversarial loss: {clamped} probabilities clamped at {LOG_FLOOR:e}");
    }
    real + fake
}

/// `x' = α·x_real + (1 − α)·x_fake` with one `α ~ U(0, 1)` per sample.
pub fn interpolate<T: Real, R: Rng>(x_real: &Tensor<T>, x_fake: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
    same_shape(x_real, x_fake, "gradient penalty")?;
    let n = x_real.shape()[0];
    let per = x_real.len() / n;
    let mut out = x_fake.clone();
    for i in 0..n {
        let a = T::from_f64c(rng.random::<f64>());
        let r = &x_real.data()[i * per..(i + 1) * per];
        for (o, &rv) in out.data_mut()[i * per..(i + 1) * per].iter_mut().zip(r) {
            *o = a * rv + (T::one() - a) * *o;
        }
    }
    Ok(out)
}

/// `λ · mean_n (‖g_n‖₂ − 1)²` from a batch of input gradients.
pub fn penalty_from_gradient<T: Real>(grad: &Tensor<T>, lambda: f64) -> Result<f64> {
    let n = grad.shape()[0];
    let per = grad.len() / n;
    let mut acc = 0.0;
    for s in grad.data().chunks(per) {
        let nr = s.iter().map(|v| v.to_f64c().powi(2)).sum::<f64>().sqrt();
        if !nr.is_finite() {
            return Err(Error::Numerical("non-finite critic gradient in penalty".into()));
        }
        acc += (nr - 1.0) * (nr - 1.0);
    }
    Ok(lambda * acc / n as f64)
}

/// Gradient penalty at random interpolates between real and generated images.
pub fn gradient_penalty<T: Real, C: InputGradient<T>>(
    d1: &C,
    x_real: &Tensor<T>,
    x_fake: &Tensor<T>,
    seed: u64,
    lambda: f64,
) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let x = interpolate(x_real, x_fake, &mut rng)?;
    penalty_from_gradient(&d1.input_gradient(&x)?, lambda)
}

/// `(mean fake − mean real + gp, −mean fake)`: critic loss and generator adversarial term.
pub fn wgan_objective<T: Real>(real_scores: &Tensor<T>, fake_scores: &Tensor<T>, gp: f64) -> (f64, f64) {
    let real = real_scores.mean().to_f64c();
    let fake = fake_scores.mean().to_f64c();
    (fake - real + gp, -fake)
}

/// Mean absolute difference over all elements.
pub fn reconstruction_loss<T: Real>(x: &Tensor<T>, x_rec: &Tensor<T>) -> Result<f64> {
    same_shape(x, x_rec, "reconstruction loss")?;
    let s: f64 = x.data().iter().zip(x_rec.data()).map(|(a, b)| (a.to_f64c() - b.to_f64c()).abs()).sum();
    Ok(s / x.len() as f64)
}

/// `1 − cos(e_target, e_fake)`.
pub fn cosine_loss(e_target: &EmbeddingVector, e_fake: &EmbeddingVector) -> Result<f64> {
    Ok(1.0 - crate::evaluation::cosine_similarity(e_target, e_fake)?)
}

/// KL divergence of `N(mu, exp(logvar))` from `N(0, 1)`, averaged over rows.
pub fn kl_divergence<T: Real>(mu: &Tensor<T>, logvar: &Tensor<T>) -> Result<f64> {
    same_shape(mu, logvar, "KL term")?;
    let rows = mu.shape()[0];
    let s: f64 = mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(m, lv)| {
            let (m, lv) = (m.to_f64c(), lv.to_f64c());
            lv.exp() + m * m - 1.0 - lv
        })
        .sum();
    Ok(0.5 * s / rows as f64)
}

/// `adv + λ_rec·rec + λ_cos·cos + λ_kl·kl`.
pub fn generator_objective(adv_term: f64, rec: f64, cos: f64, kl: f64, w: &LossWeights) -> f64 {
    adv_term + w.lambda_rec * rec + w.lambda_cos * cos + w.lambda_kl * kl
}

/// Mean |x − x_rec| on the graph.
pub fn graph_reconstruction<T: Real>(g: &mut Graph<T>, x: Var, x_rec: Var) -> Result<Var> {
    let d = g.sub(x, x_rec)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

/// Mean over rows of `1 − cos(target, fake_n)`; `target` is `1×d`, `fake` is `N×d`.
pub fn graph_cosine<T: Real>(g: &mut Graph<T>, target: Var, fake: Var) -> Result<Var> {
    let t = g.l2_normalize_rows(target)?;
    let f = g.l2_normalize_rows(fake)?;
    let cos = g.linear(f, t, None)?;
    let m = g.mean(cos);
    let one = g.constant(Tensor::scalar(T::one()));
    g.sub(one, m)
}

/// Negated mean critic score on the graph.
pub fn graph_adversarial<T: Real>(g: &mut Graph<T>, fake_scores: Var) -> Var {
    let m = g.mean(fake_scores);
    g.scale(m, -1.0)
}

/// KL term on the graph, matching [`kl_divergence`].
pub fn graph_kl<T: Real>(g: &mut Graph<T>, mu: Var, logvar: Var) -> Result<Var> {
    let rows = g.shape(mu)[0] as f64;
    let cols = g.value(mu).len() as f64 / rows;
    let var = g.exp(logvar);
    let m2 = g.mul(mu, mu)?;
    let a = g.add(var, m2)?;
    let b = g.sub(a, logvar)?;
    // mean over elements times cols gives the per-row sum; the −1 per element is a constant
    let s = g.mean(b);
    let s = g.scale(s, 0.5 * cols);
    let c = g.constant(Tensor::scalar(T::from_f64c(0.5 * cols)));
    g.sub(s, c)
}
