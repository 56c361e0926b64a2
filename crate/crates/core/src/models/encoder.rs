//! Attentional VAE encoder: residual basic blocks with optional non-local
//! blocks after the second and fourth block, pooled into `(mu, logvar)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::{ModelConfig, IMAGE_CHANNELS, LATENT_DIM};
use crate::nn_core::blocks::INIT_STD;
use crate::nn_core::{seeded_rng, Conv, Graph, Init, InstanceNorm, Linear, NonLocalBlock, ParamBuilder, ParamSet, ResidualBlock, Var};
use crate::tensor::{Real, Tensor};

/// Identity code of the target person.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode<T: Real = f32> {
    pub z: Vec<T>,
    pub mu: Option<Vec<T>>,
    pub logvar: Option<Vec<T>>,
}

impl<T: Real> LatentCode<T> {
    pub fn new(z: Vec<T>) -> Result<Self> {
        if z.len() != LATENT_DIM {
            return Err(Error::Shape(format!("latent code must have {LATENT_DIM} components, got {}", z.len())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite latent code".into()));
        }
        Ok(Self { z, mu: None, logvar: None })
    }

    pub fn zeros() -> Self {
        Self { z: vec![T::zero(); LATENT_DIM], mu: None, logvar: None }
    }

    /// `1×7` tensor for broadcasting over a batch.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[1, LATENT_DIM], self.z.clone()).unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderMode {
    /// Average `mu` over every target image.
    Inference,
    /// Encode one uniformly drawn target image with reparameterized sampling.
    Training,
}

#[derive(Clone, Debug)]
struct Stage {
    block: ResidualBlock,
    attention: Option<NonLocalBlock>,
}

#[derive(Clone, Debug)]
pub struct Encoder<T: Real = f32> {
    pub params: ParamSet<T>,
    stem: Conv,
    stem_norm: InstanceNorm,
    stages: Vec<Stage>,
    head: Linear,
    image_size: usize,
}

impl<T: Real> Encoder<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut params = ParamSet::default();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut params, &mut rng);
        let e = cfg.enc_base;
        let stem = Conv::new(&mut pb, "stem", IMAGE_CHANNELS, e, 3, 1, 1, false);
        let stem_norm = InstanceNorm::new(&mut pb, "stem_norm", e);
        // (in, out, stride, attention after)
        let plan = [(e, e, 1, false), (e, 2 * e, 2, true), (2 * e, 4 * e, 2, false), (4 * e, 4 * e, 1, true)];
        let stages = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, stride, attn))| {
                let block = ResidualBlock::with_stride(&mut pb, &format!("block{}", i + 1), cin, cout, stride);
                let attention = (attn && cfg.ablation.geometric_attention)
                    .then(|| NonLocalBlock::new(&mut pb, &format!("nonlocal{}", i + 1), cout));
                Stage { block, attention }
            })
            .collect();
        let head = Linear::new(&mut pb, "head", 4 * e, 2 * LATENT_DIM, true, Init::Normal(INIT_STD));
        Self { params, stem, stem_norm, stages, head, image_size: cfg.image_size }
    }

    /// `N×3×H×W → (mu, logvar)`, each `N×7`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], y: Var) -> Result<(Var, Var)> {
        let (_, c, h, w) = g.value(y).dims4()?;
        if c != IMAGE_CHANNELS || h != self.image_size || w != self.image_size {
            return Err(Error::Shape(format!("encoder expects 3×{0}×{0} images, got {1:?}", self.image_size, g.shape(y))));
        }
        let mut hdn = self.stem.forward(g, p, y)?;
        hdn = self.stem_norm.forward(g, p, hdn)?;
        hdn = g.relu(hdn);
        for stage in &self.stages {
            hdn = stage.block.forward(g, p, hdn)?;
            if let Some(nl) = &stage.attention {
                hdn = nl.forward(g, p, hdn)?;
            }
        }
        let pooled = g.global_avg_pool(hdn)?;
        let out = self.head.forward(g, p, pooled)?;
        let mu = g.narrow(out, 0, LATENT_DIM)?;
        let logvar = g.narrow(out, LATENT_DIM, LATENT_DIM)?;
        Ok((mu, logvar))
    }

    /// `z = mu + exp(logvar / 2) · eps` on the graph.
    pub fn reparameterize(g: &mut Graph<T>, mu: Var, logvar: Var, eps: Tensor<T>) -> Result<Var> {
        let half = g.scale(logvar, 0.5);
        let std = g.exp(half);
        let e = g.constant(eps);
        let noise = g.mul(std, e)?;
        g.add(mu, noise)
    }

    /// Latent code for a list of target images.
    pub fn encode_target(&self, targets: &[Tensor<T>], mode: EncoderMode, rng: &mut ChaCha8Rng) -> Result<LatentCode<T>> {
        if targets.is_empty() {
            return Err(Error::Config("target list is empty".into()));
        }
        match mode {
            EncoderMode::Inference => {
                let refs: Vec<&Tensor<T>> = targets.iter().collect();
                let batch = Tensor::stack(&refs)?;
                let (mu, _) = self.encode_batch(&batch)?;
                let n = T::from_usize(targets.len()).unwrap();
                let z = (0..LATENT_DIM)
                    .map(|j| (0..targets.len()).map(|i| mu.data()[i * LATENT_DIM + j]).sum::<T>() / n)
                    .collect();
                LatentCode::new(z)
            }
            EncoderMode::Training => {
                let pick = rng.random_range(0..targets.len());
                let (mu, logvar) = self.encode_batch(&Tensor::stack(&[&targets[pick]])?)?;
                let z = mu
                    .data()
                    .iter()
                    .zip(logvar.data())
                    .map(|(&m, &lv)| {
                        let eps: f64 = rng.sample(StandardNormal);
                        m + (lv * T::from_f64c(0.5)).exp() * T::from_f64c(eps)
                    })
                    .collect();
                let mut code = LatentCode::new(z)?;
                code.mu = Some(mu.into_data());
                code.logvar = Some(logvar.into_data());
                Ok(code)
            }
        }
    }

    /// `(mu, logvar)` for a batch, without recording gradients.
    pub fn encode_batch(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let y = g.constant(batch.clone());
        let (mu, logvar) = self.forward(&mut g, &p, y)?;
        Ok((g.value(mu).clone(), g.value(logvar).clone()))
    }
}
