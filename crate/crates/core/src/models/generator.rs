//! Encoder–trunk–decoder image generator. G1 takes the image concatenated with
//! the broadcast latent code (10 channels); G2 shares the architecture with a
//! 3-channel stem and no latent input.

use crate::error::{Error, Result};
use crate::models::{LatentCode, ModelConfig, IMAGE_CHANNELS, LATENT_DIM};
use crate::nn_core::{seeded_rng, Conv, Graph, InstanceNorm, ParamBuilder, ParamSet, ResidualBlock, SeBlock, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
struct Down {
    conv: Conv,
    norm: InstanceNorm,
    se: Option<SeBlock>,
}

#[derive(Clone, Debug)]
struct Up {
    conv: Conv,
    norm: InstanceNorm,
}

#[derive(Clone, Debug)]
pub struct Generator<T: Real = f32> {
    pub params: ParamSet<T>,
    conditional: bool,
    stem: Conv,
    stem_norm: InstanceNorm,
    down: Vec<Down>,
    trunk: Vec<ResidualBlock>,
    up: Vec<Up>,
    head: Conv,
    image_size: usize,
}

impl<T: Real> Generator<T> {
    /// G1: conditioned on a latent code, with SE blocks when channel attention is enabled.
    pub fn attentional(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, seed, true, cfg.ablation.channel_attention)
    }

    /// G2: unconditional reconstruction generator.
    pub fn reconstruction(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, seed, false, false)
    }

    fn build(cfg: &ModelConfig, seed: u64, conditional: bool, se: bool) -> Result<Self> {
        let mut params = ParamSet::default();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut params, &mut rng);
        let b = cfg.gen_base;
        let k = cfg.gen_stem_kernel;
        let cin = if conditional { IMAGE_CHANNELS + LATENT_DIM } else { IMAGE_CHANNELS };
        let stem = Conv::new(&mut pb, "stem", cin, b, k, 1, k / 2, false);
        let stem_norm = InstanceNorm::new(&mut pb, "stem_norm", b);
        let mut down = Vec::new();
        for (i, (ci, co)) in [(b, 2 * b), (2 * b, 4 * b)].into_iter().enumerate() {
            let mut s = pb.scope(&format!("down{}", i + 1));
            let conv = Conv::new(&mut s, "conv", ci, co, 4, 2, 1, false);
            let norm = InstanceNorm::new(&mut s, "norm", co);
            let se = if se { Some(SeBlock::new(&mut s, "se", co, cfg.se_reduction)?) } else { None };
            down.push(Down { conv, norm, se });
        }
        let trunk = (0..cfg.gen_res_blocks)
            .map(|i| ResidualBlock::new(&mut pb, &format!("res{}", i + 1), 4 * b))
            .collect();
        let mut up = Vec::new();
        for (i, (ci, co)) in [(4 * b, 2 * b), (2 * b, b)].into_iter().enumerate() {
            let mut s = pb.scope(&format!("up{}", i + 1));
            let conv = Conv::transposed(&mut s, "conv", ci, co, 4, 2, 1, false);
            let norm = InstanceNorm::new(&mut s, "norm", co);
            up.push(Up { conv, norm });
        }
        let head = Conv::new(&mut pb, "head", b, IMAGE_CHANNELS, k, 1, k / 2, true);
        Ok(Self { params, conditional, stem, stem_norm, down, trunk, up, head, image_size: cfg.image_size })
    }

    pub fn is_conditional(&self) -> bool {
        self.conditional
    }

    /// `N×3×H×W` (plus a `1×7` or `N×7` latent for G1) → `N×3×H×W` in `[-1, 1]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var, z: Option<Var>) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != IMAGE_CHANNELS || h != self.image_size || w != self.image_size {
            return Err(Error::Shape(format!("generator expects 3×{0}×{0} images, got {1:?}", self.image_size, g.shape(x))));
        }
        let input = match (self.conditional, z) {
            (true, Some(z)) => g.broadcast_concat(x, z)?,
            (false, None) => x,
            (true, None) => return Err(Error::Input("conditional generator needs a latent code".into())),
            (false, Some(_)) => return Err(Error::Input("reconstruction generator takes no latent code".into())),
        };
        let mut hdn = self.stem.forward(g, p, input)?;
        hdn = self.stem_norm.forward(g, p, hdn)?;
        hdn = g.relu(hdn);
        for d in &self.down {
            hdn = d.conv.forward(g, p, hdn)?;
            hdn = d.norm.forward(g, p, hdn)?;
            hdn = g.relu(hdn);
            if let Some(se) = &d.se {
                hdn = se.forward(g, p, hdn)?;
            }
        }
        for r in &self.trunk {
            hdn = r.forward(g, p, hdn)?;
        }
        for u in &self.up {
            hdn = u.conv.forward(g, p, hdn)?;
            hdn = u.norm.forward(g, p, hdn)?;
            hdn = g.relu(hdn);
        }
        let out = self.head.forward(g, p, hdn)?;
        Ok(g.tanh(out))
    }

    /// Gradient-free forward pass over a batch.
    pub fn run(&self, x: &Tensor<T>, z: Option<&LatentCode<T>>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let zv = z.map(|z| g.constant(z.to_tensor()));
        let y = self.forward(&mut g, &p, xv, zv)?;
        let out = g.value(y).clone();
        if !out.all_finite() {
            return Err(Error::Numerical("generator produced non-finite output".into()));
        }
        Ok(out)
    }
}

/// Appends the latent code as constant channels: `3×H×W → 10×H×W`.
pub fn broadcast_concat<T: Real>(x: &Tensor<T>, z: &LatentCode<T>) -> Result<Tensor<T>> {
    let shape = x.shape().to_vec();
    if shape.len() != 3 || shape[0] != IMAGE_CHANNELS {
        return Err(Error::Shape(format!("expected a 3×H×W image, got {shape:?}")));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone().reshape(&[1, shape[0], shape[1], shape[2]])?);
    let zv = g.constant(z.to_tensor());
    let y = g.broadcast_concat(xv, zv)?;
    g.value(y).clone().reshape(&[IMAGE_CHANNELS + LATENT_DIM, shape[1], shape[2]])
}
