//! Face-embedding networks used as the frozen instance discriminator, and the
//! softmax-classification training that produces them.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::IdentityDataset;
use crate::error::{Error, Result};
use crate::models::IMAGE_CHANNELS;
use crate::nn_core::{seeded_rng, Conv, Graph, Init, Linear, ParamBuilder, ParamSet, Var};
use crate::models::Checkpoint;
use crate::optim::Adam;
use sha2::{Digest, Sha256};
use crate::tensor::{Real, Tensor};

/// Feature vector compared by cosine similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn new(e: Vec<f64>) -> Result<Self> {
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite embedding".into()));
        }
        if e.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateEmbedding("embedding has zero norm".into()));
        }
        Ok(Self(e))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub image_size: usize,
    /// Conv widths; the first layer has stride 1, the rest stride 2.
    pub widths: Vec<usize>,
    pub embed_dim: usize,
}

impl EmbedderConfig {
    /// White-box reference embedder.
    pub fn desk() -> Self {
        Self { image_size: 32, widths: vec![16, 32, 64, 64], embed_dim: 64 }
    }

    /// A deeper, differently shaped network for transfer (black-box) tests.
    pub fn desk_transfer() -> Self {
        Self { image_size: 32, widths: vec![12, 24, 48, 96, 96], embed_dim: 48 }
    }
}

#[derive(Clone, Debug)]
pub struct Embedder<T: Real = f32> {
    pub params: ParamSet<T>,
    pub config: EmbedderConfig,
    convs: Vec<Conv>,
    fc: Linear,
}

impl<T: Real> Embedder<T> {
    pub fn new(config: &EmbedderConfig, seed: u64) -> Result<Self> {
        if config.widths.is_empty() || config.embed_dim == 0 {
            return Err(Error::Config("embedder needs at least one conv layer and a positive width".into()));
        }
        let mut params = ParamSet::default();
        let mut rng = seeded_rng(seed);
        let mut pb = ParamBuilder::new(&mut params, &mut rng);
        let mut cin = IMAGE_CHANNELS;
        let mut side = config.image_size;
        let mut convs = Vec::new();
        for (i, &w) in config.widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            // He-style scale keeps ReLU activations from vanishing at init
            let std = (2.0 / (cin * 9) as f64).sqrt();
            convs.push(Conv::build(&mut pb, &format!("conv{}", i + 1), cin, w, 3, stride, 1, true, false, Init::Normal(std)));
            side = convs.last().unwrap().geom.out_size(side).unwrap_or(0);
            cin = w;
        }
        if side == 0 {
            return Err(Error::Config("embedder downsamples the image to nothing".into()));
        }
        let flat = cin * side * side;
        let fc = Linear::new(&mut pb, "fc", flat, config.embed_dim, true, Init::Normal((1.0 / flat as f64).sqrt()));
        Ok(Self { params, config: config.clone(), convs, fc })
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let (n, c, h, w) = g.value(x).dims4()?;
        if c != IMAGE_CHANNELS || h != self.config.image_size || w != self.config.image_size {
            return Err(Error::Shape(format!("embedder expects 3×{0}×{0} images, got {1:?}", self.config.image_size, g.shape(x))));
        }
        let mut hdn = x;
        for conv in &self.convs {
            hdn = conv.forward(g, p, hdn)?;
            hdn = g.relu(hdn);
        }
        let flat = g.value(hdn).len() / n;
        let hdn = g.reshape(hdn, &[n, flat])?;
        self.fc.forward(g, p, hdn)
    }

    pub fn cast<U: Real>(&self) -> Embedder<U> {
        Embedder { params: self.params.cast(), config: self.config.clone(), convs: self.convs.clone(), fc: self.fc.clone() }
    }

    /// Container holding the weights, with the architecture in the metadata.
    pub fn to_checkpoint(&self, seed: u64) -> Result<Checkpoint<T>> {
        let arch = serde_json::to_value(&self.config)?;
        let hash = hex::encode(Sha256::digest(arch.to_string().as_bytes()));
        let mut c = Checkpoint::new(seed, hash, 0);
        c.insert("embedder", &self.params);
        c.meta = serde_json::json!({ "embedder": arch });
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint<T>) -> Result<Self> {
        let config: EmbedderConfig = serde_json::from_value(c.meta["embedder"].clone())
            .map_err(|e| Error::Format(format!("checkpoint does not describe an embedder: {e}")))?;
        let mut e = Self::new(&config, c.seed)?;
        c.restore_into("embedder", &mut e.params)?;
        Ok(e)
    }

    /// `N×d` embeddings without gradients.
    pub fn embed_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv)?;
        Ok(g.value(y).clone())
    }
}

/// Whether gradients may flow through the embedder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "white-box")]
    WhiteBox,
    #[serde(rename = "black-box")]
    BlackBox,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::WhiteBox => "white-box",
            Mode::BlackBox => "black-box",
        }
    }
}

/// A frozen embedder together with its access mode.
#[derive(Clone, Debug)]
pub struct InstanceDiscriminator<T: Real = f32> {
    pub embedder: Embedder<T>,
    pub mode: Mode,
}

impl<T: Real> InstanceDiscriminator<T> {
    pub fn new(embedder: Embedder<T>, mode: Mode) -> Self {
        Self { embedder, mode }
    }

    pub fn embed_dim(&self) -> usize {
        self.embedder.config.embed_dim
    }

    /// One embedding per image of an `N×3×H×W` batch (or a single `3×H×W` image).
    pub fn embed(&self, x: &Tensor<T>) -> Result<Vec<EmbeddingVector>> {
        let batch = if x.shape().len() == 3 { Tensor::stack(&[x])? } else { x.clone() };
        let e = self.embedder.embed_batch(&batch)?;
        e.data().chunks(self.embed_dim()).map(|row| EmbeddingVector::new(row.iter().map(|v| v.to_f64c()).collect())).collect()
    }

    /// Places the embedder on a graph with frozen parameters so gradients reach `x`.
    pub fn forward_differentiable(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        if self.mode == Mode::BlackBox {
            return Err(Error::ModeViolation("gradients requested from a black-box embedder".into()));
        }
        let p = self.embedder.params.bind(g, false);
        self.embedder.forward(g, &p, x)
    }

    /// Gradient of `Σ_n ⟨upstream_n, embed(x_n)⟩` with respect to `x`.
    pub fn input_gradient(&self, x: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.input(x.clone(), true);
        let y = self.forward_differentiable(&mut g, xv)?;
        g.backward_with(y, upstream.clone())?;
        Ok(g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedderTrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Scale of the normalized-softmax logits.
    pub logit_scale: f64,
    /// Images per identity held out for verification pairs.
    pub holdout_per_identity: usize,
}

impl Default for EmbedderTrainConfig {
    fn default() -> Self {
        Self { seed: 7, epochs: 24, batch_size: 32, lr: 1e-3, logit_scale: 16.0, holdout_per_identity: 10 }
    }
}

/// Same/different verification on held-out pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub pair_accuracy: f64,
    pub threshold: f64,
    pub equal_error_rate: f64,
    pub n_pairs: usize,
    pub n_same: usize,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

/// Trains an embedder as a softmax identity classifier over L2-normalized
/// features and reports held-out pair verification at the equal-error threshold.
pub fn train_reference_embedder(
    ds: &IdentityDataset,
    arch: &EmbedderConfig,
    cfg: &EmbedderTrainConfig,
) -> Result<(InstanceDiscriminator<f32>, VerificationSummary)> {
    let k = ds.num_identities();
    if k < 2 {
        return Err(Error::Config("reference embedder needs at least 2 identities".into()));
    }
    if ds.image_size != arch.image_size {
        return Err(Error::Config(format!("dataset images are {0}×{0}, embedder expects {1}×{1}", ds.image_size, arch.image_size)));
    }
    let per_id: Vec<usize> = (0..k).map(|l| ds.of_identity(l).len()).collect();
    let hold = cfg.holdout_per_identity;
    let train = ds.filter(|l, i| i + hold < per_id[l]);
    let held = ds.filter(|l, i| i + hold >= per_id[l]);
    if train.is_empty() {
        return Err(Error::Config("no training images left after the hold-out split".into()));
    }

    let mut embedder = Embedder::<f32>::new(arch, cfg.seed)?;
    let mut head = ParamSet::<f32>::default();
    let mut rng = seeded_rng(cfg.seed ^ 0x5eed);
    {
        let mut pb = ParamBuilder::new(&mut head, &mut rng);
        pb.param("classes", &[k, arch.embed_dim], Init::Normal(1.0));
    }
    let mut opt_e = Adam::new(&embedder.params, 0.9, 0.999);
    let mut opt_h = Adam::new(&head, 0.9, 0.999);
    let labels = train.labels();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut final_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x = train.batch(chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let pe = embedder.params.bind(&mut g, true);
            let ph = head.bind(&mut g, true);
            let xv = g.constant(x);
            let e = embedder.forward(&mut g, &pe, xv)?;
            let en = g.l2_normalize_rows(e)?;
            let wn = g.l2_normalize_rows(ph[0])?;
            let logits = g.linear(en, wn, None)?;
            let logits = g.scale(logits, cfg.logit_scale);
            let loss = g.cross_entropy(logits, &y)?;
            final_loss = g.value(loss).item() as f64;
            if !final_loss.is_finite() {
                return Err(Error::Numerical("embedder loss became non-finite".into()));
            }
            g.backward(loss)?;
            let ge = embedder.params.grads(&g, &pe);
            let gh = head.grads(&g, &ph);
            opt_e.update(&mut embedder.params, &ge, cfg.lr);
            opt_h.update(&mut head, &gh, cfg.lr);
        }
    }

    let d2 = InstanceDiscriminator::new(embedder, Mode::WhiteBox);
    let train_accuracy = classification_accuracy(&d2, &head, &train)?;
    let scored = if held.is_empty() { &train } else { &held };
    let mut summary = verification(&d2, scored)?;
    summary.train_accuracy = train_accuracy;
    summary.final_loss = final_loss;
    Ok((d2, summary))
}

fn embed_all(d2: &InstanceDiscriminator<f32>, ds: &IdentityDataset) -> Result<Vec<EmbeddingVector>> {
    let mut out = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(64) {
        out.extend(d2.embed(&ds.batch(chunk)?)?);
    }
    Ok(out)
}

fn classification_accuracy(d2: &InstanceDiscriminator<f32>, head: &ParamSet<f32>, ds: &IdentityDataset) -> Result<f64> {
    let classes = &head.tensors()[0];
    let d = classes.shape()[1];
    let centers: Vec<EmbeddingVector> = classes
        .data()
        .chunks(d)
        .map(|r| EmbeddingVector::new(r.iter().map(|&v| v as f64).collect()))
        .collect::<Result<_>>()?;
    let embs = embed_all(d2, ds)?;
    let mut correct = 0;
    for (e, it) in embs.iter().zip(&ds.items) {
        let best = centers
            .iter()
            .enumerate()
            .map(|(i, c)| (i, crate::evaluation::cosine_similarity(e, c).unwrap_or(-1.0)))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        if best.0 == it.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// All-pairs verification over a dataset at the threshold where false-accept
/// and false-reject rates are closest.
pub fn verification(d2: &InstanceDiscriminator<f32>, ds: &IdentityDataset) -> Result<VerificationSummary> {
    let embs = embed_all(d2, ds)?;
    let mut scores = Vec::new();
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            let s = crate::evaluation::cosine_similarity(&embs[i], &embs[j])?;
            scores.push((s, ds.items[i].label == ds.items[j].label));
        }
    }
    if scores.is_empty() {
        return Err(Error::Config("verification needs at least two images".into()));
    }
    let n_same = scores.iter().filter(|s| s.1).count();
    let n_diff = scores.len() - n_same;
    if n_same == 0 || n_diff == 0 {
        return Err(Error::Config("verification needs both same and different pairs".into()));
    }
    scores.sort_by(|a, b| a.0.total_cmp(&b.0));
    // threshold t accepts every score >= t; sweep t over the sorted scores
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    let mut rejected_same = 0usize;
    let mut rejected_diff = 0usize;
    for (i, &(s, same)) in scores.iter().enumerate() {
        if i == 0 || s > scores[i - 1].0 {
            let frr = rejected_same as f64 / n_same as f64;
            let far = (n_diff - rejected_diff) as f64 / n_diff as f64;
            let acc = (n_same - rejected_same + rejected_diff) as f64 / scores.len() as f64;
            let gap = (far - frr).abs();
            if gap < best.0 {
                best = (gap, s, (far + frr) / 2.0, acc);
            }
        }
        if same {
            rejected_same += 1;
        } else {
            rejected_diff += 1;
        }
    }
    Ok(VerificationSummary {
        pair_accuracy: best.3,
        threshold: best.1,
        equal_error_rate: best.2,
        n_pairs: scores.len(),
        n_same,
        train_accuracy: f64::NAN,
        final_loss: f64::NAN,
    })
}
