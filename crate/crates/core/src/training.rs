//! Three-player training: per cycle, `n_critic` critic updates, one update of
//! E, G1 and G2 on the full generator objective, and one update of E and G1 on
//! the cosine loss alone. The instance discriminator stays frozen throughout.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{IdentityDataset, TargetSet};
use crate::error::{Error, Result};
use crate::losses::{self, interpolate, LossWeights};
use crate::models::{Checkpoint, Critic, Encoder, Generator, InstanceDiscriminator, Mode, ModelConfig, LATENT_DIM};
use crate::nn_core::{seeded_rng, Graph, ParamSet};
use crate::optim::Adam;
use crate::tensor::{Real, Tensor};

pub const PARAMS_FILE: &str = "params.a3gn";
pub const META_FILE: &str = "meta.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const TRACE_HEADER: [&str; 6] = ["iter", "loss_d1", "loss_adv", "loss_rec", "loss_cos", "lr"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of cycles `T`; the learning rate starts decaying after `T/2`.
    pub total_iters: u64,
    pub batch_size: usize,
    pub lr0: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub n_critic: usize,
    pub weights: LossWeights,
    pub model: ModelConfig,
    pub seed: u64,
    /// Cycles between checkpoints; `None` means `max(T/10, 100)`.
    pub checkpoint_every: Option<u64>,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            total_iters: 5000,
            batch_size: 16,
            lr0: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            n_critic: 5,
            weights: LossWeights::default(),
            model: ModelConfig::desk(),
            seed,
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 || self.total_iters % 2 != 0 {
            return Err(Error::Config(format!("total_iters must be positive and even, got {}", self.total_iters)));
        }
        if self.n_critic == 0 || self.batch_size == 0 {
            return Err(Error::Config("n_critic and batch_size must be at least 1".into()));
        }
        if !(self.lr0 > 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("lr0 must be positive and Adam betas in [0, 1)".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        self.weights.validate()
    }

    pub fn checkpoint_interval(&self) -> u64 {
        self.checkpoint_every.unwrap_or((self.total_iters / 10).max(100))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// `lr0` up to and including `T/2`, then linear decay to 0 at `T`.
pub fn lr_schedule(iter: u64, cfg: &TrainConfig) -> Result<f64> {
    let t = cfg.total_iters;
    if iter > t {
        return Err(Error::Input(format!("iteration {iter} outside [0, {t}]")));
    }
    let half = t / 2;
    if iter <= half {
        return Ok(cfg.lr0);
    }
    Ok(cfg.lr0 * (t - iter) as f64 / (t - half) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateCounters {
    pub critic: u64,
    pub generator: u64,
    pub cosine: u64,
}

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: u64,
    pub loss_d1: f64,
    pub loss_adv: f64,
    pub loss_rec: f64,
    pub loss_cos: f64,
    pub lr: f64,
}

impl TraceRow {
    pub fn values(&self) -> [f64; 5] {
        [self.loss_d1, self.loss_adv, self.loss_rec, self.loss_cos, self.lr]
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState<T: Real = f32> {
    pub iteration: u64,
    pub encoder: Encoder<T>,
    pub g1: Generator<T>,
    pub g2: Generator<T>,
    pub d1: Critic<T>,
    pub opt_encoder: Adam<T>,
    pub opt_g1: Adam<T>,
    pub opt_g2: Adam<T>,
    pub opt_d1: Adam<T>,
    pub rng: ChaCha8Rng,
    pub counters: UpdateCounters,
    pub trace: Vec<TraceRow>,
}

/// Per-network initialization seeds derived from the run seed.
pub fn network_seeds(seed: u64) -> [u64; 5] {
    let mix = |k: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
    [mix(1), mix(2), mix(3), mix(4), mix(5)]
}

const NETS: [&str; 4] = ["encoder", "g1", "g2", "d1"];

impl<T: Real> TrainState<T> {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let [se, s1, s2, sd, sr] = network_seeds(cfg.seed);
        let encoder = Encoder::new(&cfg.model, se);
        let g1 = Generator::attentional(&cfg.model, s1)?;
        let g2 = Generator::reconstruction(&cfg.model, s2)?;
        let d1 = Critic::new(&cfg.model, sd);
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        Ok(Self {
            iteration: 0,
            opt_encoder: Adam::new(&encoder.params, b1, b2),
            opt_g1: Adam::new(&g1.params, b1, b2),
            opt_g2: Adam::new(&g2.params, b1, b2),
            opt_d1: Adam::new(&d1.params, b1, b2),
            encoder,
            g1,
            g2,
            d1,
            rng: seeded_rng(sr),
            counters: UpdateCounters::default(),
            trace: Vec::new(),
        })
    }

    fn nets(&self) -> [(&ParamSet<T>, &Adam<T>); 4] {
        [
            (&self.encoder.params, &self.opt_encoder),
            (&self.g1.params, &self.opt_g1),
            (&self.g2.params, &self.opt_g2),
            (&self.d1.params, &self.opt_d1),
        ]
    }

    /// Digest over every network's parameters.
    pub fn params_digest(&self) -> String {
        let mut h = Sha256::new();
        for (p, _) in self.nets() {
            h.update(p.digest().as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Result<Checkpoint<T>> {
        let mut c = Checkpoint::new(cfg.seed, cfg.hash(), self.iteration);
        let mut steps = serde_json::Map::new();
        for (name, (p, opt)) in NETS.iter().zip(self.nets()) {
            c.insert(name, p);
            let (m, v) = opt.moments(p);
            c.insert(&format!("adam.{name}.m"), &m);
            c.insert(&format!("adam.{name}.v"), &v);
            steps.insert(name.to_string(), opt.step.into());
        }
        c.meta = json!({
            "config": cfg,
            "adam_steps": steps,
            "counters": self.counters,
            "rng": serde_json::to_value(&self.rng)?,
        });
        Ok(c)
    }

    /// Rebuilds a state from a checkpoint written under the same config.
    /// The trace is not stored in the container; see [`read_trace`].
    pub fn from_checkpoint(c: &Checkpoint<T>, cfg: &TrainConfig) -> Result<Self> {
        if c.config_hash != cfg.hash() {
            return Err(Error::Config("checkpoint was written under a different training config".into()));
        }
        let mut s = Self::new(cfg)?;
        s.iteration = c.iteration;
        let steps = &c.meta["adam_steps"];
        for name in NETS {
            let step = steps[name].as_u64().ok_or_else(|| Error::Format(format!("missing Adam step for {name}")))?;
            let (params, opt) = match name {
                "encoder" => (&mut s.encoder.params, &mut s.opt_encoder),
                "g1" => (&mut s.g1.params, &mut s.opt_g1),
                "g2" => (&mut s.g2.params, &mut s.opt_g2),
                _ => (&mut s.d1.params, &mut s.opt_d1),
            };
            c.restore_into(name, params)?;
            let mut m = params.clone();
            let mut v = params.clone();
            c.restore_into(&format!("adam.{name}.m"), &mut m)?;
            c.restore_into(&format!("adam.{name}.v"), &mut v)?;
            opt.restore(step, m, v);
        }
        s.counters = serde_json::from_value(c.meta["counters"].clone())?;
        s.rng = serde_json::from_value(c.meta["rng"].clone())?;
        Ok(s)
    }
}

/// Training images and the target identity's images.
#[derive(Clone, Debug)]
pub struct TrainData<T: Real = f32> {
    pub pool: Vec<Tensor<T>>,
    pub targets: Vec<Tensor<T>>,
}

impl<T: Real> TrainData<T> {
    pub fn new(pool: &IdentityDataset, target: &TargetSet) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        if target.images.is_empty() {
            return Err(Error::Config("target set has no images".into()));
        }
        Ok(Self {
            pool: pool.items.iter().map(|i| i.image.cast()).collect(),
            targets: target.images.iter().map(|t| t.cast()).collect(),
        })
    }

    fn batch(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = (0..n).map(|_| &self.pool[rng.random_range(0..self.pool.len())]).collect();
        Tensor::stack(&refs)
    }
}

fn normal_tensor<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let v = (0..n).map(|_| T::from_f64c(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(shape, v).unwrap()
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} is {v}")))
    }
}

/// Runs one cycle and appends its trace row.
pub fn train_cycle<T: Real>(
    state: &mut TrainState<T>,
    data: &TrainData<T>,
    d2: &InstanceDiscriminator<T>,
    cfg: &TrainConfig,
) -> Result<TraceRow> {
    if d2.mode != Mode::WhiteBox {
        return Err(Error::ModeViolation("training needs gradients through the instance discriminator".into()));
    }
    let iter = state.iteration;
    let ctx = |e: Error| e.context(format!("iteration {iter}"));
    let lr = lr_schedule(iter, cfg)?;
    let n = cfg.batch_size;
    let w = cfg.weights;

    // one target image per cycle supplies both the latent code and the embedding target
    let pick = state.rng.random_range(0..data.targets.len());
    let y = Tensor::stack(&[&data.targets[pick]])?;
    let e_target = d2.embedder.embed_batch(&y)?;
    let (mu_y, logvar_y) = state.encoder.encode_batch(&y)?;
    let sample_z = |rng: &mut ChaCha8Rng| -> Tensor<T> {
        let eps = normal_tensor::<T>(&[1, LATENT_DIM], rng);
        let z = mu_y
            .data()
            .iter()
            .zip(logvar_y.data())
            .zip(eps.data())
            .map(|((&m, &lv), &e)| m + (lv * T::from_f64c(0.5)).exp() * e)
            .collect();
        Tensor::new(&[1, LATENT_DIM], z).unwrap()
    };

    // G1 is fixed during the critic steps, so one batch of fakes serves all of them
    let fake = {
        let x = data.batch(n, &mut state.rng)?;
        let z = sample_z(&mut state.rng);
        let mut g = Graph::new();
        let p = state.g1.params.bind(&mut g, false);
        let xv = g.constant(x);
        let zv = g.constant(z);
        let f = state.g1.forward(&mut g, &p, xv, Some(zv))?;
        g.value(f).clone()
    };
    let mut loss_d1 = 0.0;
    for _ in 0..cfg.n_critic {
        let x = data.batch(n, &mut state.rng)?;
        let mut g = Graph::new();
        let p = state.d1.params.bind(&mut g, true);
        let rv = g.constant(x.clone());
        let fv = g.constant(fake.clone());
        let sr = state.d1.forward(&mut g, &p, rv)?;
        let sf = state.d1.forward(&mut g, &p, fv)?;
        let mr = g.mean(sr);
        let mf = g.mean(sf);
        let wloss = g.sub(mf, mr)?;
        g.backward(wloss)?;
        let mut grads = state.d1.params.grads(&g, &p);
        let xi = interpolate(&x, &fake, &mut state.rng)?;
        let pen = state.d1.penalty_pass(&xi, w.lambda_gp).map_err(ctx)?;
        for (gr, pg) in grads.iter_mut().zip(&pen.param_grads) {
            gr.add_assign(pg);
        }
        loss_d1 = finite(g.value(wloss).item().to_f64c() + pen.penalty.to_f64c(), "critic loss").map_err(ctx)?;
        state.opt_d1.update(&mut state.d1.params, &grads, lr);
        state.counters.critic += 1;
    }

    // full objective: E, G1, G2
    let (loss_adv, loss_rec, loss_cos) = {
        let x = data.batch(n, &mut state.rng)?;
        let eps = normal_tensor::<T>(&[1, LATENT_DIM], &mut state.rng);
        let mut g = Graph::new();
        let pe = state.encoder.params.bind(&mut g, true);
        let p1 = state.g1.params.bind(&mut g, true);
        let p2 = state.g2.params.bind(&mut g, true);
        let pd = state.d1.params.bind(&mut g, false);
        let yv = g.constant(y.clone());
        let (mu, logvar) = state.encoder.forward(&mut g, &pe, yv)?;
        let z = Encoder::reparameterize(&mut g, mu, logvar, eps)?;
        let xv = g.constant(x);
        let xh = state.g1.forward(&mut g, &p1, xv, Some(z))?;
        let scores = state.d1.forward(&mut g, &pd, xh)?;
        let adv = losses::graph_adversarial(&mut g, scores);
        let xr = state.g2.forward(&mut g, &p2, xh, None)?;
        let rec = losses::graph_reconstruction(&mut g, xv, xr)?;
        let ef = d2.forward_differentiable(&mut g, xh)?;
        let et = g.constant(e_target.clone());
        let cos = losses::graph_cosine(&mut g, et, ef)?;
        let rec_w = g.scale(rec, w.lambda_rec);
        let cos_w = g.scale(cos, w.lambda_cos);
        let mut total = g.add(adv, rec_w)?;
        total = g.add(total, cos_w)?;
        if w.lambda_kl > 0.0 {
            let kl = losses::graph_kl(&mut g, mu, logvar)?;
            let kl_w = g.scale(kl, w.lambda_kl);
            total = g.add(total, kl_w)?;
        }
        finite(g.value(total).item().to_f64c(), "generator loss").map_err(ctx)?;
        g.backward(total)?;
        let ge = state.encoder.params.grads(&g, &pe);
        let g1g = state.g1.params.grads(&g, &p1);
        let g2g = state.g2.params.grads(&g, &p2);
        state.opt_encoder.update(&mut state.encoder.params, &ge, lr);
        state.opt_g1.update(&mut state.g1.params, &g1g, lr);
        state.opt_g2.update(&mut state.g2.params, &g2g, lr);
        state.counters.generator += 1;
        let v = |var| g.value(var).item().to_f64c();
        (v(adv), v(rec), v(cos))
    };

    // cosine-only update: E, G1
    {
        let x = data.batch(n, &mut state.rng)?;
        let eps = normal_tensor::<T>(&[1, LATENT_DIM], &mut state.rng);
        let mut g = Graph::new();
        let pe = state.encoder.params.bind(&mut g, true);
        let p1 = state.g1.params.bind(&mut g, true);
        let yv = g.constant(y);
        let (mu, logvar) = state.encoder.forward(&mut g, &pe, yv)?;
        let z = Encoder::reparameterize(&mut g, mu, logvar, eps)?;
        let xv = g.constant(x);
        let xh = state.g1.forward(&mut g, &p1, xv, Some(z))?;
        let ef = d2.forward_differentiable(&mut g, xh)?;
        let et = g.constant(e_target);
        let cos = losses::graph_cosine(&mut g, et, ef)?;
        finite(g.value(cos).item().to_f64c(), "cosine loss").map_err(ctx)?;
        g.backward(cos)?;
        let ge = state.encoder.params.grads(&g, &pe);
        let g1g = state.g1.params.grads(&g, &p1);
        state.opt_encoder.update(&mut state.encoder.params, &ge, lr);
        state.opt_g1.update(&mut state.g1.params, &g1g, lr);
        state.counters.cosine += 1;
    }

    if !(state.encoder.params.all_finite() && state.g1.params.all_finite() && state.g2.params.all_finite() && state.d1.params.all_finite()) {
        return Err(ctx(Error::Numerical("parameters became non-finite".into())));
    }
    let row = TraceRow { iter, loss_d1, loss_adv, loss_rec, loss_cos, lr };
    state.trace.push(row);
    state.iteration += 1;
    Ok(row)
}

/// Extra hooks for [`train`].
pub struct TrainOptions<'a, T: Real> {
    /// Where `ckpt_<iter>/` directories go; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint directory.
    pub resume: Option<PathBuf>,
    /// Stop after this many cycles (before `total_iters`), e.g. to test resuming.
    pub stop_at: Option<u64>,
    /// Metric summary stored in the final checkpoint's metadata.
    pub summary: Option<&'a dyn Fn(&TrainState<T>) -> Result<Value>>,
}

impl<T: Real> Default for TrainOptions<'_, T> {
    fn default() -> Self {
        Self { out_dir: None, resume: None, stop_at: None, summary: None }
    }
}

#[derive(Debug)]
pub struct TrainOutcome<T: Real = f32> {
    pub state: TrainState<T>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_dir(out: &Path, iter: u64) -> PathBuf {
    out.join(format!("ckpt_{iter:06}"))
}

/// Writes `params.a3gn`, `meta.json` and `trace.csv` into `dir`.
pub fn write_checkpoint_dir<T: Real>(dir: &Path, state: &TrainState<T>, cfg: &TrainConfig, summary: Option<Value>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut c = state.to_checkpoint(cfg)?;
    if let Some(s) = &summary {
        c.meta["summary"] = s.clone();
    }
    c.save(&dir.join(PARAMS_FILE))?;
    let meta = json!({
        "config_hash": cfg.hash(),
        "iteration": state.iteration,
        "seed": cfg.seed,
        "rng": serde_json::to_value(&state.rng)?,
        "counters": state.counters,
        "params_digest": state.params_digest(),
        "summary": summary,
    });
    let p = dir.join(META_FILE);
    fs::write(&p, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
    let rows: Vec<Vec<String>> = state
        .trace
        .iter()
        .map(|r| std::iter::once(r.iter.to_string()).chain(r.values().iter().map(|v| v.to_string())).collect())
        .collect();
    crate::evaluation::write_csv(&dir.join(TRACE_FILE), &TRACE_HEADER, &rows)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let perr = |msg: String| Error::Parse { path: path.to_path_buf(), msg };
    let mut r = csv::Reader::from_path(path).map_err(|e| perr(e.to_string()))?;
    let header = r.headers().map_err(|e| perr(e.to_string()))?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(perr("unexpected trace header".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        let f = |j: usize| rec[j].parse::<f64>().map_err(|e| perr(e.to_string()));
        out.push(TraceRow {
            iter: rec[0].parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?,
            loss_d1: f(1)?,
            loss_adv: f(2)?,
            loss_rec: f(3)?,
            loss_cos: f(4)?,
            lr: f(5)?,
        });
    }
    Ok(out)
}

/// Loads the state stored in a `ckpt_<iter>/` directory.
pub fn load_checkpoint_dir<T: Real>(dir: &Path, cfg: &TrainConfig) -> Result<TrainState<T>> {
    let c = Checkpoint::<T>::load(&dir.join(PARAMS_FILE))?;
    let mut s = TrainState::from_checkpoint(&c, cfg)?;
    s.trace = read_trace(&dir.join(TRACE_FILE))?;
    if s.trace.len() as u64 != s.iteration {
        return Err(Error::Format(format!("trace has {} rows for iteration {}", s.trace.len(), s.iteration)));
    }
    Ok(s)
}

/// The training config recorded inside a checkpoint directory.
pub fn stored_config(dir: &Path) -> Result<TrainConfig> {
    let c = Checkpoint::<f32>::load(&dir.join(PARAMS_FILE))?;
    let cfg: TrainConfig = serde_json::from_value(c.meta["config"].clone())
        .map_err(|e| Error::Format(format!("{}: no usable training config ({e})", dir.display())))?;
    if cfg.hash() != c.config_hash {
        return Err(Error::Format(format!("{}: stored config does not match its hash", dir.display())));
    }
    Ok(cfg)
}

/// Trains from scratch or from `opts.resume`, checkpointing at the configured cadence
/// and always after the last cycle.
pub fn train<T: Real>(cfg: &TrainConfig, data: &TrainData<T>, d2: &InstanceDiscriminator<T>, opts: &TrainOptions<'_, T>) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.pool.is_empty() || data.targets.is_empty() {
        return Err(Error::Config("training needs images and at least one target image".into()));
    }
    let mut state = match &opts.resume {
        Some(dir) => load_checkpoint_dir(dir, cfg)?,
        None => TrainState::new(cfg)?,
    };
    let d2_digest = d2.embedder.params.digest();
    let stop = opts.stop_at.unwrap_or(cfg.total_iters).min(cfg.total_iters);
    let every = cfg.checkpoint_interval();
    let mut checkpoints = Vec::new();
    while state.iteration < stop {
        let before = state.clone();
        match train_cycle(&mut state, data, d2, cfg) {
            Ok(row) => {
                if row.iter % 50 == 0 {
                    info!(
                        "cycle {} d1 {:.4} adv {:.4} rec {:.4} cos {:.4} lr {:.2e}",
                        row.iter, row.loss_d1, row.loss_adv, row.loss_rec, row.loss_cos, row.lr
                    );
                }
            }
            Err(e) => {
                if let Some(out) = &opts.out_dir {
                    let dir = out.join(format!("diagnostic_{:06}", before.iteration));
                    write_checkpoint_dir(&dir, &before, cfg, Some(json!({ "error": e.to_string() })))?;
                }
                return Err(e);
            }
        }
        let last = state.iteration == stop;
        if let Some(out) = &opts.out_dir {
            if state.iteration % every == 0 || last {
                let summary = match (last && stop == cfg.total_iters, opts.summary) {
                    (true, Some(f)) => Some(f(&state)?),
                    _ => None,
                };
                let dir = checkpoint_dir(out, state.iteration);
                write_checkpoint_dir(&dir, &state, cfg, summary)?;
                checkpoints.push(dir);
            }
        }
    }
    if d2.embedder.params.digest() != d2_digest {
        return Err(Error::Numerical("instance discriminator parameters changed during training".into()));
    }
    Ok(TrainOutcome { state, checkpoints })
}
