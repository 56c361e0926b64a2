//! Attack metrics and reports.
//!
//! "mAP" here follows the attack literature's usage: the mean, over the 101
//! thresholds 0.00, 0.01, …, 1.00, of the fraction of generated images whose
//! similarity to the target reaches the threshold. It is not a
//! precision-recall quantity.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{EvalPair, ImageTensor, PairingMode};
use crate::error::{Error, Result};
use crate::models::{EmbeddingVector, Generator, InstanceDiscriminator, LatentCode, Mode};
use crate::tensor::Tensor;

/// Similarity at or above which a generated face counts as the target.
pub const MATCH_THRESHOLD: f64 = 0.45;
/// SSIM at or above which an adversarial image counts as unchanged.
pub const SSIM_THRESHOLD: f64 = 0.9;
/// Number of points on the threshold curve.
pub const CURVE_POINTS: usize = 101;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!("embedding lengths {} and {} differ", a.len(), b.len())));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Fraction of scores `>= t`.
pub fn accuracy_at(scores: &[f64], t: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Input("accuracy over an empty score list".into()));
    }
    Ok(scores.iter().filter(|&&s| s >= t).count() as f64 / scores.len() as f64)
}

/// `i / 100` for `i = 0..=100`, computed without accumulated rounding.
pub fn curve_thresholds() -> Vec<f64> {
    (0..CURVE_POINTS).map(|i| i as f64 / 100.0).collect()
}

/// `(threshold, accuracy)` at every curve threshold.
pub fn threshold_curve(scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    curve_thresholds().into_iter().map(|t| Ok((t, accuracy_at(scores, t)?))).collect()
}

/// Mean of the threshold curve.
pub fn map_over_thresholds(scores: &[f64]) -> Result<f64> {
    Ok(mean_of_curve(&threshold_curve(scores)?))
}

fn mean_of_curve(curve: &[(f64, f64)]) -> f64 {
    curve.iter().map(|p| p.1).sum::<f64>() / curve.len() as f64
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable `valid` filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two `C×H×W` images in `[-1, 1]`, evaluated on `[0, 1]`.
///
/// Gaussian 11×11 window (σ = 1.5), population statistics, only windows that
/// fit entirely inside the image, averaged over windows then channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Input(format!("ssim: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    let s = a.shape();
    if s.len() != 3 || s[1] < SSIM_WINDOW || s[2] < SSIM_WINDOW {
        return Err(Error::Shape(format!("ssim needs C×H×W images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let k = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let to01 = |v: &f32| (*v as f64 + 1.0) / 2.0;
    let mut total = 0.0;
    for ch in 0..c {
        let r = ch * h * w..(ch + 1) * h * w;
        let x: Vec<f64> = a.data()[r.clone()].iter().map(to01).collect();
        let y: Vec<f64> = b.data()[r].iter().map(to01).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &k));
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / c as f64)
}

/// Fraction of image pairs with SSIM `>= threshold`.
pub fn ssim_rate(pairs: &[(ImageTensor, ImageTensor)], threshold: f64) -> Result<f64> {
    let values = pairs.iter().map(|(a, b)| ssim(a, b)).collect::<Result<Vec<_>>>()?;
    rate_at_least(&values, threshold)
}

/// Same counting rule as [`ssim_rate`] over precomputed SSIM values.
pub fn rate_at_least(values: &[f64], threshold: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("rate over an empty list".into()));
    }
    Ok(values.iter().filter(|&&v| v >= threshold).count() as f64 / values.len() as f64)
}

/// Fraction of aligned pairs whose similarity falls below `t`.
pub fn fool_rate(real: &[EmbeddingVector], fake: &[EmbeddingVector], t: f64) -> Result<f64> {
    if real.len() != fake.len() {
        return Err(Error::Input(format!("fool rate: {} real vs {} fake embeddings", real.len(), fake.len())));
    }
    if real.is_empty() {
        return Err(Error::Input("fool rate over empty lists".into()));
    }
    let mut fooled = 0;
    for (r, f) in real.iter().zip(fake) {
        if cosine_similarity(r, f)? < t {
            fooled += 1;
        }
    }
    Ok(fooled as f64 / real.len() as f64)
}

/// Maps a batch of probes to adversarial images.
pub trait Attack {
    /// `N×3×H×W → N×3×H×W`.
    fn perturb(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>>;
}

/// Returns probes unchanged.
pub struct IdentityAttack;

impl Attack for IdentityAttack {
    fn perturb(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(batch.clone())
    }
}

/// A trained G1 with a fixed latent code.
pub struct GeneratorAttack<'a> {
    pub g1: &'a Generator<f32>,
    pub z: &'a LatentCode<f32>,
}

impl Attack for GeneratorAttack<'_> {
    fn perturb(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.g1.run(batch, Some(self.z))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub match_threshold: f64,
    pub ssim_threshold: f64,
    pub protocol: PairingMode,
    /// Free-form tag carried into the report, e.g. the ablation variant.
    pub label: String,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_threshold: MATCH_THRESHOLD,
            ssim_threshold: SSIM_THRESHOLD,
            protocol: PairingMode::SameImage,
            label: String::new(),
            batch_size: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub label: String,
    pub real_acc: f64,
    pub fake_acc: f64,
    pub map: f64,
    pub sim_before: f64,
    pub sim_after: f64,
    pub sim_delta: f64,
    pub sim_real_fake: f64,
    pub ssim_rate: f64,
    pub fool_rate: f64,
    pub threshold_curve: Vec<(f64, f64)>,
    pub n_probes: usize,
    pub mode: Mode,
    pub protocol: PairingMode,
}

/// Per-probe values behind a report, kept for manifests and plots.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub probe_index: usize,
    pub sim_before: f64,
    pub sim_after: f64,
    pub sim_real_fake: f64,
    pub ssim: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs the attack on every pair and scores it against `d2`.
pub fn evaluate_attack(
    attack: &dyn Attack,
    d2: &InstanceDiscriminator<f32>,
    pairs: &[EvalPair],
    cfg: &EvalConfig,
) -> Result<(AttackReport, Vec<ProbeResult>)> {
    if pairs.is_empty() {
        return Err(Error::Input("no evaluation pairs".into()));
    }
    let mut probes = Vec::with_capacity(pairs.len());
    let mut target_cache: Option<(ImageTensor, EmbeddingVector)> = None;
    for chunk in pairs.chunks(cfg.batch_size.max(1)) {
        let refs: Vec<&Tensor<f32>> = chunk.iter().map(|p| &p.probe).collect();
        let first = chunk[0].probe_index;
        let batch = Tensor::stack(&refs)?;
        let adv = attack.perturb(&batch).map_err(|e| e.context(format!("probes from {first}")))?;
        let real_e = d2.embed(&batch).map_err(|e| e.context(format!("probes from {first}")))?;
        let fake_e = d2.embed(&adv).map_err(|e| e.context(format!("adversarial images from {first}")))?;
        let per_shape = &adv.shape()[1..];
        for (j, p) in chunk.iter().enumerate() {
            let adv_j = adv.sample(j).reshape(per_shape)?;
            let ctx = |e: Error| e.context(format!("probe {}", p.probe_index));
            let te = match &target_cache {
                Some((img, e)) if *img == p.target => e.clone(),
                _ => {
                    let e = d2.embed(&p.target).map_err(ctx)?.remove(0);
                    target_cache = Some((p.target.clone(), e.clone()));
                    e
                }
            };
            probes.push(ProbeResult {
                probe_index: p.probe_index,
                sim_before: cosine_similarity(&real_e[j], &te).map_err(ctx)?,
                sim_after: cosine_similarity(&fake_e[j], &te).map_err(ctx)?,
                sim_real_fake: cosine_similarity(&real_e[j], &fake_e[j]).map_err(ctx)?,
                ssim: ssim(&p.probe, &adv_j).map_err(ctx)?,
            });
        }
    }
    let before: Vec<f64> = probes.iter().map(|p| p.sim_before).collect();
    let after: Vec<f64> = probes.iter().map(|p| p.sim_after).collect();
    let real_fake: Vec<f64> = probes.iter().map(|p| p.sim_real_fake).collect();
    let ssims: Vec<f64> = probes.iter().map(|p| p.ssim).collect();
    let curve = threshold_curve(&after)?;
    let report = AttackReport {
        label: cfg.label.clone(),
        real_acc: accuracy_at(&before, cfg.match_threshold)?,
        fake_acc: accuracy_at(&after, cfg.match_threshold)?,
        map: mean_of_curve(&curve),
        sim_before: mean(&before),
        sim_after: mean(&after),
        sim_delta: mean(&after) - mean(&before),
        sim_real_fake: mean(&real_fake),
        ssim_rate: rate_at_least(&ssims, cfg.ssim_threshold)?,
        fool_rate: real_fake.iter().filter(|&&s| s < cfg.match_threshold).count() as f64 / real_fake.len() as f64,
        threshold_curve: curve,
        n_probes: probes.len(),
        mode: d2.mode,
        protocol: cfg.protocol,
    };
    Ok((report, probes))
}

/// Field-wise mean of reports sharing mode and protocol (e.g. over several targets).
pub fn average_reports(reports: &[AttackReport]) -> Result<AttackReport> {
    let first = reports.first().ok_or_else(|| Error::Input("no reports to average".into()))?;
    if reports.iter().any(|r| r.mode != first.mode || r.protocol != first.protocol) {
        return Err(Error::Input("reports to average must share mode and protocol".into()));
    }
    let avg = |f: fn(&AttackReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    let curve = (0..first.threshold_curve.len())
        .map(|i| (first.threshold_curve[i].0, reports.iter().map(|r| r.threshold_curve[i].1).sum::<f64>() / reports.len() as f64))
        .collect();
    Ok(AttackReport {
        label: first.label.clone(),
        real_acc: avg(|r| r.real_acc),
        fake_acc: avg(|r| r.fake_acc),
        map: avg(|r| r.map),
        sim_before: avg(|r| r.sim_before),
        sim_after: avg(|r| r.sim_after),
        sim_delta: avg(|r| r.sim_delta),
        sim_real_fake: avg(|r| r.sim_real_fake),
        ssim_rate: avg(|r| r.ssim_rate),
        fool_rate: avg(|r| r.fool_rate),
        threshold_curve: curve,
        n_probes: reports.iter().map(|r| r.n_probes).sum(),
        mode: first.mode,
        protocol: first.protocol,
    })
}

impl AttackReport {
    /// Violated invariants, empty when the report is consistent.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("real_acc", self.real_acc),
            ("fake_acc", self.fake_acc),
            ("map", self.map),
            ("ssim_rate", self.ssim_rate),
            ("fool_rate", self.fool_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{name} = {v} outside [0, 1]"));
            }
        }
        for (name, v) in [("sim_before", self.sim_before), ("sim_after", self.sim_after), ("sim_real_fake", self.sim_real_fake)] {
            if !(-1.0..=1.0).contains(&v) {
                out.push(format!("{name} = {v} outside [-1, 1]"));
            }
        }
        if (self.sim_delta - (self.sim_after - self.sim_before)).abs() > 1e-12 {
            out.push("sim_delta differs from sim_after - sim_before".into());
        }
        if self.threshold_curve.len() != CURVE_POINTS {
            out.push(format!("curve has {} points", self.threshold_curve.len()));
        } else {
            if self.threshold_curve.iter().zip(curve_thresholds()).any(|(p, t)| p.0 != t) {
                out.push("curve thresholds are not 0.00..1.00".into());
            }
            if self.threshold_curve.windows(2).any(|w| w[1].1 > w[0].1) {
                out.push("curve is increasing somewhere".into());
            }
            if (mean_of_curve(&self.threshold_curve) - self.map).abs() > 1e-12 {
                out.push("map differs from the curve mean".into());
            }
        }
        out
    }

    /// Every scalar field, keyed flat.
    pub fn to_flat_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("label".into(), self.label.clone().into());
        m.insert("mode".into(), self.mode.label().into());
        m.insert("protocol".into(), self.protocol.label().into());
        m.insert("n_probes".into(), self.n_probes.into());
        for (k, v) in self.numeric_fields() {
            m.insert(k.into(), v.into());
        }
        Value::Object(m)
    }

    fn numeric_fields(&self) -> [(&'static str, f64); 9] {
        [
            ("real_acc", self.real_acc),
            ("fake_acc", self.fake_acc),
            ("map", self.map),
            ("sim_before", self.sim_before),
            ("sim_after", self.sim_after),
            ("sim_delta", self.sim_delta),
            ("sim_real_fake", self.sim_real_fake),
            ("ssim_rate", self.ssim_rate),
            ("fool_rate", self.fool_rate),
        ]
    }

    pub fn csv_header() -> Vec<&'static str> {
        let mut h = vec!["label", "mode", "protocol", "n_probes"];
        h.extend(["real_acc", "fake_acc", "map", "sim_before", "sim_after", "sim_delta", "sim_real_fake", "ssim_rate", "fool_rate"]);
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![self.label.clone(), self.mode.label().into(), self.protocol.label().into(), self.n_probes.to_string()];
        r.extend(self.numeric_fields().iter().map(|(_, v)| v.to_string()));
        r
    }

    /// Writes `<stem>.json`, `<stem>.csv` and `<stem>_curve.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let json = serde_json::to_string_pretty(&self.to_flat_json())?;
        let p = dir.join(format!("{stem}.json"));
        std::fs::write(&p, json).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
        let p = dir.join(format!("{stem}.csv"));
        write_csv(&p, &Self::csv_header(), &[self.csv_row()])?;
        let rows: Vec<Vec<String>> = self.threshold_curve.iter().map(|(t, a)| vec![format!("{t:.2}"), a.to_string()]).collect();
        write_csv(&dir.join(format!("{stem}_curve.csv")), &["threshold", "accuracy"], &rows)
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let io = |e: csv::Error| Error::Parse { path: path.to_path_buf(), msg: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a `threshold,accuracy` curve file.
pub fn read_curve_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let perr = |msg: String| Error::Parse { path: path.to_path_buf(), msg };
    let mut r = csv::Reader::from_path(path).map_err(|e| perr(e.to_string()))?;
    let header = r.headers().map_err(|e| perr(e.to_string()))?.clone();
    if header.len() != 2 || &header[0] != "threshold" || &header[1] != "accuracy" {
        return Err(perr(format!("expected header threshold,accuracy, found {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(format!("row {}: column {} is not a number", i + 2, j + 1)))
        };
        out.push((num(0)?, num(1)?));
    }
    if out.is_empty() {
        return Err(perr("curve has no rows".into()));
    }
    Ok(out)
}
