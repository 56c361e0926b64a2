//! Three small operations for the static page in `www/`.

use a3gn::data::synth_faces;
use a3gn::evaluation::{accuracy_at, map_over_thresholds, ssim, threshold_curve};
use a3gn::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wasm_bindgen::prelude::*;

const SIZE: usize = 32;
const MAX_PER_IDENTITY: usize = 12;

type Res<T> = Result<T, String>;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

fn msg(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// `3×H×W` in `[-1, 1]` to row-major RGBA bytes.
fn to_rgba(t: &Tensor<f32>) -> Vec<u8> {
    let p = t.shape()[1] * t.shape()[2];
    let d = t.data();
    let q = |v: f32| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
    let mut out = Vec::with_capacity(4 * p);
    for i in 0..p {
        out.extend_from_slice(&[q(d[i]), q(d[p + i]), q(d[2 * p + i]), 255]);
    }
    out
}

fn face(seed: u64, identities: usize, identity: usize, image: usize) -> Res<Tensor<f32>> {
    let per = (image + 1).clamp(1, MAX_PER_IDENTITY);
    let s = synth_faces(seed, identities.max(identity + 1).max(2), per, SIZE).map_err(msg)?;
    let items = s.dataset.of_identity(identity);
    Ok(items[image.min(items.len() - 1)].image.clone())
}

/// One synthetic face as 32×32 RGBA.
#[wasm_bindgen(js_name = renderFace)]
pub fn render_face(seed: u32, identities: usize, identity: usize, image: usize) -> Result<Vec<u8>, JsError> {
    face(seed as u64, identities, identity, image).map(|f| to_rgba(&f)).map_err(js)
}

#[wasm_bindgen]
pub struct NoisyFace {
    rgba: Vec<u8>,
    ssim: f64,
}

#[wasm_bindgen]
impl NoisyFace {
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn ssim(&self) -> f64 {
        self.ssim
    }
}

/// Adds Gaussian pixel noise (std `sigma` on the `[-1, 1]` scale) and reports SSIM to the clean face.
#[wasm_bindgen(js_name = noisyFace)]
pub fn noisy_face(seed: u32, identity: usize, sigma: f64, noise_seed: u32) -> Result<NoisyFace, JsError> {
    noisy(seed, identity, sigma, noise_seed).map_err(js)
}

fn noisy(seed: u32, identity: usize, sigma: f64, noise_seed: u32) -> Res<NoisyFace> {
    let clean = face(seed as u64, identity + 1, identity, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed as u64);
    let n = Normal::new(0.0, sigma.max(0.0)).map_err(msg)?;
    let data: Vec<f32> = clean.data().iter().map(|&v| (v as f64 + n.sample(&mut rng)).clamp(-1.0, 1.0) as f32).collect();
    let noisy = Tensor::new(clean.shape(), data).map_err(msg)?;
    Ok(NoisyFace { rgba: to_rgba(&noisy), ssim: ssim(&clean, &noisy).map_err(msg)? })
}

/// `n` similarity scores from a normal distribution clipped to `[-1, 1]`.
fn scores(mean: f64, spread: f64, n: usize, seed: u32) -> Res<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let d = Normal::new(mean, spread.max(1e-6)).map_err(msg)?;
    Ok((0..n.max(1)).map(|_| d.sample(&mut rng).clamp(-1.0, 1.0)).collect())
}

#[wasm_bindgen]
pub struct CurveSummary {
    accuracy: Vec<f64>,
    map: f64,
    at_threshold: f64,
}

#[wasm_bindgen]
impl CurveSummary {
    /// Accuracy at thresholds 0.00, 0.01, ..., 1.00.
    #[wasm_bindgen(getter)]
    pub fn accuracy(&self) -> Vec<f64> {
        self.accuracy.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn map(&self) -> f64 {
        self.map
    }

    #[wasm_bindgen(getter = atThreshold)]
    pub fn at_threshold(&self) -> f64 {
        self.at_threshold
    }
}

/// Threshold-accuracy curve and mAP for simulated post-attack similarities.
#[wasm_bindgen(js_name = thresholdCurve)]
pub fn threshold_summary(mean: f64, spread: f64, n: usize, seed: u32, threshold: f64) -> Result<CurveSummary, JsError> {
    summary(mean, spread, n, seed, threshold).map_err(js)
}

fn summary(mean: f64, spread: f64, n: usize, seed: u32, threshold: f64) -> Res<CurveSummary> {
    let s = scores(mean, spread, n, seed)?;
    let curve = threshold_curve(&s).map_err(msg)?;
    Ok(CurveSummary {
        accuracy: curve.iter().map(|p| p.1).collect(),
        map: map_over_thresholds(&s).map_err(msg)?,
        at_threshold: accuracy_at(&s, threshold).map_err(msg)?,
    })
}
