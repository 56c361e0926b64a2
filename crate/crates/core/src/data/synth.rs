//! Parametric face-like images with per-identity geometry and per-image jitter.

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{IdentityDataset, Item};
use crate::error::{Error, Result};
use crate::nn_core::seeded_rng;
use crate::tensor::Tensor;

/// Number of normalized identity parameters.
pub const NUM_FACE_PARAMS: usize = 15;

/// Per-component half-width of the per-image jitter on identity parameters.
pub const PARAM_JITTER: f64 = 0.02;

/// Required ratio between the closest pair of identities and the jitter scale.
pub const SEPARATION_RATIO: f64 = 3.0;

const POSE_SHIFT: f64 = 0.06;
const POSE_ROTATION: f64 = 0.10;
const BRIGHTNESS: f64 = 0.06;
const PIXEL_NOISE: f64 = 0.02;

/// Identity geometry, every component normalized to `[0, 1]`:
/// face width/height, eye spacing/size/height, nose length, mouth width/curvature,
/// skin RGB, hair RGB, hair height.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceParams(pub [f64; NUM_FACE_PARAMS]);

impl FaceParams {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut p = [0.0; NUM_FACE_PARAMS];
        for v in &mut p {
            *v = rng.random::<f64>();
        }
        Self(p)
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    fn jittered(&self, rng: &mut ChaCha8Rng) -> Self {
        let mut p = self.0;
        for v in &mut p {
            *v = (*v + rng.random_range(-PARAM_JITTER..PARAM_JITTER)).clamp(0.0, 1.0);
        }
        Self(p)
    }
}

/// Largest possible norm of a per-image parameter jitter vector.
pub fn jitter_scale() -> f64 {
    PARAM_JITTER * (NUM_FACE_PARAMS as f64).sqrt()
}

/// A synthetic dataset together with the identity parameters it was drawn from.
#[derive(Clone, Debug)]
pub struct SynthFaces {
    pub dataset: IdentityDataset,
    pub params: Vec<FaceParams>,
}

impl SynthFaces {
    pub fn min_identity_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.params.len() {
            for j in i + 1..self.params.len() {
                best = best.min(self.params[i].distance(&self.params[j]));
            }
        }
        best
    }
}

struct Pose {
    dx: f64,
    dy: f64,
    rot: f64,
    brightness: f64,
}

fn lerp(lo: f64, hi: f64, t: f64) -> f64 {
    lo + (hi - lo) * t
}

/// Coverage of a shape with signed distance `sd` for a pixel of width `px`.
fn coverage(sd: f64, px: f64) -> f64 {
    (0.5 - sd / px).clamp(0.0, 1.0)
}

fn ellipse_sd(u: f64, v: f64, cx: f64, cy: f64, a: f64, b: f64) -> f64 {
    let r = (((u - cx) / a).powi(2) + ((v - cy) / b).powi(2)).sqrt();
    (r - 1.0) * a.min(b)
}

fn blend(dst: &mut [f64; 3], src: [f64; 3], alpha: f64) {
    for c in 0..3 {
        dst[c] = dst[c] * (1.0 - alpha) + src[c] * alpha;
    }
}

fn render(p: &FaceParams, pose: &Pose, size: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let q = &p.0;
    let ax = lerp(0.48, 0.72, q[0]);
    let ay = lerp(0.62, 0.88, q[1]);
    let eye_dx = lerp(0.16, 0.34, q[2]);
    let eye_r = lerp(0.06, 0.13, q[3]);
    let eye_y = lerp(-0.30, -0.08, q[4]);
    let nose = lerp(0.10, 0.30, q[5]);
    let mouth_w = lerp(0.14, 0.36, q[6]);
    let curv = lerp(-1.2, 1.2, q[7]);
    let skin = [lerp(0.50, 0.95, q[8]), lerp(0.35, 0.78, q[9]), lerp(0.25, 0.62, q[10])];
    let hair = [lerp(0.05, 0.80, q[11]), lerp(0.05, 0.65, q[12]), lerp(0.05, 0.55, q[13])];
    let hair_h = lerp(0.70, 1.05, q[14]);
    let nose_col = [skin[0] * 0.72, skin[1] * 0.70, skin[2] * 0.70];
    let mouth_y = (eye_y + nose + 0.20).min(ay * 0.8);

    let px = 2.0 / size as f64;
    let (s, c) = pose.rot.sin_cos();
    let noise = Normal::new(0.0, PIXEL_NOISE).unwrap();
    let plane = size * size;
    let mut data = vec![0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let u0 = (x as f64 + 0.5) * px - 1.0 - pose.dx;
            let v0 = (y as f64 + 0.5) * px - 1.0 - pose.dy;
            let u = c * u0 + s * v0;
            let v = -s * u0 + c * v0;
            let mut col = [0.32, 0.34, 0.38];
            blend(&mut col, hair, coverage(ellipse_sd(u, v, 0.0, -ay * 0.30, ax * 1.12, ay * hair_h), px));
            blend(&mut col, skin, coverage(ellipse_sd(u, v, 0.0, 0.06, ax, ay * 0.92), px));
            for side in [-1.0, 1.0] {
                blend(&mut col, [0.96, 0.96, 0.96], coverage(ellipse_sd(u, v, side * eye_dx, eye_y, eye_r * 1.4, eye_r * 0.8), px));
                blend(&mut col, [0.08, 0.08, 0.14], coverage(ellipse_sd(u, v, side * eye_dx, eye_y, eye_r * 0.6, eye_r * 0.6), px));
            }
            let nose_sd = if v < eye_y + 0.06 || v > eye_y + 0.06 + nose { 1.0 } else { u.abs() - 0.03 };
            blend(&mut col, nose_col, coverage(nose_sd, px));
            let mouth_sd = if u.abs() > mouth_w { 1.0 } else { (v - (mouth_y - curv * (u * u - mouth_w * mouth_w * 0.5))).abs() - 0.03 };
            blend(&mut col, [0.72, 0.18, 0.24], coverage(mouth_sd, px));
            let i = y * size + x;
            for ch in 0..3 {
                let val = (col[ch] + pose.brightness) * 2.0 - 1.0 + noise.sample(rng);
                data[ch * plane + i] = val.clamp(-1.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(&[3, size, size], data).unwrap()
}

/// Renders `n_identities × per_identity` images; identical seeds give bit-identical output.
pub fn synth_faces(seed: u64, n_identities: usize, per_identity: usize, image_size: usize) -> Result<SynthFaces> {
    if n_identities < 2 {
        return Err(Error::Config("synthetic dataset needs at least 2 identities".into()));
    }
    if per_identity == 0 || image_size < 8 {
        return Err(Error::Config("synthetic dataset needs images of at least 8×8".into()));
    }
    let mut rng = seeded_rng(seed);
    let min_dist = SEPARATION_RATIO * jitter_scale() * 1.05;
    let mut params: Vec<FaceParams> = Vec::with_capacity(n_identities);
    let mut attempts = 0;
    while params.len() < n_identities {
        let cand = FaceParams::random(&mut rng);
        attempts += 1;
        if params.iter().all(|p| p.distance(&cand) > min_dist) {
            params.push(cand);
        } else if attempts > 100_000 {
            return Err(Error::Config(format!("cannot place {n_identities} separated identities")));
        }
    }
    let mut items = Vec::with_capacity(n_identities * per_identity);
    for (label, p) in params.iter().enumerate() {
        for k in 0..per_identity {
            let jittered = p.jittered(&mut rng);
            let pose = Pose {
                dx: rng.random_range(-POSE_SHIFT..POSE_SHIFT),
                dy: rng.random_range(-POSE_SHIFT..POSE_SHIFT),
                rot: rng.random_range(-POSE_ROTATION..POSE_ROTATION),
                brightness: rng.random_range(-BRIGHTNESS..BRIGHTNESS),
            };
            let image = render(&jittered, &pose, image_size, &mut rng);
            items.push(Item { image, label, path: PathBuf::from(format!("id{label:02}/img{k:04}")) });
        }
    }
    let identities = (0..n_identities).map(|i| format!("id{i:02}")).collect();
    Ok(SynthFaces { dataset: IdentityDataset { items, identities, image_size }, params })
}
