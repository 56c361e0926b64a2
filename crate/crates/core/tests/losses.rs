mod common;

use a3gn::losses::{
    adversarial_loss_reference, cosine_loss, generator_objective, gradient_penalty, graph_cosine, graph_reconstruction,
    interpolate, penalty_from_gradient, reconstruction_loss, wgan_objective, InputGradient, LossWeights,
};
use a3gn::models::{Critic, EmbeddingVector, ModelConfig};
use a3gn::nn_core::params::randomize;
use a3gn::nn_core::{seeded_rng, Graph};
use a3gn::{Error, Result, Tensor};
use common::*;
use proptest::prelude::*;

fn ev(v: &[f64]) -> EmbeddingVector {
    EmbeddingVector::new(v.to_vec()).unwrap()
}

#[test]
fn reference_adversarial_loss() {
    // logit 0 is probability 0.5
    let half = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
    assert!((adversarial_loss_reference(&half, &half) - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    assert!((adversarial_loss_reference(&half, &half) + 1.3863).abs() < 1e-4);

    let perfect = adversarial_loss_reference(&Tensor::<f64>::full(&[1, 1, 2, 2], 20.0), &Tensor::full(&[1, 1, 2, 2], -20.0));
    assert!(perfect < 0.0 && perfect > -1e-8);

    // a saturated wrong answer hits the log floor instead of -inf
    let floor = adversarial_loss_reference(&Tensor::<f64>::full(&[1], -1e4), &Tensor::full(&[1], 1e4));
    assert!(floor.is_finite());
    assert!((floor - 2.0 * 1e-12f64.ln()).abs() < 1e-9);

    let r = rand_tensor(&[2, 1, 2, 3], 1).map(|v| 3.0 * v);
    let f = rand_tensor(&[2, 1, 2, 3], 2).map(|v| 3.0 * v);
    let sig = |s: f64| 1.0 / (1.0 + (-s).exp());
    let mut want_r = 0.0;
    let mut want_f = 0.0;
    for i in 0..12 {
        want_r += sig(r.data()[i]).ln();
        want_f += (1.0 - sig(f.data()[i])).ln();
    }
    assert!((adversarial_loss_reference(&r, &f) - (want_r / 12.0 + want_f / 12.0)).abs() < 1e-9);
}

/// `D(x) = c·⟨w, x⟩` with `‖w‖ = 1`, so `‖∇D‖ = |c|` for every sample.
struct LinearCritic {
    w: Tensor<f64>,
    c: f64,
}

impl LinearCritic {
    fn new(shape: &[usize], c: f64, seed: u64) -> Self {
        let w = rand_tensor(shape, seed);
        let n = w.norm();
        Self { w: w.map(|v| v / n), c }
    }
}

impl InputGradient<f64> for LinearCritic {
    fn input_gradient(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let per = self.w.len();
        let mut g = Tensor::zeros(x.shape());
        for s in g.data_mut().chunks_mut(per) {
            for (v, w) in s.iter_mut().zip(self.w.data()) {
                *v = self.c * w;
            }
        }
        Ok(g)
    }
}

#[test]
fn penalty_on_linear_critics() {
    let real = rand_tensor(&[4, 3, 5, 5], 1);
    let fake = rand_tensor(&[4, 3, 5, 5], 2);
    for (seed, c) in [0.0, 0.5, 1.0, 3.0].into_iter().enumerate() {
        let d = LinearCritic::new(&[3, 5, 5], c, seed as u64 + 10);
        let gp = gradient_penalty(&d, &real, &fake, 99, 10.0).unwrap();
        assert!((gp - 10.0 * (c - 1.0f64).powi(2)).abs() < 1e-6, "c = {c}: {gp}");
    }
}

#[test]
fn penalty_rejects_mismatched_shapes() {
    let d = LinearCritic::new(&[3, 5, 5], 1.0, 0);
    let r = gradient_penalty(&d, &rand_tensor(&[2, 3, 5, 5], 1), &rand_tensor(&[3, 3, 5, 5], 2), 0, 10.0);
    assert!(matches!(r, Err(Error::Input(_))));
    let nan = Tensor::<f64>::full(&[1, 4], f64::NAN);
    assert!(matches!(penalty_from_gradient(&nan, 10.0), Err(Error::Numerical(_))));
}

#[test]
fn interpolates_lie_on_segments() {
    let real = rand_tensor(&[3, 2, 2, 2], 1);
    let fake = rand_tensor(&[3, 2, 2, 2], 2);
    let x = interpolate(&real, &fake, &mut seeded_rng(4)).unwrap();
    for i in 0..3 {
        let r = &real.data()[i * 8..(i + 1) * 8];
        let f = &fake.data()[i * 8..(i + 1) * 8];
        let xi = &x.data()[i * 8..(i + 1) * 8];
        let a = (xi[0] - f[0]) / (r[0] - f[0]);
        assert!((0.0..=1.0).contains(&a));
        for j in 0..8 {
            assert!((xi[j] - (a * r[j] + (1.0 - a) * f[j])).abs() < 1e-12);
        }
    }
}

#[test]
fn penalty_pass_agrees_with_input_gradient() {
    let cfg = ModelConfig::desk();
    let mut d1 = Critic::<f64>::new(&cfg, 3);
    randomize(&mut d1.params, 4, 0.1);
    let x = rand_tensor(&[3, 3, 32, 32], 5);
    let pass = d1.penalty_pass(&x, 10.0).unwrap();
    let want = penalty_from_gradient(&d1.input_gradient(&x).unwrap(), 10.0).unwrap();
    assert!((pass.penalty - want).abs() < 1e-10 * want.max(1.0));
    assert_eq!(pass.grad_norms.len(), 3);
    assert!(pass.penalty >= 0.0);
}

#[test]
fn wgan_arithmetic() {
    let (d, g) = wgan_objective(&Tensor::<f64>::full(&[2, 1, 2, 2], 1.0), &Tensor::full(&[2, 1, 2, 2], -1.0), 0.0);
    assert_eq!((d, g), (-2.0, 1.0));
    let s = rand_tensor(&[1, 1, 2, 2], 3);
    assert_eq!(wgan_objective(&s, &s, 0.7).0, 0.7);

    let r = rand_tensor(&[1, 1, 2, 2], 4);
    let f = rand_tensor(&[1, 1, 2, 2], 5);
    let (mr, mf) = (r.data().iter().sum::<f64>() / 4.0, f.data().iter().sum::<f64>() / 4.0);
    let (d, g) = wgan_objective(&r, &f, 0.25);
    assert!((d - (mf - mr + 0.25)).abs() < 1e-12);
    assert!((g + mf).abs() < 1e-12);
}

#[test]
fn reconstruction_examples() {
    let x = rand_tensor(&[2, 3, 4, 4], 1);
    assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
    assert!((reconstruction_loss(&x, &x.map(|v| v + 0.5)).unwrap() - 0.5).abs() < 1e-12);
    let y = rand_tensor(&[2, 3, 4, 4], 2);
    let want = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 96.0;
    assert!((reconstruction_loss(&x, &y).unwrap() - want).abs() < 1e-9);
    assert!(matches!(reconstruction_loss(&x, &rand_tensor(&[2, 3, 4, 5], 3)), Err(Error::Input(_))));

    let mut g = Graph::new();
    let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
    let l = graph_reconstruction(&mut g, a, b).unwrap();
    assert!((g.value(l).item() - want).abs() < 1e-12);
}

#[test]
fn cosine_examples() {
    let e = ev(&[0.3, -1.2, 2.0]);
    assert!(cosine_loss(&e, &e).unwrap().abs() < 1e-15);
    assert_eq!(cosine_loss(&ev(&[1.0, 0.0, 0.0]), &ev(&[0.0, 2.0, 0.0])).unwrap(), 1.0);
    assert_eq!(cosine_loss(&ev(&[1.0, 0.0]), &ev(&[-1.0, 0.0])).unwrap(), 2.0);
    assert_eq!(cosine_loss(&ev(&[1.0, 2.0, 2.0]), &ev(&[-1.0, -2.0, -2.0])).unwrap(), 2.0);
    assert_eq!(cosine_loss(&ev(&[1.0, 2.0, 2.0]), &ev(&[1.0, 2.0, 2.0])).unwrap(), 0.0);
    assert!(matches!(cosine_loss(&EmbeddingVector(vec![0.0; 3]), &e), Err(Error::DegenerateEmbedding(_))));

    let mut g = Graph::<f64>::new();
    let t = g.constant(Tensor::new(&[1, 3], vec![0.3, -1.2, 2.0]).unwrap());
    let f = g.constant(Tensor::new(&[2, 3], vec![0.3, -1.2, 2.0, -0.6, 2.4, -4.0]).unwrap());
    let l = graph_cosine(&mut g, t, f).unwrap();
    assert!((g.value(l).item() - 1.0).abs() < 1e-12);
}

#[test]
fn generator_objective_examples() {
    let w = LossWeights::default();
    assert_eq!(generator_objective(1.0, 0.2, 0.5, 0.0, &w), 8.0);
    assert_eq!(generator_objective(0.0, 0.0, 0.0, 0.0, &w), 0.0);
    let none = LossWeights { lambda_rec: 0.0, lambda_cos: 0.0, ..w };
    assert_eq!(generator_objective(1.7, 0.2, 0.5, 0.0, &none), 1.7);
    // affine in each component with the configured coefficient
    let w = LossWeights { lambda_rec: 3.0, lambda_cos: 7.0, lambda_gp: 10.0, lambda_kl: 0.5 };
    let base = generator_objective(0.0, 0.0, 0.0, 0.0, &w);
    assert_eq!(generator_objective(1.0, 0.0, 0.0, 0.0, &w) - base, 1.0);
    assert_eq!(generator_objective(0.0, 1.0, 0.0, 0.0, &w) - base, 3.0);
    assert_eq!(generator_objective(0.0, 0.0, 1.0, 0.0, &w) - base, 7.0);
    assert_eq!(generator_objective(0.0, 0.0, 0.0, 1.0, &w) - base, 0.5);
}

#[test]
fn gradient_suite() {
    for seed in GRAD_SEEDS {
        for case in loss_gradient_cases(seed).unwrap() {
            assert!(case.report.passed, "{} seed {}: {:?}", case.name, case.seed, case.report);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_range_and_scale_invariance(
        a in prop::collection::vec(-5.0f64..5.0, 6),
        b in prop::collection::vec(-5.0f64..5.0, 6),
        s in 0.01f64..100.0,
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let l = cosine_loss(&ev(&a), &ev(&b)).unwrap();
        prop_assert!((0.0..=2.0).contains(&l));
        let scaled: Vec<f64> = b.iter().map(|v| v * s).collect();
        prop_assert!((cosine_loss(&ev(&a), &ev(&scaled)).unwrap() - l).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_is_a_symmetric_distance(seed in 0u64..10_000) {
        let x = rand_tensor(&[1, 3, 3, 3], seed);
        let y = rand_tensor(&[1, 3, 3, 3], seed + 1);
        let d = reconstruction_loss(&x, &y).unwrap();
        prop_assert!(d > 0.0);
        prop_assert_eq!(d, reconstruction_loss(&y, &x).unwrap());
    }

    #[test]
    fn penalty_is_non_negative(seed in 0u64..10_000, c in -4.0f64..4.0) {
        let d = LinearCritic::new(&[2, 3, 3], c, seed);
        let gp = gradient_penalty(&d, &rand_tensor(&[2, 2, 3, 3], seed), &rand_tensor(&[2, 2, 3, 3], seed + 1), seed, 10.0).unwrap();
        prop_assert!(gp >= 0.0);
        prop_assert!((gp - 10.0 * (c.abs() - 1.0).powi(2)).abs() < 1e-9);
    }
}
