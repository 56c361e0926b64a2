mod common;

use a3gn::nn_core::params::randomize;
use a3gn::nn_core::{self, grad_check, graph_fn, seeded_rng, Graph, ParamBuilder, ParamSet, SeBlock};
use a3gn::{Error, Tensor};
use common::*;
use proptest::prelude::*;

#[test]
fn conv2d_examples() {
    let y = nn_core::conv2d(&Tensor::<f64>::ones(&[1, 3, 3]), &Tensor::ones(&[1, 1, 3, 3]), None, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1]);
    assert_eq!(y.data(), &[9.0]);

    let x = rand_tensor(&[3, 5, 4], 1);
    let mut eye = Tensor::<f64>::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        eye.data_mut()[c * 3 + c] = 1.0;
    }
    assert_eq!(nn_core::conv2d(&x, &eye, None, 1, 0).unwrap(), x);

    let x = rand_tensor(&[2, 8, 8], 2);
    let w = rand_tensor(&[4, 2, 3, 3], 3);
    let y = nn_core::conv2d(&x, &w, None, 2, 1).unwrap();
    assert_eq!(y.shape(), &[4, 4, 4]);
    assert!(max_abs_diff(&y, &conv_direct(&x, &w, 2, 1)) < 1e-12);
}

#[test]
fn conv2d_rejects_channel_mismatch() {
    let r = nn_core::conv2d(&Tensor::<f64>::ones(&[2, 4, 4]), &Tensor::ones(&[1, 3, 3, 3]), None, 1, 0);
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn instance_norm_examples() {
    let (g1, b0) = (Tensor::<f64>::ones(&[1]), Tensor::<f64>::zeros(&[1]));
    let y = nn_core::instance_norm(&Tensor::full(&[1, 2, 2], 3.0), &g1, &b0, 1e-5).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));

    let x = Tensor::<f64>::new(&[1, 2, 2], vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
    let y = nn_core::instance_norm(&x, &g1, &b0, 0.0).unwrap();
    assert!(max_abs_diff(&y, &x) < 1e-12);

    let x = rand_tensor(&[3, 4, 4], 5);
    let y = nn_core::instance_norm(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), 1e-5).unwrap();
    for ch in y.data().chunks(16) {
        let mean = ch.iter().sum::<f64>() / 16.0;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6);
        assert!((var.sqrt() - 1.0).abs() < 1e-3);
    }
}

#[test]
fn instance_norm_shifts_and_scales() {
    let x = rand_tensor(&[2, 3, 3], 6);
    let gamma = Tensor::new(&[2], vec![2.0, 0.5]).unwrap();
    let beta = Tensor::new(&[2], vec![-1.0, 3.0]).unwrap();
    let y = nn_core::instance_norm(&x, &gamma, &beta, 0.0).unwrap();
    for (ch, (g, b)) in y.data().chunks(9).zip([(2.0, -1.0), (0.5, 3.0)]) {
        let mean = ch.iter().sum::<f64>() / 9.0;
        let sd = (ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
        assert!((mean - b).abs() < 1e-9 && (sd - g).abs() < 1e-9);
    }
}

#[test]
fn instance_norm_single_position_without_eps_is_degenerate() {
    let r = nn_core::instance_norm(&Tensor::<f64>::ones(&[2, 1, 1]), &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 0.0);
    assert!(matches!(r, Err(Error::DegenerateVariance(_))));
}

fn zeroed(set: &mut ParamSet<f64>) {
    for (name, t) in set.names().to_vec().iter().zip(set.tensors_mut()) {
        if !name.ends_with("gamma") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[test]
fn residual_zero_branch_is_identity() {
    let (mut set, block) = residual_params(4, 4, 1, 1);
    zeroed(&mut set);
    let x = rand_tensor(&[4, 6, 6], 2);
    assert_eq!(nn_core::residual_block(&x, &block, &set).unwrap(), x);

    let grad = graph_fn(|g, xv| {
        let p = set.bind(g, false);
        let x4 = g.reshape(xv, &[1, 4, 6, 6])?;
        block.forward(g, &p, x4)
    })(&x)
    .unwrap()
    .1;
    assert!(grad.data().iter().all(|&v| v == 1.0));
}

#[test]
fn residual_preserves_shape() {
    let mut set = ParamSet::<f32>::default();
    let mut rng = seeded_rng(3);
    let block = a3gn::nn_core::ResidualBlock::new(&mut ParamBuilder::new(&mut set, &mut rng), "r", 64);
    let x = Tensor::<f32>::full(&[64, 28, 28], 0.1);
    assert_eq!(nn_core::residual_block(&x, &block, &set).unwrap().shape(), &[64, 28, 28]);
    assert!(matches!(nn_core::residual_block(&Tensor::<f32>::zeros(&[8, 4, 4]), &block, &set), Err(Error::Shape(_))));
}

#[test]
fn nonlocal_starts_as_identity() {
    let (set, block) = nonlocal_params(4, 1);
    assert!(set.get("nl.out.w").unwrap().data().iter().all(|&v| v == 0.0));
    let x = rand_tensor(&[4, 3, 3], 2);
    assert_eq!(nn_core::nonlocal_block(&x, &block, &set).unwrap(), x);
}

#[test]
fn nonlocal_single_position() {
    let (mut set, block) = nonlocal_params(4, 3);
    randomize(&mut set, 4, 0.5);
    let x = rand_tensor(&[1, 4, 1, 1], 5);
    let mut g = Graph::new();
    let p = set.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let (y, attn) = block.forward_with_attention(&mut g, &p, xv).unwrap();
    assert_eq!(g.attention_weights(attn).unwrap(), &[1.0]);
    // with one position the block reduces to x + W_z·g(x)
    let xs: Vec<f64> = x.data().to_vec();
    let gw = set.get("nl.g.w").unwrap().data();
    let gb = set.get("nl.g.b").unwrap().data();
    let gx: Vec<f64> = (0..2).map(|k| gb[k] + (0..4).map(|c| gw[k * 4 + c] * xs[c]).sum::<f64>()).collect();
    let ow = set.get("nl.out.w").unwrap().data();
    let ob = set.get("nl.out.b").unwrap().data();
    for c in 0..4 {
        let want = xs[c] + ob[c] + (0..2).map(|k| ow[c * 2 + k] * gx[k]).sum::<f64>();
        assert!((g.value(y).data()[c] - want).abs() < 1e-12);
    }
}

#[test]
fn nonlocal_matches_pairwise_oracle() {
    for (c, h, w) in [(2, 2, 2), (4, 3, 3)] {
        for seed in 1..=5 {
            let (mut set, block) = nonlocal_params(c, seed);
            randomize(&mut set, seed + 50, 0.7);
            let x = rand_tensor(&[c, h, w], seed + 99);
            let (want, attn) = nonlocal_oracle(&x, &set, "nl");
            let got = nn_core::nonlocal_block(&x, &block, &set).unwrap();
            assert!(max_abs_diff(&got, &want) < 1e-6, "{c}x{h}x{w} seed {seed}");
            for row in &attn {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn nonlocal_attention_rows_sum_to_one() {
    let (mut set, block) = nonlocal_params(4, 8);
    randomize(&mut set, 9, 1.0);
    let x = rand_tensor(&[2, 4, 3, 4], 10);
    let mut g = Graph::new();
    let p = set.bind(&mut g, false);
    let xv = g.constant(x);
    let (_, attn) = block.forward_with_attention(&mut g, &p, xv).unwrap();
    let a = g.attention_weights(attn).unwrap();
    assert_eq!(a.len(), 2 * 12 * 12);
    for row in a.chunks(12) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn se_zero_excitation_halves() {
    let (mut set, block) = se_params(4, 2, 1);
    for t in set.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = rand_tensor(&[4, 3, 3], 2);
    let y = nn_core::se_block(&x, &block, &set).unwrap();
    assert!(max_abs_diff(&y, &x.map(|v| 0.5 * v)) == 0.0);
}

#[test]
fn se_scales_whole_channels() {
    let (mut set, block) = se_params(4, 2, 3);
    randomize(&mut set, 4, 0.8);
    let x = rand_tensor(&[4, 3, 3], 5).map(|v| v + 2.0);
    let y = nn_core::se_block(&x, &block, &set).unwrap();
    for (xc, yc) in x.data().chunks(9).zip(y.data().chunks(9)) {
        let r0 = yc[0] / xc[0];
        assert!(r0 > 0.0 && r0 < 1.0);
        for (a, b) in xc.iter().zip(yc) {
            assert!((b / a - r0).abs() < 1e-12);
        }
    }
}

#[test]
fn se_matches_oracle() {
    for seed in 1..=5 {
        let (mut set, block) = se_params(8, 2, seed);
        randomize(&mut set, seed + 20, 0.7);
        let x = rand_tensor(&[8, 4, 4], seed + 30);
        let (want, gates) = se_oracle(&x, &set, "se");
        assert!(max_abs_diff(&nn_core::se_block(&x, &block, &set).unwrap(), &want) < 1e-6);
        assert!(gates.iter().all(|&s| s > 0.0 && s < 1.0));
    }
}

#[test]
fn se_rejects_indivisible_channels() {
    let mut set = ParamSet::<f64>::default();
    let mut rng = seeded_rng(0);
    let r = SeBlock::new(&mut ParamBuilder::new(&mut set, &mut rng), "se", 6, 4);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn grad_check_examples() {
    let x = rand_tensor(&[3, 4], 1);
    let sq = |t: &Tensor<f64>| Ok((t.data().iter().map(|v| v * v).sum::<f64>(), t.map(|v| 2.0 * v)));
    assert!(grad_check(sq, &x, 1e-6).unwrap().passed);

    let (mut set, block) = nonlocal_params(2, 2);
    randomize(&mut set, 3, 0.5);
    let x = rand_tensor(&[1, 2, 2, 2], 4);
    let f = graph_fn(|g, xv| {
        let p = set.bind(g, false);
        block.forward(g, &p, xv)
    });
    assert!(grad_check(f, &x, 1e-4).unwrap().passed);

    let (mut set, block) = se_params(4, 2, 5);
    randomize(&mut set, 6, 0.5);
    let x = rand_tensor(&[1, 4, 2, 2], 7);
    let f = graph_fn(|g, xv| {
        let p = set.bind(g, false);
        block.forward(g, &p, xv)
    });
    assert!(grad_check(f, &x, 1e-4).unwrap().passed);

    // a wrong gradient is caught, a non-finite value is reported
    let wrong = |t: &Tensor<f64>| Ok((t.data().iter().map(|v| v * v).sum::<f64>(), t.map(|v| 2.1 * v)));
    assert!(!grad_check(wrong, &rand_tensor(&[4], 8), 1e-4).unwrap().passed);
    let nan = |t: &Tensor<f64>| Ok((f64::NAN, t.clone()));
    assert!(matches!(grad_check(nan, &rand_tensor(&[4], 8), 1e-4), Err(Error::Numerical(_))));
}

#[test]
fn gradient_suite() {
    for seed in GRAD_SEEDS {
        for case in nn_core_gradient_cases(seed).unwrap() {
            assert!(case.report.passed, "{} seed {}: {:?}", case.name, case.seed, case.report);
        }
    }
}

#[test]
fn init_is_seed_deterministic() {
    let build = |seed| {
        let (set, _) = residual_params(3, 4, 2, seed);
        set
    };
    assert_eq!(build(9).digest(), build(9).digest());
    assert_eq!(build(9), build(9));
    assert_ne!(build(9).digest(), build(10).digest());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_output_size(h in 3usize..12, k in prop::sample::select(vec![1usize, 3, 5]), stride in 1usize..3, pad in 0usize..3) {
        prop_assume!(h + 2 * pad >= k);
        let x = Tensor::<f64>::ones(&[1, h, h]);
        let w = Tensor::<f64>::ones(&[2, 1, k, k]);
        let y = nn_core::conv2d(&x, &w, None, stride, pad).unwrap();
        let ho = (h + 2 * pad - k) / stride + 1;
        prop_assert_eq!(y.shape(), &[2, ho, ho]);
        prop_assert!(y.all_finite());
    }

    #[test]
    fn conv_matches_direct_loops(seed in 0u64..1000, stride in 1usize..3, pad in 0usize..2) {
        let x = rand_tensor(&[2, 5, 6], seed);
        let w = rand_tensor(&[3, 2, 3, 3], seed + 1);
        let y = nn_core::conv2d(&x, &w, None, stride, pad).unwrap();
        prop_assert!(max_abs_diff(&y, &conv_direct(&x, &w, stride, pad)) < 1e-12);
    }
}
