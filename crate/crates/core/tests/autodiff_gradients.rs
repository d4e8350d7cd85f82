use maip::autodiff::{Graph, Tensor, Var};
use maip::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maip::autodiff::check::{check_op, op_suite, random_tensor};

#[test]
fn every_operation_matches_finite_differences() {
    let suite = op_suite(1).unwrap();
    assert!(suite.len() >= 20);
    for (name, report) in suite {
        assert!(report.probes > 0, "{name}");
        assert!(report.max_rel_error <= 1e-3, "{name}: {} at {}", report.max_rel_error, report.location);
    }
}

#[test]
fn l1_loss_values_and_sign_gradient() {
    let mut g = Graph::new();
    let v = Tensor::new(&[2, 2], vec![1.0, -2.0, 0.5, 0.0]).unwrap();
    let pred = g.parameter(Tensor::new(&[2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap());
    let target = g.constant(v.clone());
    let loss = g.l1_loss(pred, target).unwrap();
    assert_eq!(g.value(loss).data()[0], 1.0 + 2.0 + 0.5 + 0.0);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(pred).unwrap(), &[-1.0, 1.0, 1.0, 0.0]);
    assert!(g.grad(target).is_none());

    let mut g = Graph::new();
    let a = g.parameter(v.clone());
    let b = g.constant(v);
    let loss = g.l1_loss(a, b).unwrap();
    assert_eq!(g.value(loss).data()[0], 0.0);
}

#[test]
fn leaky_relu_values() {
    let mut g = Graph::new();
    let x = g.parameter(Tensor::new(&[2], vec![1.0f64, -2.0]).unwrap());
    let y = g.leaky_relu(x, 1e-4);
    assert_eq!(g.value(y).data()[0], 1.0);
    assert!((g.value(y).data()[1] + 0.0002).abs() < 1e-18);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1e-4]);
}

#[test]
fn identity_and_product_rules() {
    let mut g = Graph::new();
    let x = g.parameter(Tensor::scalar(3.0));
    g.backward(x).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0]);

    let mut g = Graph::new();
    let a = g.parameter(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let b = g.parameter(Tensor::new(&[3], vec![-1.0, 0.5, 4.0]).unwrap());
    let ab = g.mul(a, b).unwrap();
    let s = g.sum(ab);
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap(), g.value(b).data());
    assert_eq!(g.grad(b).unwrap(), g.value(a).data());
}

#[test]
fn fan_out_sums_paths() {
    // f = sum(x*x + 3x): two paths through x; df/dx = 2x + 3
    let mut g = Graph::new();
    let x = g.parameter(Tensor::new(&[2], vec![1.5, -4.0]).unwrap());
    let three = g.constant(Tensor::full(&[2], 3.0));
    let sq = g.mul(x, x).unwrap();
    let lin = g.mul(x, three).unwrap();
    let both = g.add(sq, lin).unwrap();
    let f = g.sum(both);
    g.backward(f).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0, -5.0]);
}

#[test]
fn backward_twice_needs_reset() {
    let mut g = Graph::new();
    let x = g.parameter(Tensor::full(&[2], 1.0));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::Graph(_))));
    g.reset_grads();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.parameter(Tensor::full(&[2], 1.0));
    assert!(g.backward(x).is_err());
}

#[test]
fn shape_mismatches_are_errors() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.add(a, b), Err(Error::DimensionMismatch { .. })));
    assert!(g.l1_loss(a, b).is_err());
    let c = g.constant(Tensor::zeros(&[2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(g.conv2d(c, w, None, 1, 1).is_err());
    let m = g.constant(Tensor::zeros(&[1, 3, 4]));
    assert!(g.mul_spatial(c, m).is_err());
}

#[test]
fn identity_kernel_and_concat_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut g = Graph::new();
    let x = g.constant(random_tensor(&mut rng, &[1, 5, 5]));
    let w = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    assert_eq!(g.value(y), g.value(x));
    let parts: Vec<Var> = (0..4).map(|_| g.constant(Tensor::zeros(&[1, 6, 7]))).collect();
    let cat = g.concat(&parts).unwrap();
    assert_eq!(g.shape(cat), &[4, 6, 7]);
    let s = g.constant(Tensor::zeros(&[2, 8, 8]));
    let w2 = g.constant(Tensor::zeros(&[3, 2, 3, 3]));
    let d = g.conv2d(s, w2, None, 2, 1).unwrap();
    assert_eq!(g.shape(d), &[3, 4, 4]);
}

#[test]
fn softmax_zero_row_is_uniform() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[4, 4]));
    let s = g.softmax_rows(a).unwrap();
    assert!(g.value(s).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn constant_only_graph_has_no_gradients() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::full(&[3], 2.0));
    let s = g.sum(a);
    g.backward(s).unwrap();
    assert!(g.grad(a).is_none());
    assert!(g.dump().contains("sum"));
}

#[test]
fn upsample_constant_stays_constant() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::full(&[2, 3, 4], 1.75f64));
    let u = g.upsample2x(a).unwrap();
    assert_eq!(g.shape(u), &[2, 6, 8]);
    assert!(g.value(u).data().iter().all(|&v| (v - 1.75).abs() < 1e-15));
}

proptest! {
    #[test]
    fn softmax_rows_are_stochastic(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let shifted = Tensor::new(&[rows, cols], t.data().iter().map(|v| v + shift).collect()).unwrap();
        let mut g = Graph::<f64>::new();
        let a = g.constant(t);
        let b = g.constant(shifted);
        let sa = g.softmax_rows(a).unwrap();
        let sb = g.softmax_rows(b).unwrap();
        for r in 0..rows {
            let row = &g.value(sa).data()[r * cols..(r + 1) * cols];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0 || cols == 1 && v == 1.0));
        }
        for (x, y) in g.value(sa).data().iter().zip(g.value(sb).data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn aln_output_is_centered(c in 2usize..8, hw in 1usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[c, hw, 1]);
        let mut g = Graph::<f64>::new();
        let a = g.constant(x.clone());
        let y = g.aln(a, 1e-5).unwrap();
        let yd = g.value(y).data();
        for p in 0..hw {
            let col: Vec<f64> = (0..c).map(|j| x.data()[j * hw + p]).collect();
            let mu = col.iter().sum::<f64>() / c as f64;
            let delta = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c as f64).sqrt();
            if delta >= 1e-3 {
                let m = (0..c).map(|j| yd[j * hw + p]).sum::<f64>() / c as f64;
                prop_assert!(m.abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn conv_gradients_random_shapes(cin in 1usize..4, cout in 1usize..4, h in 2usize..7, w in 2usize..7, stride in 1usize..3, dilation in 1usize..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[cin, h, w]);
        let k = random_tensor(&mut rng, &[cout, cin, 3, 3]);
        let r = check_op(&[x, k], seed, |g, v| g.conv2d(v[0], v[1], None, stride, dilation)).unwrap();
        prop_assert!(r.max_rel_error <= 1e-3, "{:?}", r);
    }
}
