use super::*;

fn small(frames: usize) -> MBANetConfig {
    MBANetConfig {
        frames,
        height: 8,
        width: 8,
        base_channels: 4,
        fu_channels: 4,
        ..MBANetConfig::default()
    }
}

fn run(cfg: &MBANetConfig, params: &ParamSet<f64>, z: &NoiseInput<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let zv = g.constant(z.z.clone());
    let out = net_forward(&mut g, cfg, params, &bound, zv).unwrap();
    g.value(out).clone()
}

fn zeroed(params: &ParamSet<f64>) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (name, t) in params.iter() {
        p.insert(name, Tensor::zeros(t.shape())).unwrap();
    }
    p
}

#[test]
fn init_is_deterministic() {
    let cfg = small(2);
    let a = init_params::<f64>(&cfg, 7).unwrap();
    let b = init_params::<f64>(&cfg, 7).unwrap();
    let c = init_params::<f64>(&cfg, 8).unwrap();
    assert_eq!(a.len(), b.len());
    for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta, tb);
    }
    assert_ne!(a.get("branch0.stem.conv1.weight"), c.get("branch0.stem.conv1.weight"));
}

#[test]
fn attention_scale_starts_at_one_and_biases_at_zero() {
    let params = init_params::<f64>(&small(3), 1).unwrap();
    assert_eq!(params.get(ATTENTION_SCALE).unwrap().data(), &[1.0; 3]);
    assert_eq!(params.get(ATTENTION_MATRIX).unwrap().shape(), &[3, 3]);
    for (name, t) in params.iter() {
        if name.ends_with(".bias") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn kaiming_variance() {
    let cfg = MBANetConfig::new(1, 32, 32);
    let params = init_params::<f64>(&cfg, 3).unwrap();
    let w = params.get("branch0.dec1.conv1.weight").unwrap();
    let fan_in = w.shape()[1] * 9;
    let expect = 2.0 / (fan_in as f64 * (1.0 + 1e-8));
    let n = w.len() as f64;
    let mean = w.data().iter().sum::<f64>() / n;
    let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(w.len() > 50_000);
    assert!((var / expect - 1.0).abs() < 0.1, "{var} vs {expect}");
}

#[test]
fn branch_output_shape_and_purity() {
    let cfg = MBANetConfig::new(2, 32, 32);
    let params = init_params::<f64>(&cfg, 5).unwrap();
    let z = NoiseInput::<f64>::sample(&MBANetConfig::new(1, 32, 32), 9);
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = g.constant(z.z.clone());
    let b0 = branch_forward(&mut g, &cfg, &params, &bound, 0, x).unwrap();
    let b0_again = branch_forward(&mut g, &cfg, &params, &bound, 0, x).unwrap();
    assert_eq!(g.shape(b0), &[1, 32, 32]);
    assert_eq!(g.value(b0), g.value(b0_again));
}

#[test]
fn branches_with_copied_params_agree() {
    let cfg = small(2);
    let params = init_params::<f64>(&cfg, 5).unwrap();
    let mut copied = ParamSet::new();
    for (name, _) in params.iter() {
        let src = name
            .strip_prefix("branch1.")
            .map(|rest| format!("branch0.{rest}"))
            .unwrap_or_else(|| name.to_string());
        copied.insert(name, params.get(&src).unwrap().clone()).unwrap();
    }
    let z = NoiseInput::<f64>::sample(&MBANetConfig::new(1, 8, 8), 2);
    let mut g = Graph::new();
    let bound = copied.bind(&mut g);
    let x = g.constant(z.z.clone());
    let a = branch_forward(&mut g, &cfg, &copied, &bound, 0, x).unwrap();
    let b = branch_forward(&mut g, &cfg, &copied, &bound, 1, x).unwrap();
    assert_eq!(g.value(a), g.value(b));
}

#[test]
fn zero_parameters_give_zero_branch_and_half_fusion() {
    let cfg = small(3);
    let params = zeroed(&init_params::<f64>(&cfg, 1).unwrap());
    let z = NoiseInput::<f64>::sample(&cfg, 4);
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let zv = g.constant(Tensor::new(&[1, 8, 8], z.z.data()[..64].to_vec()).unwrap());
    let b = branch_forward(&mut g, &cfg, &params, &bound, 0, zv).unwrap();
    assert!(g.value(b).data().iter().all(|&v| v == 0.0));
    let f = fusion_unit(&mut g, &cfg, &params, &bound, &[b, b, b]).unwrap();
    assert!(g.value(f).data().iter().all(|&v| v == 0.5));
    assert!(fusion_unit(&mut g, &cfg, &params, &bound, &[b, b]).is_err());
}

#[test]
fn fusion_is_bounded_and_permutation_equivariant() {
    let cfg = small(3);
    let params = init_params::<f64>(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let inputs: Vec<Var> = (0..3)
        .map(|_| {
            let d = (0..64).map(|_| StandardUniform.sample(&mut rng)).collect::<Vec<f64>>();
            g.constant(Tensor::new(&[1, 8, 8], d.iter().map(|v| 4.0 * v - 2.0).collect()).unwrap())
        })
        .collect();
    let f = fusion_unit(&mut g, &cfg, &params, &bound, &inputs).unwrap();
    assert!(g.value(f).data().iter().all(|&v| v > 0.0 && v < 1.0));

    // permute branch order and the first conv's input channels alike
    let perm = [2usize, 0, 1];
    let mut permuted = ParamSet::new();
    for (name, t) in params.iter() {
        if name == "fusion.conv1.weight" {
            let (co, ci) = (t.shape()[0], t.shape()[1]);
            let mut d = vec![0.0; t.len()];
            for o in 0..co {
                for (new_c, &old_c) in perm.iter().enumerate() {
                    let src = (o * ci + old_c) * 9;
                    let dst = (o * ci + new_c) * 9;
                    d[dst..dst + 9].copy_from_slice(&t.data()[src..src + 9]);
                }
            }
            permuted.insert(name, Tensor::new(t.shape(), d).unwrap()).unwrap();
        } else {
            permuted.insert(name, t.clone()).unwrap();
        }
    }
    let bound2 = permuted.bind(&mut g);
    let reordered: Vec<Var> = perm.iter().map(|&i| inputs[i]).collect();
    let f2 = fusion_unit(&mut g, &cfg, &permuted, &bound2, &reordered).unwrap();
    for (a, b) in g.value(f).data().iter().zip(g.value(f2).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn attention_case(a: Vec<f64>, w: Vec<f64>, f: &Tensor<f64>) -> Tensor<f64> {
    let l = w.len();
    let mut g = Graph::new();
    let av = g.constant(Tensor::new(&[l, l], a).unwrap());
    let wv = g.constant(Tensor::new(&[l], w).unwrap());
    let fv = g.constant(f.clone());
    let out = branch_attention(&mut g, av, wv, fv).unwrap();
    g.value(out).clone()
}

#[test]
fn branch_attention_closed_forms() {
    let f = Tensor::new(&[3, 2, 2], (0..12).map(|i| (i as f64 * 0.37).sin().abs()).collect()).unwrap();
    let mean: Vec<f64> = (0..4).map(|p| (0..3).map(|c| f.data()[c * 4 + p]).sum::<f64>() / 3.0).collect();

    let out = attention_case(vec![0.0; 9], vec![1.0; 3], &f);
    for c in 0..3 {
        for p in 0..4 {
            assert!((out.data()[c * 4 + p] - mean[p]).abs() < 1e-15);
        }
    }

    let mut diag = vec![0.0; 9];
    for i in 0..3 {
        diag[i * 4] = 60.0;
    }
    let out = attention_case(diag, vec![1.0; 3], &f);
    for (a, b) in out.data().iter().zip(f.data()) {
        assert!((a - b).abs() < 1e-20f64.max(2.0 * (-60.0f64).exp()));
    }

    let out = attention_case(vec![0.0; 9], vec![2.0, 1.0, 1.0], &f);
    for p in 0..4 {
        assert_eq!(out.data()[p], 2.0 * out.data()[4 + p]);
    }
}

#[test]
fn network_shape_bounds_and_determinism() {
    let cfg = small(3);
    let params = init_params::<f64>(&cfg, 21).unwrap();
    let z = NoiseInput::sample(&cfg, 22);
    assert!(z.z.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    let out = run(&cfg, &params, &z);
    assert_eq!(out.shape(), &[3, 8, 8]);
    assert_eq!(out, run(&cfg, &params, &z));
    let att = AttentionState::from_params(&params).unwrap();
    let mix = att.mixing();
    for r in 0..3 {
        assert!((mix.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    for (i, plane) in out.data().chunks(64).enumerate() {
        assert!(plane.iter().all(|v| v.abs() <= att.w[i].abs() + 1e-12));
    }
}

#[test]
fn single_frame_degenerates() {
    let cfg = small(1);
    let params = init_params::<f64>(&cfg, 2).unwrap();
    let att = AttentionState::from_params(&params).unwrap();
    assert_eq!(att.mixing().as_slice(), &[1.0]);
    let out = run(&cfg, &params, &NoiseInput::sample(&cfg, 3));
    assert_eq!(out.shape(), &[1, 8, 8]);
}

#[test]
fn ablation_variants_build() {
    for (ba, mb, norm) in [(false, true, NormKind::Aln), (true, false, NormKind::Aln), (true, true, NormKind::Batch)] {
        let cfg = MBANetConfig {
            branch_attention: ba,
            multi_branch: mb,
            norm,
            ..small(2)
        };
        let params = init_params::<f64>(&cfg, 4).unwrap();
        assert_eq!(params.get(ATTENTION_SCALE).is_some(), ba);
        assert_eq!(params.get("branch1.stem.conv1.weight").is_some(), mb);
        let out = run(&cfg, &params, &NoiseInput::sample(&cfg, 5));
        assert_eq!(out.shape(), &[2, 8, 8]);
        assert!(out.is_finite());
    }
}

#[test]
fn rejects_wrong_input_shape() {
    let cfg = small(2);
    let params = init_params::<f64>(&cfg, 4).unwrap();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let z = g.constant(Tensor::zeros(&[2, 8, 16]));
    assert!(net_forward(&mut g, &cfg, &params, &bound, z).is_err());
}

#[test]
fn fusion_scale_shrinks_only_the_output_conv() {
    let base = small(2);
    let scaled = MBANetConfig {
        fusion_init_scale: 0.5,
        ..base.clone()
    };
    let unit = MBANetConfig {
        fusion_init_scale: 1.0,
        ..base
    };
    let a = init_params::<f64>(&scaled, 9).unwrap();
    let b = init_params::<f64>(&unit, 9).unwrap();
    for (name, t) in a.iter() {
        let u = b.get(name).unwrap();
        if name == "fusion.conv3.weight" {
            for (x, y) in t.data().iter().zip(u.data()) {
                assert_eq!(*x, 0.5 * y);
            }
        } else {
            assert_eq!(t, u, "{name}");
        }
    }
}

#[test]
fn seed_selection_maximizes_mixing_determinant() {
    let cfg = small(3);
    let best = best_conditioned_seed(&cfg, 0..6).unwrap();
    let det = |s| {
        let p = init_params::<f64>(&cfg, s).unwrap();
        AttentionState::from_params(&p).unwrap().mixing().determinant().unwrap().abs()
    };
    for s in 0..6 {
        assert!(det(best) >= det(s));
    }
    assert!(best_conditioned_seed(&cfg, 3..3).is_err());
}
