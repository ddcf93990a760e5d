use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::data::{windowize, WindowSet};
use crate::search_space::{ActivationGene, LayerGene, MergeOp};
use crate::tensor::{check_gradients, ActivationKind};

const B: usize = 4;
const L: usize = 8;
const C: usize = 2;

fn layer(block: BlockKind, index: usize) -> LayerGene {
    let act = ActivationGene::pair(ActivationKind::Tanh, MergeOp::Average, ActivationKind::Sine);
    LayerGene {
        block,
        hidden_units: block.uses_hidden_units().then_some(200),
        kernel_size: block.is_decomposition().then_some(3),
        stride: (block == BlockKind::Patching).then_some(4),
        patch_length: (block == BlockKind::Patching).then_some(8),
        dropout: 0.2,
        activation1: act,
        activation2: block.has_second_activation().then(|| ActivationGene::single(ActivationKind::GELU)),
        skip: (index > 0).then_some(1),
    }
}

fn genotype(blocks: &[BlockKind], heads: bool) -> Genotype {
    Genotype {
        num_layers: blocks.len(),
        linear_projections: heads,
        layers: blocks.iter().enumerate().map(|(i, b)| layer(*b, i)).collect(),
    }
}

fn small() -> BuildOptions {
    BuildOptions {
        hidden_scale: 0.02,
        seed: 3,
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn loss_gradcheck(net: &NetworkInstance, training: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = randn(&mut rng, &[B, L, C]);
    let y = randn(&mut rng, &[B, L, C]);
    let r = check_gradients(&net.params, 1e-5, |g, p| {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(5);
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let out = net.forward(g, p, xv, training, &mut drop_rng)?;
        g.mse(out, yv)
    })
    .unwrap();
    r.max_rel_error
}

#[test]
fn tiling_examples() {
    assert_eq!(patch_tiling(16, 8, 4).unwrap(), (3, 0));
    assert_eq!(patch_tiling(10, 8, 4).unwrap(), (2, 2));
    assert!(patch_tiling(16, 36, 4).is_err());
    let g = Genotype {
        layers: vec![
            LayerGene {
                patch_length: Some(36),
                ..layer(BlockKind::Patching, 0)
            },
            layer(BlockKind::TSMixer, 1),
        ],
        ..genotype(&[BlockKind::Patching, BlockKind::TSMixer], false)
    };
    assert!(matches!(build_network(&g, Dims::square(24, 2), small()), Err(crate::Error::Config(_))));
}

#[test]
fn every_block_gradients() {
    for block in BlockKind::ALL {
        let net = build_network(&genotype(&[block, block], false), Dims::square(L, C), small()).unwrap();
        for training in [false, true] {
            let e = loss_gradcheck(&net, training);
            assert!(e < 1e-4, "{block} training={training}: {e}");
        }
    }
}

#[test]
fn full_network_gradients() {
    let g = genotype(&[BlockKind::Patching, BlockKind::DnonlinearConv, BlockKind::MTSMixer], true);
    let mut g2 = g.clone();
    g2.layers[2].skip = Some(2);
    for g in [g, g2] {
        let net = build_network(&g, Dims::square(L, C), small()).unwrap();
        let e = loss_gradcheck(&net, true);
        assert!(e < 1e-4, "{e}");
    }
}

#[test]
fn revin_gradients_and_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = randn(&mut rng, &[B, L, C]);
    let gamma = randn(&mut rng, &[1, 1, C]);
    let beta = randn(&mut rng, &[1, 1, C]);
    let r = check_gradients(&[x.clone(), gamma, beta], 1e-5, |g, p| {
        let (z, st) = revin_normalize(g, p[0], p[1], p[2])?;
        let z2 = g.activation(ActivationKind::Sine, z);
        let y = revin_denormalize(g, z2, p[1], p[2], &st)?;
        let s = g.square(y);
        Ok(g.mean(s))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);

    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let one = g.constant(Tensor::full(&[1, 1, C], 1.0));
    let zero = g.constant(Tensor::zeros(&[1, 1, C]));
    let (z, st) = revin_normalize(&mut g, xv, one, zero).unwrap();
    let back = revin_denormalize(&mut g, z, one, zero, &st).unwrap();
    for (a, b) in g.value(back).data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

fn set_identity(t: &mut Tensor) {
    let n = t.shape()[0];
    t.data_mut().fill(0.0);
    for i in 0..n {
        t.data_mut()[i * n + i] = 1.0;
    }
}

fn linear_decomp(index: usize, conv: bool) -> LayerGene {
    LayerGene {
        activation1: ActivationGene::single(ActivationKind::Linear),
        activation2: Some(ActivationGene::single(ActivationKind::Linear)),
        ..layer(if conv { BlockKind::DnonlinearConv } else { BlockKind::DnonlinearAvgpool }, index)
    }
}

#[test]
fn decomposition_identity_and_constant_input() {
    let g = Genotype {
        num_layers: 2,
        linear_projections: false,
        layers: vec![linear_decomp(0, false), linear_decomp(1, false)],
    };
    let mut net = build_network(&g, Dims::square(L, C), small()).unwrap();
    for name in ["layer1.dnonlinear_avgpool.w_trend", "layer1.dnonlinear_avgpool.w_seasonal"] {
        set_identity(net.param_mut(name).unwrap());
    }
    for (i, n) in net.names.clone().iter().enumerate() {
        if n.starts_with("layer1") && n.contains(".b_") || n.starts_with("layer2") {
            net.params[i].data_mut().fill(0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = randn(&mut rng, &[3, L, C]);
    let y = net.predict(&x).unwrap();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    // constant input: the trend equals the input and the seasonal part vanishes
    let mut gr = Graph::new();
    let c = gr.constant(Tensor::full(&[1, L, C], 2.5));
    let t = gr.avg_pool1d(c, 1, 5).unwrap();
    let s = gr.sub(c, t).unwrap();
    assert!(gr.value(t).data().iter().all(|v| (v - 2.5).abs() < 1e-15));
    assert!(gr.value(s).data().iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn conv_with_averaging_filter_matches_avgpool_block() {
    let mk = |conv: bool| Genotype {
        num_layers: 2,
        linear_projections: false,
        layers: vec![
            LayerGene {
                activation1: ActivationGene::single(ActivationKind::Tanh),
                ..linear_decomp(0, conv)
            },
            layer(BlockKind::TSMixer, 1),
        ],
    };
    let pool = build_network(&mk(false), Dims::square(L, C), small()).unwrap();
    let mut conv = build_network(&mk(true), Dims::square(L, C), small()).unwrap();
    for (i, n) in conv.names.clone().iter().enumerate() {
        let src = n.replace("dnonlinear_conv", "dnonlinear_avgpool");
        if let Some(t) = pool.param(&src) {
            conv.params[i] = t.clone();
        }
    }
    conv.param_mut("layer1.dnonlinear_conv.w_conv").unwrap().data_mut().fill(1.0 / 3.0);
    conv.param_mut("layer1.dnonlinear_conv.b_conv").unwrap().data_mut().fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&mut rng, &[5, L, C]);
    let a = pool.predict(&x).unwrap();
    let b = conv.predict(&x).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn mixer_split_merge_and_factor_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let xt = randn(&mut rng, &[2, L, 3]);
    let lin = ActivationGene::single(ActivationKind::Linear);
    // identity projections: the temporal stage reproduces its input
    let mut g = Graph::new();
    let x = g.constant(xt.clone());
    let mut eye = Tensor::zeros(&[L / 2, L / 2]);
    set_identity(&mut eye);
    let w = g.constant(eye);
    let b = g.constant(Tensor::zeros(&[L / 2]));
    let y = mixer_temporal(&mut g, x, 2, w, b, w, b, &lin, 0.0, false, &mut rng).unwrap();
    assert_eq!(g.value(y).data(), xt.data());

    // factor 1 against a direct per-channel MLP over the whole sequence
    let act = ActivationGene::single(ActivationKind::SiLU);
    let (w1t, b1t, w2t, b2t) = (randn(&mut rng, &[L, 5]), randn(&mut rng, &[5]), randn(&mut rng, &[5, L]), randn(&mut rng, &[L]));
    let mut g = Graph::new();
    let x = g.constant(xt.clone());
    let (w1, b1, w2, b2) = (g.constant(w1t), g.constant(b1t), g.constant(w2t), g.constant(b2t));
    let y = mixer_temporal(&mut g, x, 1, w1, b1, w2, b2, &act, 0.0, false, &mut rng).unwrap();
    let xp = g.permute(x, &[0, 2, 1]).unwrap();
    let h = g.linear(xp, w1, Some(b1)).unwrap();
    let h = apply_gene(&mut g, &act, h).unwrap();
    let o = g.linear(h, w2, Some(b2)).unwrap();
    let o = g.permute(o, &[0, 2, 1]).unwrap();
    assert_eq!(g.value(y).data(), g.value(o).data());
}

#[test]
fn structure_is_deterministic_and_shapes_hold() {
    for block in BlockKind::ALL {
        for heads in [false, true] {
            let g = genotype(&[block, BlockKind::TSMixer, block], heads);
            let a = build_network(&g, Dims::square(16, 3), small()).unwrap();
            let b = build_network(&g, Dims::square(16, 3), small()).unwrap();
            assert_eq!(a.num_parameters(), b.num_parameters());
            assert_eq!(a.params, b.params);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let x = randn(&mut rng, &[2, 16, 3]);
            assert_eq!(a.predict(&x).unwrap().shape(), &[2, 16, 3]);
        }
    }
}

#[test]
fn skip_changes_output_but_not_shape() {
    let g = genotype(&[BlockKind::TSMixer, BlockKind::Patching, BlockKind::DnonlinearAvgpool], false);
    let net = build_network(&g, Dims::square(L, C), small()).unwrap();
    let mut no_skip = net.clone();
    no_skip.layers[2].skip = None;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = randn(&mut rng, &[3, L, C]);
    let a = net.predict(&x).unwrap();
    let b = no_skip.predict(&x).unwrap();
    assert_eq!(a.shape(), b.shape());
    assert!(a.data().iter().zip(b.data()).any(|(u, v)| (u - v).abs() > 1e-6));
}

#[test]
fn prediction_is_batch_independent_and_repeatable() {
    let g = genotype(&[BlockKind::Patching, BlockKind::MTSMixer], true);
    let net = build_network(&g, Dims::square(L, C), small()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = randn(&mut rng, &[32, L, C]);
    let all = net.predict(&x).unwrap();
    assert_eq!(all, net.predict(&x).unwrap());
    let single = net.predict_chunked(&x, 1).unwrap();
    for (a, b) in all.data().iter().zip(single.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(matches!(net.predict(&randn(&mut rng, &[2, L + 1, C])), Err(crate::Error::Usage(_))));
}

fn series(rng: &mut ChaCha8Rng, len: usize, c: usize, noise: f64) -> Vec<f64> {
    (0..len * c)
        .map(|i| {
            let t = (i / c) as f64;
            let ch = (i % c) as f64;
            (t * 2.0 * std::f64::consts::PI / 8.0 + ch).sin() + noise * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

#[test]
fn copy_task_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let v = series(&mut rng, 400, C, 0.5);
    let w = windowize(&v, C, L).unwrap();
    let copy = WindowSet {
        inputs: w.inputs.clone(),
        targets: w.inputs.clone(),
    };
    let g = Genotype {
        num_layers: 2,
        linear_projections: false,
        layers: vec![linear_decomp(0, false), linear_decomp(1, false)],
    };
    let mut net = build_network(&g, Dims::square(L, C), small()).unwrap();
    for l in &mut net.layers {
        if let BlockModule::Decomposition { dropout, .. } = &mut l.block {
            *dropout = 0.0;
        }
    }
    let cfg = TrainConfig {
        epochs: 100,
        batch_size: 32,
        learning_rate: 1e-2,
        patience: 100,
        ..TrainConfig::default()
    };
    let out = train_child(&mut net, &copy, &[], &cfg).unwrap();
    assert!(out.train_rmse < 0.05, "train RMSE {}", out.train_rmse);
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let v = series(&mut rng, 300, C, 0.2);
    let train = windowize(&v[..200 * C], C, L).unwrap();
    let val = windowize(&v[200 * C..], C, L).unwrap();
    let g = genotype(&[BlockKind::Patching, BlockKind::DnonlinearConv], true);
    let cfg = TrainConfig {
        epochs: 3,
        max_train_windows: Some(100),
        ..TrainConfig::default()
    };
    let mut a = build_network(&g, Dims::square(L, C), small()).unwrap();
    let mut b = a.clone();
    let ra = train_child(&mut a, &train, &[&val], &cfg).unwrap();
    let rb = train_child(&mut b, &train, &[&val], &cfg).unwrap();
    assert_eq!(ra.val_rmse, rb.val_rmse);
    assert_eq!(a.params, b.params);

    let ck = NetworkCheckpoint::from_network(&a, None);
    let f = tempfile::NamedTempFile::new().unwrap();
    ck.save(f.path()).unwrap();
    let back = NetworkCheckpoint::load(f.path()).unwrap().restore().unwrap();
    assert_eq!(back.predict(&val.inputs).unwrap(), a.predict(&val.inputs).unwrap());
}
