use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dsp::FeatureKind;

fn random_input(net: &Network, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..net.input_len()).map(|_| rng.random_range(-8.0..2.0)).collect()
}

fn all_combos() -> Vec<(ArchitectureId, HeadConfig)> {
    let mut v = Vec::new();
    for arch in ArchitectureId::ALL {
        for head in [HeadConfig::TWO_CLASS, HeadConfig::FOUR_CLASS, HeadConfig::HIERARCHICAL] {
            if head.validate_for(arch).is_ok() {
                v.push((arch, head));
            }
        }
    }
    v
}

#[test]
fn perc_cnn_bottleneck_is_two_wide() {
    let b = build_model(ArchitectureId::PercCnn, HeadConfig::TWO_CLASS, 0).unwrap();
    let bott = b.block(block::BOTTLENECK).unwrap();
    assert_eq!(bott.layers, vec![LayerSpec::Dense { in_features: 320, out_features: 2 }]);
    let enc = b.block(block::ENCODER).unwrap();
    let kernels: Vec<usize> = enc
        .layers
        .iter()
        .filter_map(|l| match l {
            LayerSpec::Conv1d { kernel, .. } => Some(*kernel),
            _ => None,
        })
        .collect();
    assert_eq!(kernels, vec![6, 5, 5]);
}

#[test]
fn tabla_penultimate_dense_is_128() {
    for head in [HeadConfig::TWO_CLASS, HeadConfig::FOUR_CLASS, HeadConfig::HIERARCHICAL] {
        let b = build_model(ArchitectureId::TablaCnn, head, 0).unwrap();
        let net = Network::from_bundle(&b).unwrap();
        assert_eq!(net.embedding_width(), 128);
        assert_eq!(b.block(block::CLASS_HEAD).unwrap().input_shape, vec![128]);
        assert_eq!(b.features.config.kind, FeatureKind::Mel80);
    }
}

#[test]
fn hierarchical_vae_is_unsupported() {
    let err = build_model(ArchitectureId::PercVae, HeadConfig::HIERARCHICAL, 0).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)), "{err:?}");
}

#[test]
fn invalid_heads_rejected() {
    assert!(HeadConfig::new(3, 0).is_err());
    assert!(HeadConfig::new(2, 5).is_err());
    assert!(HeadConfig::new(4, 5).is_ok());
}

#[test]
fn architecture_names_round_trip() {
    for a in ArchitectureId::ALL {
        assert_eq!(a.as_str().parse::<ArchitectureId>().unwrap(), a);
    }
    assert!("resnet".parse::<ArchitectureId>().is_err());
}

#[test]
fn cnn_and_vae_encoders_match() {
    for seed in [0, 1, 99] {
        let cnn = build_model(ArchitectureId::PercCnn, HeadConfig::FOUR_CLASS, seed).unwrap();
        let vae = build_model(ArchitectureId::PercVae, HeadConfig::FOUR_CLASS, seed).unwrap();
        for name in [block::ENCODER, block::BOTTLENECK] {
            assert_eq!(cnn.block(name), vae.block(name));
        }
        let n: usize = [block::ENCODER, block::BOTTLENECK]
            .iter()
            .flat_map(|b| &cnn.block(b).unwrap().layers)
            .map(LayerSpec::param_len)
            .sum();
        assert_eq!(cnn.params[..n], vae.params[..n]);
    }
}

#[test]
fn vae_decoder_restores_input_shape() {
    let b = build_model(ArchitectureId::PercVae, HeadConfig::TWO_CLASS, 0).unwrap();
    let dec = b.block(block::DECODER).unwrap();
    let seq = Sequential::new(&dec.layers, &dec.input_shape, 0).unwrap();
    assert_eq!(seq.output_shape(), &[6, 64]);
}

#[test]
fn bundle_param_count_matches_specs() {
    for (arch, head) in all_combos() {
        let b = build_model(arch, head, 3).unwrap();
        assert_eq!(b.params.len(), b.expected_param_len());
        assert!(b.params.iter().all(|p| p.is_finite()));
    }
}

#[test]
fn inference_is_deterministic() {
    for (arch, head) in all_combos() {
        let b = build_model(arch, head, 5).unwrap();
        let net = Network::from_bundle(&b).unwrap();
        let mut ws = net.workspace();
        let x = random_input(&net, 1);
        let a = net.forward_classify(&x, &mut ws).unwrap();
        let c = net.forward_classify(&x, &mut ws).unwrap();
        assert_eq!(a, c);
        assert_eq!(forward_classify(&b, &x).unwrap(), a);
    }
}

#[test]
fn zeroed_head_gives_uniform_probabilities() {
    for (arch, head) in all_combos() {
        let mut b = build_model(arch, head, 2).unwrap();
        let mut offset = 0;
        for blk in &b.blocks.clone() {
            let len: usize = blk.layers.iter().map(LayerSpec::param_len).sum();
            if blk.name == block::CLASS_HEAD || blk.name == block::LOCATION_HEAD {
                let last = blk.layers.last().unwrap().param_len();
                b.params[offset + len - last..offset + len].fill(0.0);
            }
            offset += len;
        }
        let net = Network::from_bundle(&b).unwrap();
        let p = net.forward_classify(&random_input(&net, 4), &mut net.workspace()).unwrap();
        let u = 1.0 / head.n_cl as f64;
        assert!(p.class_probs().iter().all(|&q| (q - u).abs() < 1e-12), "{:?}", p.class_probs());
        if let Some(l) = p.location_probs() {
            assert!(l.iter().all(|&q| (q - 0.2).abs() < 1e-12));
        }
    }
}

#[test]
fn shape_mismatch_rejected() {
    let b = build_model(ArchitectureId::PercCnn, HeadConfig::TWO_CLASS, 0).unwrap();
    let net = Network::from_bundle(&b).unwrap();
    let err = net.forward_classify(&[0.0; 10], &mut net.workspace()).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
    // A mel-sized input does not fit an FFT model.
    assert!(net.forward_classify(&vec![0.0; 480], &mut net.workspace()).is_err());
}

#[test]
fn vae_loss_formula() {
    let cfg = VaeLossConfig::default();
    assert_eq!(cfg, VaeLossConfig { gamma: 0.001, beta: 3.0, reduction: Reduction::Sum });
    assert!((vae_loss(0.7, 0.2, 0.1, &cfg) - 0.7005).abs() < 1e-12);
    let zero = VaeLossConfig { gamma: 0.0, beta: 3.0, ..VaeLossConfig::default() };
    assert_eq!(vae_loss(0.7, 123.0, 45.0, &zero), 0.7);
}

#[test]
fn vae_loss_with_zero_gamma_is_classification_term() {
    let b = build_model(ArchitectureId::PercVae, HeadConfig::TWO_CLASS, 8).unwrap();
    let net = Network::from_bundle(&b).unwrap();
    let x = random_input(&net, 2);
    let t = [Target { class: 1, location: None }];
    let l = net.compute_loss(&[&x], &t, Some(&[[0.3, -1.1]]), &VaeLossConfig { gamma: 0.0, beta: 3.0, ..VaeLossConfig::default() }).unwrap();
    assert_eq!(l.total, l.classification);
    assert!(l.mse.unwrap() > 0.0 && l.kld.unwrap() >= 0.0);
    assert_eq!(net.classification_loss(), ClassificationLoss::Bce);
}

/// Network whose heads emit a large logit for the given targets.
fn confident_network(class: usize, loc: usize) -> Network {
    let mut b = build_model(ArchitectureId::PercCnn, HeadConfig::HIERARCHICAL, 1).unwrap();
    let mut offset = 0;
    for blk in &b.blocks.clone() {
        let len: usize = blk.layers.iter().map(LayerSpec::param_len).sum();
        let last = blk.layers.last().unwrap();
        let (target, n) = match blk.name.as_str() {
            block::CLASS_HEAD => (class, 4),
            block::LOCATION_HEAD => (loc, 5),
            _ => {
                offset += len;
                continue;
            }
        };
        let start = offset + len - last.param_len();
        b.params[start..offset + len].fill(0.0);
        b.params[offset + len - n + target] = 100.0;
        offset += len;
    }
    Network::from_bundle(&b).unwrap()
}

#[test]
fn hierarchical_perfect_prediction_loss_is_at_clamp_floor() {
    let net = confident_network(2, 3);
    let x = random_input(&net, 0);
    let l = net.compute_loss(&[&x], &[Target { class: 2, location: Some(3) }], None, &VaeLossConfig::default()).unwrap();
    assert!(l.total <= 2e-6, "{l:?}");
    assert!(l.location.is_some());
    let wrong = net.compute_loss(&[&x], &[Target { class: 0, location: Some(3) }], None, &VaeLossConfig::default()).unwrap();
    assert!(wrong.total > 10.0);
}

#[test]
fn target_head_mismatch_rejected() {
    let b = build_model(ArchitectureId::PercCnn, HeadConfig::TWO_CLASS, 0).unwrap();
    let net = Network::from_bundle(&b).unwrap();
    let x = random_input(&net, 0);
    let vae = VaeLossConfig::default();
    for t in [Target { class: 2, location: None }, Target { class: 0, location: Some(1) }] {
        assert!(matches!(net.compute_loss(&[&x], &[t], None, &vae), Err(Error::InvalidArgument(_))));
    }
    let h = Network::from_bundle(&build_model(ArchitectureId::PercCnn, HeadConfig::HIERARCHICAL, 0).unwrap()).unwrap();
    assert!(h.compute_loss(&[&x], &[Target { class: 1, location: None }], None, &vae).is_err());
    assert!(h.compute_loss(&[&x], &[Target { class: 1, location: Some(5) }], None, &vae).is_err());
}

#[test]
fn batch_loss_is_mean_of_sample_losses() {
    let b = build_model(ArchitectureId::PercVae, HeadConfig::FOUR_CLASS, 3).unwrap();
    let net = Network::from_bundle(&b).unwrap();
    let xs: Vec<Vec<f64>> = (0..3).map(|i| random_input(&net, i)).collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let ts: Vec<Target> = (0..3).map(|i| Target { class: i, location: None }).collect();
    let noise = [[0.1, 0.2], [-0.5, 0.0], [1.0, -1.0]];
    let vae = VaeLossConfig::default();
    let batch = net.compute_loss(&refs, &ts, Some(&noise), &vae).unwrap();
    let mut total = 0.0;
    for i in 0..3 {
        total += net.compute_loss(&refs[i..=i], &ts[i..=i], Some(&noise[i..=i]), &vae).unwrap().total;
    }
    assert!((batch.total - total / 3.0).abs() < 1e-12);
    assert!((batch.total - vae_loss(batch.classification, batch.mse.unwrap(), batch.kld.unwrap(), &vae)).abs() < 1e-12);
}

#[test]
fn export_round_trips_through_f32() {
    let b = build_model(ArchitectureId::PercCnn, HeadConfig::TWO_CLASS, 4).unwrap();
    let net = Network::from_bundle(&b).unwrap();
    let mut c = b.clone();
    net.export_params(&mut c);
    assert_eq!(b, c);
}

#[test]
fn from_parts_rejects_wrong_param_count() {
    let b = build_model(ArchitectureId::PercCnn, HeadConfig::TWO_CLASS, 4).unwrap();
    let mut params: Vec<f64> = b.params.iter().map(|&p| f64::from(p)).collect();
    params.pop();
    assert!(Network::from_parts(b.architecture, b.head, &b.blocks, params, b.features, None).is_err());
}

fn tiny_meta() -> FeatureMeta {
    FeatureMeta { config: FeatureConfig::new(FeatureKind::Fft64), offset: 0.3, scale: 1.7 }
}

/// Small stand-ins for the three architectures, for finite-difference checks.
pub(crate) fn tiny_network(arch: ArchitectureId, head: HeadConfig, seed: u64) -> Network {
    let enc_in = [2usize, 8];
    let mut blocks = Vec::new();
    match arch {
        ArchitectureId::TablaCnn => {
            blocks.push(BlockSpec {
                name: block::ENCODER.into(),
                input_shape: enc_in.to_vec(),
                layers: vec![
                    LayerSpec::Reshape { shape: vec![1, 2, 8] },
                    LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: [1, 3], stride: [1, 2], padding: [0, 0] },
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                    LayerSpec::Dense { in_features: 12, out_features: 5 },
                    LayerSpec::Relu,
                ],
            });
            blocks.push(BlockSpec { name: block::CLASS_HEAD.into(), input_shape: vec![5], layers: vec![dense(5, head.n_cl)] });
            if head.is_hierarchical() {
                blocks.push(BlockSpec { name: block::LOCATION_HEAD.into(), input_shape: vec![5], layers: vec![dense(5, 5)] });
            }
        }
        _ => {
            blocks.push(BlockSpec {
                name: block::ENCODER.into(),
                input_shape: enc_in.to_vec(),
                layers: vec![
                    LayerSpec::Conv1d { in_channels: 2, out_channels: 3, kernel: 3, stride: 2, padding: 0 },
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                ],
            });
            blocks.push(BlockSpec { name: block::BOTTLENECK.into(), input_shape: vec![9], layers: vec![dense(9, 2)] });
            if arch == ArchitectureId::PercVae {
                blocks.push(BlockSpec { name: block::LOG_VAR.into(), input_shape: vec![9], layers: vec![dense(9, 2)] });
            }
            blocks.push(BlockSpec { name: block::CLASS_HEAD.into(), input_shape: vec![2], layers: vec![dense(2, head.n_cl)] });
            if head.is_hierarchical() {
                blocks.push(BlockSpec {
                    name: block::LOCATION_HEAD.into(),
                    input_shape: vec![9],
                    layers: vec![dense(9, 4), LayerSpec::Relu, dense(4, 5)],
                });
            }
            if arch == ArchitectureId::PercVae {
                blocks.push(BlockSpec {
                    name: block::DECODER.into(),
                    input_shape: vec![2],
                    layers: vec![
                        dense(2, 9),
                        LayerSpec::Relu,
                        LayerSpec::Reshape { shape: vec![3, 3] },
                        LayerSpec::TransposedConv1d {
                            in_channels: 3,
                            out_channels: 2,
                            kernel: 3,
                            stride: 2,
                            padding: 0,
                            output_padding: 1,
                        },
                    ],
                });
            }
        }
    }
    let params: Vec<f64> = init_params(&blocks, seed).unwrap().into_iter().map(f64::from).collect();
    Network::from_parts(arch, head, &blocks, params, tiny_meta(), None).unwrap()
}

pub(crate) fn loss_of(net: &Network, x: &[f64], t: &Target, noise: Option<[f64; 2]>, vae: &VaeLossConfig) -> f64 {
    net.sample_loss(x, t, noise, vae, &mut net.workspace(), None).unwrap().total
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    let mut skipped = 0;
    for (arch, head) in all_combos() {
        for trial in 0..4 {
            let reduction = if trial % 2 == 0 { Reduction::Sum } else { Reduction::Mean };
            let vae = VaeLossConfig { gamma: 0.3, beta: 3.0, reduction };
            let net = tiny_network(arch, head, trial * 7 + 1);
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = Target {
                class: rng.random_range(0..head.n_cl),
                location: head.is_hierarchical().then(|| rng.random_range(0..5)),
            };
            let noise = (arch == ArchitectureId::PercVae).then(|| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let mut grads = vec![0.0; net.params().len()];
            let mut ws = net.workspace();
            net.sample_loss(&x, &t, noise, &vae, &mut ws, Some((&mut grads, 1.0))).unwrap();
            for i in 0..grads.len() {
                let fd = |h: f64| {
                    let mut p = net.clone();
                    p.params_mut()[i] += h;
                    let up = loss_of(&p, &x, &t, noise, &vae);
                    p.params_mut()[i] -= 2.0 * h;
                    let down = loss_of(&p, &x, &t, noise, &vae);
                    (up - down) / (2.0 * h)
                };
                let (n1, n2) = (fd(1e-5), fd(5e-6));
                if (n1 - n2).abs() > 1e-5 * (1.0 + n1.abs()) {
                    skipped += 1;
                    continue;
                }
                let a = grads[i];
                assert!(
                    (a - n1).abs() <= 1e-6 + 1e-3 * a.abs().max(n1.abs()),
                    "{arch} {head:?} param {i}: analytic {a} vs numeric {n1}"
                );
                checked += 1;
            }
        }
    }
    assert!(skipped * 20 < checked, "{skipped} kinks skipped of {checked}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn probabilities_sum_to_one(seed in 0u64..1000, combo in 0usize..8) {
        let combos = all_combos();
        let (arch, head) = combos[combo % combos.len()];
        let net = tiny_network(arch, head, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-50.0..50.0)).collect();
        let p = net.forward_classify(&x, &mut net.workspace()).unwrap();
        prop_assert!((p.class_probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        if let Some(l) = p.location_probs() {
            prop_assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
