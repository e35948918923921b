use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::loss::{mse_grad, softmax_ce_grad};
use super::*;
use crate::Error;

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
}

fn conv1d(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> LayerSpec {
    LayerSpec::Conv1d { in_channels: cin, out_channels: cout, kernel, stride, padding }
}

#[test]
fn tensor_shape_must_match() {
    assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
}

#[test]
fn conv1d_identity_kernel() {
    let x = t(&[1, 5], &[1.0, -2.0, 3.0, 0.5, 4.0]);
    let y = conv1d_forward(&x, &conv1d(1, 1, 1, 1, 0), &[1.0], &[0.0]).unwrap();
    assert_eq!(y, x);
}

#[test]
fn conv1d_adjacent_sums() {
    let x = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
    let y = conv1d_forward(&x, &conv1d(1, 1, 2, 1, 0), &[1.0, 1.0], &[0.0]).unwrap();
    assert_eq!(y.values(), &[3.0, 5.0, 7.0]);
    assert_eq!(y.shape(), &[1, 3]);
}

#[test]
fn conv1d_shape_mismatch() {
    let x = t(&[2, 4], &[0.0; 8]);
    assert!(conv1d_forward(&x, &conv1d(1, 1, 2, 1, 0), &[1.0, 1.0], &[0.0]).is_err());
    let short = t(&[1, 1], &[0.0]);
    assert!(conv1d_forward(&short, &conv1d(1, 1, 2, 1, 0), &[1.0, 1.0], &[0.0]).is_err());
}

// Direct nested-loop oracle.
fn conv1d_oracle(x: &[f64], cin: usize, len: usize, w: &[f64], b: &[f64], cout: usize, k: usize, s: usize, p: usize) -> Vec<f64> {
    let lout = (len + 2 * p - k) / s + 1;
    let mut out = vec![0.0; cout * lout];
    for co in 0..cout {
        for o in 0..lout {
            let mut acc = b[co];
            for ci in 0..cin {
                for j in 0..k {
                    let idx = (o * s + j) as isize - p as isize;
                    if idx >= 0 && (idx as usize) < len {
                        acc += w[(co * cin + ci) * k + j] * x[ci * len + idx as usize];
                    }
                }
            }
            out[co * lout + o] = acc;
        }
    }
    out
}

#[test]
fn conv1d_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let cin = rng.random_range(1..4);
        let cout = rng.random_range(1..4);
        let k = rng.random_range(1..6);
        let s = rng.random_range(1..4);
        let p = rng.random_range(0..3);
        let len = rng.random_range(k..k + 20);
        let x: Vec<f64> = (0..cin * len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..cin * cout * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = conv1d_forward(&t(&[cin, len], &x), &conv1d(cin, cout, k, s, p), &w, &b).unwrap();
        let oracle = conv1d_oracle(&x, cin, len, &w, &b, cout, k, s, p);
        for (a, o) in y.values().iter().zip(&oracle) {
            assert!((a - o).abs() <= 1e-12);
        }
    }
}

#[test]
fn conv2d_matches_oracle_on_rows() {
    // A 1 x kw kernel over [1, H, W] equals an independent conv1d per row.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w, kw) = (3, 12, 3);
    let x: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    let wt: Vec<f64> = (0..kw).map(|_| rng.random_range(-1.0..1.0)).collect();
    let spec = LayerSpec::Conv2d { in_channels: 1, out_channels: 1, kernel: [1, kw], stride: [1, 2], padding: [0, 0] };
    let y = conv2d_forward(&t(&[1, h, w], &x), &spec, &wt, &[0.25]).unwrap();
    assert_eq!(y.shape(), &[1, 3, 5]);
    for r in 0..h {
        let oracle = conv1d_oracle(&x[r * w..(r + 1) * w], 1, w, &wt, &[0.25], 1, kw, 2, 0);
        for (a, o) in y.values()[r * 5..(r + 1) * 5].iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-12);
        }
    }
}

#[test]
fn relu_and_dense_identity() {
    assert_eq!(relu(&t(&[3], &[-1.0, 0.0, 2.0])).values(), &[0.0, 0.0, 2.0]);
    let x = t(&[3], &[0.3, -1.2, 5.0]);
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let y = dense_forward(&x, &LayerSpec::Dense { in_features: 3, out_features: 3 }, &eye, &[0.0; 3]).unwrap();
    assert_eq!(y, x);
    assert_eq!(flatten(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).shape(), &[4]);
}

#[test]
fn transposed_conv_restores_lengths() {
    for (len, k, s, op) in [(64usize, 6usize, 2usize, 0usize), (30, 5, 2, 1), (13, 5, 2, 0)] {
        let down = conv1d(1, 1, k, s, 0).output_shape(&[1, len]).unwrap()[1];
        let spec = LayerSpec::TransposedConv1d { in_channels: 1, out_channels: 1, kernel: k, stride: s, padding: 0, output_padding: op };
        assert_eq!(spec.output_shape(&[1, down]).unwrap()[1], len);
    }
}

#[test]
fn transposed_conv_scatter_example() {
    let spec = LayerSpec::TransposedConv1d { in_channels: 1, out_channels: 1, kernel: 2, stride: 2, padding: 0, output_padding: 0 };
    let y = transposed_conv1d_forward(&t(&[1, 2], &[1.0, 2.0]), &spec, &[1.0, 10.0], &[0.0]).unwrap();
    assert_eq!(y.values(), &[1.0, 10.0, 2.0, 20.0]);
}

#[test]
fn backward_before_forward_is_state_error() {
    let seq = Sequential::new(&[LayerSpec::Dense { in_features: 2, out_features: 1 }], &[2], 0).unwrap();
    let mut ws = seq.workspace();
    let mut grads = vec![0.0; 3];
    let err = seq.backward(&[0.0; 3], &mut ws, &[1.0], &mut grads).unwrap_err();
    assert!(matches!(err, Error::State(_)));
}

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<LayerSpec>, Vec<usize>) {
    match rng.random_range(0..6) {
        0 => {
            let c = rng.random_range(1..4);
            (vec![conv1d(c, rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..3), rng.random_range(0..2))], vec![c, rng.random_range(6..14)])
        }
        1 => {
            let c = rng.random_range(1..3);
            let spec = LayerSpec::Conv2d {
                in_channels: c,
                out_channels: rng.random_range(1..3),
                kernel: [rng.random_range(1..3), rng.random_range(1..4)],
                stride: [rng.random_range(1..3), rng.random_range(1..3)],
                padding: [rng.random_range(0..2), rng.random_range(0..2)],
            };
            (vec![spec], vec![c, rng.random_range(3..6), rng.random_range(5..9)])
        }
        2 => {
            let c = rng.random_range(1..4);
            let s = rng.random_range(1..3);
            let spec = LayerSpec::TransposedConv1d {
                in_channels: c,
                out_channels: rng.random_range(1..4),
                kernel: rng.random_range(1..5),
                stride: s,
                padding: 0,
                output_padding: rng.random_range(0..s),
            };
            (vec![spec], vec![c, rng.random_range(2..8)])
        }
        3 => {
            let n = rng.random_range(1..8);
            (vec![LayerSpec::Dense { in_features: n, out_features: rng.random_range(1..6) }], vec![n])
        }
        4 => (vec![LayerSpec::Relu], vec![rng.random_range(1..10)]),
        _ => {
            // Two-layer toy net.
            let c = rng.random_range(1..3);
            let len = rng.random_range(6..10);
            let cout = rng.random_range(1..3);
            let out_len = (len - 3) / 1 + 1;
            (
                vec![conv1d(c, cout, 3, 1, 0), LayerSpec::Relu, LayerSpec::Flatten, LayerSpec::Dense { in_features: cout * out_len, out_features: 2 }],
                vec![c, len],
            )
        }
    }
}

fn near_relu_kink(seq: &Sequential, ws: &Workspace) -> bool {
    seq.specs()
        .enumerate()
        .any(|(i, s)| *s == LayerSpec::Relu && ws.activation(i).iter().any(|v| v.abs() < 1e-3))
}

#[test]
fn layer_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-4;
    let mut checked = 0;
    while checked < 120 {
        let (specs, shape) = random_case(&mut rng);
        let seq = Sequential::new(&specs, &shape, 0).unwrap();
        let params: Vec<f64> = (0..seq.param_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n_in: usize = shape.iter().product();
        let input: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n_out: usize = seq.output_shape().iter().product();
        let upstream: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ws = seq.workspace();
        seq.forward(&params, &input, &mut ws).unwrap();
        if near_relu_kink(&seq, &ws) {
            continue;
        }
        let mut grads = vec![0.0; params.len()];
        seq.backward(&params, &mut ws, &upstream, &mut grads).unwrap();
        let input_grad = ws.input_grad().to_vec();

        let objective = |p: &[f64], x: &[f64]| {
            let mut w = seq.workspace();
            seq.forward(p, x, &mut w).unwrap();
            w.output().iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>()
        };
        let close = |a: f64, n: f64| (a - n).abs() <= 1e-3 * a.abs().max(n.abs()) + 1e-6;
        for k in 0..params.len() {
            let (mut hi, mut lo) = (params.clone(), params.clone());
            hi[k] += h;
            lo[k] -= h;
            let numeric = (objective(&hi, &input) - objective(&lo, &input)) / (2.0 * h);
            assert!(close(grads[k], numeric), "{specs:?} param {k}: {} vs {numeric}", grads[k]);
        }
        for k in 0..input.len() {
            let (mut hi, mut lo) = (input.clone(), input.clone());
            hi[k] += h;
            lo[k] -= h;
            let numeric = (objective(&params, &hi) - objective(&params, &lo)) / (2.0 * h);
            assert!(close(input_grad[k], numeric), "{specs:?} input {k}: {} vs {numeric}", input_grad[k]);
        }
        checked += 1;
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let specs = [conv1d(2, 3, 3, 2, 1), LayerSpec::Relu, LayerSpec::Flatten, LayerSpec::Dense { in_features: 12, out_features: 2 }];
    let seq = Sequential::new(&specs, &[2, 8], 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params: Vec<f64> = (0..seq.param_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let input: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ws = seq.workspace();
    seq.forward(&params, &input, &mut ws).unwrap();
    let mut grads = vec![0.0; params.len()];
    seq.backward(&params, &mut ws, &[0.0, 0.0], &mut grads).unwrap();
    assert!(grads.iter().all(|&g| g == 0.0));
}

#[test]
fn relu_gradient_zero_for_negative_input() {
    let seq = Sequential::new(&[LayerSpec::Relu], &[2], 0).unwrap();
    let mut ws = seq.workspace();
    seq.forward(&[], &[-0.5, 0.5], &mut ws).unwrap();
    seq.backward(&[], &mut ws, &[1.0, 1.0], &mut []).unwrap();
    assert_eq!(ws.input_grad(), &[0.0, 1.0]);
}

#[test]
fn loss_examples() {
    assert!((bce_loss(&[0.5], &[1]).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
    assert!(ce_loss(&[0.0, 1.0, 0.0], 3, &[1]).unwrap() <= 1e-6);
    assert!(ce_loss(&[0.2, 0.8], 2, &[2]).is_err());
    assert!(bce_loss(&[0.2], &[2]).is_err());
    let x = [0.1, -0.4, 2.0];
    assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
}

#[test]
fn kld_examples() {
    assert_eq!(kld_gaussian_standard(&LatentDistribution::default()), 0.0);
    let lat = LatentDistribution { mu: [1.0, 0.0], log_var: [0.0, 0.0] };
    assert!((kld_gaussian_standard(&lat) - 0.5).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let lat = LatentDistribution {
            mu: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            log_var: [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)],
        };
        // Per-dimension oracle: KL of N(m, s^2) to N(0, 1) is (s^2 + m^2 - 1 - ln s^2) / 2.
        let oracle: f64 = (0..2)
            .map(|d| {
                let var = lat.log_var[d].exp();
                0.5 * (var + lat.mu[d] * lat.mu[d] - 1.0 - var.ln())
            })
            .sum();
        let kld = kld_gaussian_standard(&lat);
        assert!((kld - oracle).abs() < 1e-12);
        assert!(kld >= 0.0);
    }
}

#[test]
fn loss_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = 1e-5;
    let close = |a: f64, n: f64| (a - n).abs() <= 1e-3 * a.abs().max(n.abs()) + 1e-6;
    for _ in 0..40 {
        let n = rng.random_range(2..6);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let target = rng.random_range(0..n);
        let ce = |l: &[f64]| {
            let mut p = l.to_vec();
            softmax_in_place(&mut p);
            ce_loss(&p, n, &[target]).unwrap()
        };
        let mut p = logits.clone();
        softmax_in_place(&mut p);
        let mut g = vec![0.0; n];
        softmax_ce_grad(&p, target, 1.0, &mut g);
        for k in 0..n {
            let (mut a, mut b) = (logits.clone(), logits.clone());
            a[k] += h;
            b[k] -= h;
            assert!(close(g[k], (ce(&a) - ce(&b)) / (2.0 * h)));
        }

        let recon: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target_v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut g = vec![0.0; n];
        mse_grad(&recon, &target_v, 1.0, &mut g);
        for k in 0..n {
            let (mut a, mut b) = (recon.clone(), recon.clone());
            a[k] += h;
            b[k] -= h;
            let num = (mse_loss(&a, &target_v).unwrap() - mse_loss(&b, &target_v).unwrap()) / (2.0 * h);
            assert!(close(g[k], num));
        }

        let lat = LatentDistribution {
            mu: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            log_var: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
        };
        let (dmu, dlv) = kld_grad(&lat);
        for d in 0..2 {
            let mut a = lat;
            let mut b = lat;
            a.mu[d] += h;
            b.mu[d] -= h;
            assert!(close(dmu[d], (kld_gaussian_standard(&a) - kld_gaussian_standard(&b)) / (2.0 * h)));
            let mut a = lat;
            let mut b = lat;
            a.log_var[d] += h;
            b.log_var[d] -= h;
            assert!(close(dlv[d], (kld_gaussian_standard(&a) - kld_gaussian_standard(&b)) / (2.0 * h)));
        }
    }
}

#[test]
fn reparameterize_examples() {
    let lat = LatentDistribution { mu: [0.3, -1.2], log_var: [-80.0, -80.0] };
    let z = reparameterize(&lat, [1.5, -2.0]);
    assert!((z[0] - 0.3).abs() < 1e-12 && (z[1] + 1.2).abs() < 1e-12);
    let lat = LatentDistribution { mu: [0.3, -1.2], log_var: [1.0, 2.0] };
    assert_eq!(reparameterize(&lat, [0.0, 0.0]), lat.mu);
}

#[test]
fn reparameterize_monte_carlo_statistics() {
    let lat = LatentDistribution { mu: [1.0, 2.0], log_var: [0.0, 0.0] };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let z = reparameterize(&lat, [rng.sample(StandardNormal), rng.sample(StandardNormal)]);
        for d in 0..2 {
            sum[d] += z[d];
            sq[d] += z[d] * z[d];
        }
    }
    for d in 0..2 {
        let mean = sum[d] / n as f64;
        let var = sq[d] / n as f64 - mean * mean;
        assert!((mean - lat.mu[d]).abs() < 0.02);
        assert!((var - 1.0).abs() < 0.05);
    }
}

#[test]
fn adam_examples() {
    let mut state = AdamState::new(3, AdamConfig::default());
    let mut p = [1.0, -2.0, 0.5];
    adam_step(&mut p, &[0.0; 3], &mut state).unwrap();
    assert_eq!(p, [1.0, -2.0, 0.5]);

    let mut state = AdamState::new(1, AdamConfig::default());
    let mut p = [0.0];
    state.step(&mut p, &[1.0]).unwrap();
    // m_hat = 1, v_hat = 1 after bias correction.
    let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
    assert!((p[0] - expected).abs() < 1e-15);
    assert_eq!(state.step_count, 1);
    assert!(state.step(&mut p, &[1.0, 2.0]).is_err());
}

#[test]
fn adam_descends_quadratic() {
    let mut state = AdamState::new(1, AdamConfig { lr: 0.1, ..AdamConfig::default() });
    let mut theta = [0.0];
    for _ in 0..200 {
        let g = [2.0 * (theta[0] - 3.0)];
        state.step(&mut theta, &g).unwrap();
    }
    assert!((theta[0] - 3.0).abs() < 0.5, "theta = {}", theta[0]);
}

fn toy_training(seed: u64, steps: usize) -> (f64, f64, Vec<f64>) {
    // Logistic regression through a 2-way softmax on a separable 2-D set.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<([f64; 2], usize)> = (0..64)
        .map(|i| {
            let c = i % 2;
            let centre = if c == 0 { -1.0 } else { 1.0 };
            ([centre + rng.random_range(-0.5..0.5), centre + rng.random_range(-0.5..0.5)], c)
        })
        .collect();
    let spec = [LayerSpec::Dense { in_features: 2, out_features: 2 }];
    let seq = Sequential::new(&spec, &[2], 0).unwrap();
    let mut params = vec![0.0; seq.param_len()];
    init_layer_params(&spec[0], &mut rng, &mut params);
    let mut adam = AdamState::new(params.len(), AdamConfig { lr: 0.05, ..AdamConfig::default() });
    let mut ws = seq.workspace();
    let loss = |params: &[f64], ws: &mut Workspace| {
        let mut total = 0.0;
        for (x, y) in &data {
            seq.forward(params, x, ws).unwrap();
            let mut p = ws.output().to_vec();
            softmax_in_place(&mut p);
            total += ce_loss(&p, 2, &[*y]).unwrap();
        }
        total / data.len() as f64
    };
    let before = loss(&params, &mut ws);
    for _ in 0..steps {
        let mut grads = vec![0.0; params.len()];
        for (x, y) in &data {
            seq.forward(&params, x, &mut ws).unwrap();
            let mut p = ws.output().to_vec();
            softmax_in_place(&mut p);
            let mut g = [0.0; 2];
            softmax_ce_grad(&p, *y, 1.0 / data.len() as f64, &mut g);
            seq.backward(&params, &mut ws, &g, &mut grads).unwrap();
        }
        adam.step(&mut params, &grads).unwrap();
    }
    let after = loss(&params, &mut ws);
    (before, after, params)
}

#[test]
fn adam_halves_bce_on_separable_set() {
    let (before, after, _) = toy_training(4, 50);
    assert!(after <= 0.5 * before, "{before} -> {after}");
}

#[test]
fn training_is_bitwise_deterministic() {
    let (_, _, a) = toy_training(8, 30);
    let (_, _, b) = toy_training(8, 30);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn init_is_bounded() {
    let spec = conv1d(6, 16, 6, 2, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p = vec![1.0; spec.param_len()];
    init_layer_params(&spec, &mut rng, &mut p);
    let bound = (6.0f64 / (36.0 + 96.0)).sqrt();
    assert!(p[..spec.weight_len()].iter().all(|w| w.abs() <= bound));
    assert!(p[spec.weight_len()..].iter().all(|&b| b == 0.0));
}
