//! Independent brute-force oracles for the layer primitives. Each oracle is
//! written as plain nested loops over multi-dimensional indices, sharing no
//! code with the production kernels.

use gesturebench_core::lstm::{LstmConfig, LstmModel};
use gesturebench_core::ops::conv::{conv3d, Conv3dSpec, Padding};
use gesturebench_core::ops::dense::{dense, softmax_crossentropy, Activation};
use gesturebench_core::ops::pool::maxpool3d;
use gesturebench_core::rng::Rng;
use gesturebench_core::tensor::Tensor;

fn at4(shape: &[usize], i: [usize; 4]) -> usize {
    ((i[0] * shape[1] + i[1]) * shape[2] + i[2]) * shape[3] + i[3]
}

fn at5(shape: &[usize], i: [usize; 5]) -> usize {
    (((i[0] * shape[1] + i[1]) * shape[2] + i[2]) * shape[3] + i[3]) * shape[4] + i[4]
}

/// Six-nested-loop convolution oracle.
fn conv3d_oracle(input: &Tensor, spec: &Conv3dSpec, weights: &Tensor, bias: &Tensor) -> Tensor {
    let is = input.shape();
    let (kt, kh, kw) = spec.kernel;
    let (st, sh, sw) = spec.stride;
    let out_dims = [
        (is[0] - kt) / st + 1,
        (is[1] - kh) / sh + 1,
        (is[2] - kw) / sw + 1,
        spec.out_channels,
    ];
    let ws = weights.shape();
    let mut out = Tensor::zeros(&out_dims);
    for ot in 0..out_dims[0] {
        for oh in 0..out_dims[1] {
            for ow in 0..out_dims[2] {
                for k in 0..out_dims[3] {
                    let mut acc = bias.data()[k];
                    for dt in 0..kt {
                        for dh in 0..kh {
                            for dw in 0..kw {
                                for ci in 0..spec.in_channels {
                                    let x = input.data()
                                        [at4(is, [ot * st + dt, oh * sh + dh, ow * sw + dw, ci])];
                                    let w = weights.data()[at5(ws, [k, dt, dh, dw, ci])];
                                    acc += x * w;
                                }
                            }
                        }
                    }
                    let o = at4(&out_dims, [ot, oh, ow, k]);
                    out.data_mut()[o] = acc;
                }
            }
        }
    }
    out
}

/// Brute-force window-max oracle.
fn maxpool3d_oracle(input: &Tensor, window: (usize, usize, usize)) -> Tensor {
    let is = input.shape();
    let (pt, ph, pw) = window;
    let out_dims = [is[0] / pt, is[1] / ph, is[2] / pw, is[3]];
    let mut out = Tensor::zeros(&out_dims);
    for ot in 0..out_dims[0] {
        for oh in 0..out_dims[1] {
            for ow in 0..out_dims[2] {
                for c in 0..out_dims[3] {
                    let mut best = f64::NEG_INFINITY;
                    for dt in 0..pt {
                        for dh in 0..ph {
                            for dw in 0..pw {
                                let v = input.data()
                                    [at4(is, [ot * pt + dt, oh * ph + dh, ow * pw + dw, c])];
                                best = best.max(v);
                            }
                        }
                    }
                    let o = at4(&out_dims, [ot, oh, ow, c]);
                    out.data_mut()[o] = best;
                }
            }
        }
    }
    out
}

/// Naive triple-loop matmul-plus-bias oracle (activation: none).
fn dense_oracle(input: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let rows = if input.rank() == 1 {
        1
    } else {
        input.shape()[0]
    };
    let in_dim = *input.shape().last().unwrap();
    let out_dim = w.shape()[1];
    let mut out = vec![0.0; rows * out_dim];
    for r in 0..rows {
        for j in 0..out_dim {
            let mut acc = 0.0;
            for i in 0..in_dim {
                acc += input.data()[r * in_dim + i] * w.data()[i * out_dim + j];
            }
            out[r * out_dim + j] = acc + b.data()[j];
        }
    }
    let shape = if input.rank() == 1 {
        vec![out_dim]
    } else {
        vec![rows, out_dim]
    };
    Tensor::new(shape, out).unwrap()
}

fn spec_for(rng: &mut Rng, c_in: usize, c_out: usize, max_k: usize) -> Conv3dSpec {
    Conv3dSpec {
        in_channels: c_in,
        out_channels: c_out,
        kernel: (
            1 + rng.below(max_k),
            1 + rng.below(max_k),
            1 + rng.below(max_k),
        ),
        stride: (1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2)),
        padding: Padding::Valid,
    }
}

#[test]
fn conv3d_matches_naive_oracle_over_random_instances() {
    for seed in 0..60u64 {
        let mut rng = Rng::seed_from(seed);
        let c_in = 1 + rng.below(3);
        let c_out = 1 + rng.below(3);
        let spec = spec_for(&mut rng, c_in, c_out, 3);
        let (kt, kh, kw) = spec.kernel;
        let dims = [
            kt + rng.below(6 - kt.min(5)) + rng.below(3),
            kh + rng.below(6 - kh.min(5)) + rng.below(3),
            kw + rng.below(6 - kw.min(5)) + rng.below(3),
            c_in,
        ];
        let input = Tensor::uniform(&dims, -2.0, 2.0, &mut rng);
        let weights = Tensor::uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng);
        let bias = Tensor::uniform(&[c_out], -0.5, 0.5, &mut rng);
        let got = conv3d(&input, &spec, &weights, &bias).unwrap();
        let expect = conv3d_oracle(&input, &spec, &weights, &bias);
        assert_eq!(got.shape(), expect.shape(), "seed {seed}");
        assert!(
            got.max_abs_diff(&expect) < 1e-9,
            "seed {seed}: max diff {}",
            got.max_abs_diff(&expect)
        );
    }
}

#[test]
fn conv3d_spec_instance_seed_7() {
    // random input 5x6x6x2, 3 kernels 3x3x3, stride 1: oracle within 1e-9.
    let mut rng = Rng::seed_from(7);
    let spec = Conv3dSpec::new(2, 3);
    let input = Tensor::uniform(&[5, 6, 6, 2], -1.0, 1.0, &mut rng);
    let weights = Tensor::uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng);
    let bias = Tensor::uniform(&[3], -1.0, 1.0, &mut rng);
    let got = conv3d(&input, &spec, &weights, &bias).unwrap();
    let expect = conv3d_oracle(&input, &spec, &weights, &bias);
    assert_eq!(got.shape(), &[3, 4, 4, 3]);
    assert!(got.max_abs_diff(&expect) < 1e-9);
}

#[test]
fn maxpool3d_matches_bruteforce_exactly() {
    for seed in 0..60u64 {
        let mut rng = Rng::seed_from(1000 + seed);
        let window = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
        let dims = [
            window.0 * (1 + rng.below(3)) + rng.below(2),
            window.1 * (1 + rng.below(3)) + rng.below(2),
            window.2 * (1 + rng.below(3)) + rng.below(2),
            1 + rng.below(3),
        ];
        let input = Tensor::uniform(&dims, -5.0, 5.0, &mut rng);
        let (got, argmax) = maxpool3d(&input, window).unwrap();
        let expect = maxpool3d_oracle(&input, window);
        assert_eq!(got, expect, "seed {seed}");
        // Every argmax index holds exactly the output value.
        for (o, &idx) in got.data().iter().zip(&argmax) {
            assert_eq!(*o, input.data()[idx], "seed {seed}");
        }
    }
}

#[test]
fn maxpool3d_random_6x6x6x2_window2_exact() {
    let mut rng = Rng::seed_from(2024);
    let input = Tensor::uniform(&[6, 6, 6, 2], -3.0, 3.0, &mut rng);
    let (got, _) = maxpool3d(&input, (2, 2, 2)).unwrap();
    assert_eq!(got, maxpool3d_oracle(&input, (2, 2, 2)));
}

#[test]
fn dense_matches_triple_loop_oracle() {
    for seed in 0..60u64 {
        let mut rng = Rng::seed_from(2000 + seed);
        let rows = 1 + rng.below(6);
        let in_dim = 1 + rng.below(6);
        let out_dim = 1 + rng.below(6);
        let input = if rng.bernoulli(0.5) {
            Tensor::uniform(&[in_dim], -2.0, 2.0, &mut rng)
        } else {
            Tensor::uniform(&[rows, in_dim], -2.0, 2.0, &mut rng)
        };
        let w = Tensor::uniform(&[in_dim, out_dim], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[out_dim], -1.0, 1.0, &mut rng);
        let got = dense(&input, &w, &b, Activation::None).unwrap();
        let expect = dense_oracle(&input, &w, &b);
        assert!(got.max_abs_diff(&expect) < 1e-9, "seed {seed}");
    }
}

#[test]
fn dense_spec_instance_seed_11_within_1em12() {
    let mut rng = Rng::seed_from(11);
    let input = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform(&[4, 2], -1.0, 1.0, &mut rng);
    let b = Tensor::uniform(&[2], -1.0, 1.0, &mut rng);
    let got = dense(&input, &w, &b, Activation::None).unwrap();
    let expect = dense_oracle(&input, &w, &b);
    assert!(got.max_abs_diff(&expect) < 1e-12);
}

/// Scalar (non-tensor) LSTM cell recomputation: gates computed one scalar at
/// a time straight from the weight rows.
fn lstm_cell_oracle(
    w: &[f64],
    u: &[f64],
    b: &[f64],
    hidden: usize,
    input: usize,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let gate_pre = |gate: usize, k: usize| -> f64 {
        let row = gate * hidden + k;
        let mut acc = 0.0;
        for i in 0..input {
            acc += w[row * input + i] * x[i];
        }
        let mut acc_u = 0.0;
        for j in 0..hidden {
            acc_u += u[row * hidden + j] * h_prev[j];
        }
        acc + acc_u + b[row]
    };
    let mut h_t = vec![0.0; hidden];
    let mut c_t = vec![0.0; hidden];
    for k in 0..hidden {
        let i_gate = sig(gate_pre(0, k));
        let f_gate = sig(gate_pre(1, k));
        let g_gate = gate_pre(2, k).tanh();
        let o_gate = sig(gate_pre(3, k));
        c_t[k] = f_gate * c_prev[k] + i_gate * g_gate;
        h_t[k] = o_gate * c_t[k].tanh();
    }
    (h_t, c_t)
}

#[test]
fn lstm_cell_matches_scalar_oracle_over_20_seeds() {
    for seed in 0..20u64 {
        let mut rng = Rng::seed_from(3000 + seed);
        let hidden = 1 + rng.below(6);
        let input = 1 + rng.below(6);
        let config = LstmConfig {
            input_size: input,
            hidden_sizes: vec![hidden],
            dropout_rate: 0.0,
            dense_size: 2,
            num_classes: 2,
        };
        let model = LstmModel::init(config, seed * 17 + 5).unwrap();
        let layer = &model.params.layers[0];
        let x: Vec<f64> = (0..input).map(|_| rng.range(-2.0, 2.0)).collect();
        let h_prev: Vec<f64> = (0..hidden).map(|_| rng.range(-0.9, 0.9)).collect();
        let c_prev: Vec<f64> = (0..hidden).map(|_| rng.range(-2.0, 2.0)).collect();

        let (h, c) = LstmModel::cell_step(layer, &x, &h_prev, &c_prev);
        let (h_ref, c_ref) = lstm_cell_oracle(
            layer.w.data(),
            layer.u.data(),
            layer.b.data(),
            hidden,
            input,
            &x,
            &h_prev,
            &c_prev,
        );
        for (a, b) in h.iter().zip(&h_ref) {
            assert!((a - b).abs() < 1e-12, "seed {seed}: h {a} vs {b}");
        }
        for (a, b) in c.iter().zip(&c_ref) {
            assert!((a - b).abs() < 1e-12, "seed {seed}: c {a} vs {b}");
        }
        for v in &h {
            assert!(v.abs() < 1.0, "seed {seed}: |h| = {v}");
        }
    }
}

#[test]
fn lstm_cell_spec_instance_h3_in2_seed5() {
    let mut rng = Rng::seed_from(5);
    let config = LstmConfig {
        input_size: 2,
        hidden_sizes: vec![3],
        dropout_rate: 0.0,
        dense_size: 2,
        num_classes: 2,
    };
    let model = LstmModel::init(config, 5).unwrap();
    let layer = &model.params.layers[0];
    let x = [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)];
    let h_prev = [
        rng.range(-0.5, 0.5),
        rng.range(-0.5, 0.5),
        rng.range(-0.5, 0.5),
    ];
    let c_prev = [
        rng.range(-1.0, 1.0),
        rng.range(-1.0, 1.0),
        rng.range(-1.0, 1.0),
    ];
    let (h, c) = LstmModel::cell_step(layer, &x, &h_prev, &c_prev);
    let (h_ref, c_ref) = lstm_cell_oracle(
        layer.w.data(),
        layer.u.data(),
        layer.b.data(),
        3,
        2,
        &x,
        &h_prev,
        &c_prev,
    );
    for (a, b) in h.iter().zip(&h_ref).chain(c.iter().zip(&c_ref)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn softmax_crossentropy_scalar_recomputation() {
    // Against a direct high-precision recomputation without the max shift
    // (safe at these magnitudes).
    let mut rng = Rng::seed_from(4000);
    for _ in 0..50 {
        let c = 2 + rng.below(10);
        let logits = Tensor::uniform(&[c], -3.0, 3.0, &mut rng);
        let label = rng.below(c);
        let (probs, loss) = softmax_crossentropy(&logits, label).unwrap();
        let sum: f64 = logits.data().iter().map(|&v| v.exp()).sum();
        for (i, &p) in probs.data().iter().enumerate() {
            let expect = logits.data()[i].exp() / sum;
            assert!((p - expect).abs() < 1e-14);
        }
        let expect_loss = -(logits.data()[label].exp() / sum).ln();
        assert!((loss - expect_loss).abs() < 1e-12);
        let total: f64 = probs.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
