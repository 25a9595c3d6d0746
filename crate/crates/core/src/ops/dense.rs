//! Fully connected layer, pointwise activations, and softmax cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
    Tanh,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn apply_activation(act: Activation, x: f64) -> f64 {
    match act {
        Activation::None => x,
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Sigmoid => sigmoid(x),
        Activation::Tanh => x.tanh(),
    }
}

/// Derivative of the activation expressed in terms of its *output* value.
/// Holds for the four activations used here, which avoids saving
/// pre-activation values for the backward pass.
pub fn activation_grad_from_output(act: Activation, y: f64) -> f64 {
    match act {
        Activation::None => 1.0,
        Activation::Relu => {
            if y > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sigmoid => y * (1.0 - y),
        Activation::Tanh => 1.0 - y * y,
    }
}

fn dense_dims(input: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if w.rank() != 2 {
        return Err(Error::InvalidConfig(format!(
            "dense weights must be rank 2 [in, out], got {:?}",
            w.shape()
        )));
    }
    let (w_in, w_out) = (w.shape()[0], w.shape()[1]);
    let (rows, in_dim) = match input.rank() {
        1 => (1, input.shape()[0]),
        2 => (input.shape()[0], input.shape()[1]),
        _ => {
            return Err(Error::InvalidConfig(format!(
                "dense input must be rank 1 or 2, got {:?}",
                input.shape()
            )))
        }
    };
    if in_dim != w_in {
        return Err(Error::DimMismatch {
            op: "dense",
            axis: "input features",
            expected: w_in,
            got: in_dim,
        });
    }
    if b.rank() != 1 || b.shape()[0] != w_out {
        return Err(Error::DimMismatch {
            op: "dense",
            axis: "bias",
            expected: w_out,
            got: b.numel(),
        });
    }
    Ok((rows, w_in, w_out))
}

/// `activation(input . W + b)` with `input` of shape `[in]` or `[n, in]`,
/// `W` of shape `[in, out]`, `b` of shape `[out]`.
pub fn dense(input: &Tensor, w: &Tensor, b: &Tensor, act: Activation) -> Result<Tensor> {
    let (rows, in_dim, out_dim) = dense_dims(input, w, b)?;
    let x = input.data();
    let wd = w.data();
    let bd = b.data();
    let mut out = vec![0.0; rows * out_dim];
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let or = &mut out[r * out_dim..(r + 1) * out_dim];
        or.copy_from_slice(bd);
        for (i, &xi) in xr.iter().enumerate() {
            let wrow = &wd[i * out_dim..(i + 1) * out_dim];
            for (o, &wv) in or.iter_mut().zip(wrow) {
                *o += xi * wv;
            }
        }
        for o in or.iter_mut() {
            *o = apply_activation(act, *o);
        }
    }
    let shape = if input.rank() == 1 {
        vec![out_dim]
    } else {
        vec![rows, out_dim]
    };
    Tensor::new(shape, out)
}

/// Accumulate gradients for `dense`. `output` is the forward result (used to
/// differentiate the activation), `grad_out` matches its shape.
pub fn dense_backward_into(
    grad_out: &Tensor,
    input: &Tensor,
    w: &Tensor,
    output: &Tensor,
    act: Activation,
    grad_input: &mut [f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let out_dim = w.shape()[1];
    let in_dim = w.shape()[0];
    let rows = input.numel() / in_dim;
    let x = input.data();
    let wd = w.data();
    let y = output.data();
    let go = grad_out.data();
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let yr = &y[r * out_dim..(r + 1) * out_dim];
        let gr = &go[r * out_dim..(r + 1) * out_dim];
        // Gradient at the pre-activation.
        let gpre: Vec<f64> = gr
            .iter()
            .zip(yr)
            .map(|(&g, &yv)| g * activation_grad_from_output(act, yv))
            .collect();
        for (j, &g) in gpre.iter().enumerate() {
            grad_b[j] += g;
        }
        let gir = &mut grad_input[r * in_dim..(r + 1) * in_dim];
        for (i, &xi) in xr.iter().enumerate() {
            let wrow = &wd[i * out_dim..(i + 1) * out_dim];
            let gwrow = &mut grad_w[i * out_dim..(i + 1) * out_dim];
            let mut acc = 0.0;
            for j in 0..out_dim {
                acc += gpre[j] * wrow[j];
                gwrow[j] += gpre[j] * xi;
            }
            gir[i] += acc;
        }
    }
}

/// `W . x` for `W` of shape `[m, n]` and `x` of shape `[n]`.
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 || x.rank() != 1 {
        return Err(Error::InvalidConfig(format!(
            "matvec expects [m, n] and [n], got {:?} and {:?}",
            w.shape(),
            x.shape()
        )));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    if x.shape()[0] != n {
        return Err(Error::DimMismatch {
            op: "matvec",
            axis: "columns",
            expected: n,
            got: x.shape()[0],
        });
    }
    let wd = w.data();
    let xd = x.data();
    let out: Vec<f64> = (0..m)
        .map(|r| {
            wd[r * n..(r + 1) * n]
                .iter()
                .zip(xd)
                .map(|(&a, &b)| a * b)
                .sum()
        })
        .collect();
    Tensor::new(vec![m], out)
}

pub fn matvec_backward_into(
    grad_out: &Tensor,
    w: &Tensor,
    x: &Tensor,
    grad_w: &mut [f64],
    grad_x: &mut [f64],
) {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let go = grad_out.data();
    let wd = w.data();
    let xd = x.data();
    for r in 0..m {
        let g = go[r];
        let wrow = &wd[r * n..(r + 1) * n];
        let gwrow = &mut grad_w[r * n..(r + 1) * n];
        for i in 0..n {
            gwrow[i] += g * xd[i];
            grad_x[i] += g * wrow[i];
        }
    }
    debug_assert_eq!(go.len(), m);
}

/// Numerically stable softmax over a rank-1 logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Softmax probabilities plus cross-entropy loss against `label`.
pub fn softmax_crossentropy(logits: &Tensor, label: usize) -> Result<(Tensor, f64)> {
    if logits.rank() != 1 {
        return Err(Error::InvalidConfig(format!(
            "softmax_crossentropy expects rank-1 logits, got {:?}",
            logits.shape()
        )));
    }
    let classes = logits.shape()[0];
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let probs = softmax(logits.data());
    let loss = -probs[label].ln();
    Ok((Tensor::new(vec![classes], probs)?, loss))
}
