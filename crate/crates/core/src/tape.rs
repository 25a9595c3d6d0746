//! Reverse-mode autodiff tape at tensor-op granularity.
//!
//! A forward pass records one node per primitive op (the node owns its
//! output value plus whatever the backward rule needs); `backward` replays
//! the nodes in exact reverse execution order, accumulating gradients into
//! every node marked as a parameter. Forward values are computed by the same
//! kernels in [`crate::ops`] that the inference paths use.

use crate::error::{Error, Result};
use crate::ops::conv::{self, Conv3dSpec};
use crate::ops::dense::{self, Activation};
use crate::ops::dropout;
use crate::ops::norm::{self, BnCache};
use crate::ops::pool;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf {
        requires_grad: bool,
    },
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Slice {
        x: usize,
        start: usize,
    },
    MatVec {
        w: usize,
        x: usize,
    },
    Dense {
        x: usize,
        w: usize,
        b: usize,
        act: Activation,
    },
    Conv3d {
        input: usize,
        weights: usize,
        bias: usize,
        spec: Conv3dSpec,
    },
    MaxPool3d {
        input: usize,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        cache: BnCache,
    },
    Dropout {
        input: usize,
        keep: Vec<bool>,
        rate: f64,
    },
    Reshape {
        input: usize,
    },
    SoftmaxXent {
        logits: usize,
        probs: Vec<f64>,
        label: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`GradTape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

impl GradTape {
    pub fn new() -> Self {
        GradTape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar convenience accessor; panics if the node is not one element.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.numel(), 1, "scalar_value on non-scalar node");
        t.data()[0]
    }

    /// Softmax probabilities stored by a [`GradTape::softmax_xent`] node.
    pub fn softmax_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record a value that does not need a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(
            value,
            Op::Leaf {
                requires_grad: false,
            },
        )
    }

    /// Record a trainable parameter; `backward` will produce its gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(
            value,
            Op::Leaf {
                requires_grad: true,
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).map(|v| v * k);
        self.push(value, Op::Scale(x.0, k))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(dense::sigmoid);
        self.push(value, Op::Sigmoid(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(value, Op::Relu(x.0))
    }

    /// Contiguous sub-vector `[start, start + len)` of a rank-1 value.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        if src.rank() != 1 || start + len > src.numel() {
            return Err(Error::InvalidConfig(format!(
                "slice [{start}, {}) out of bounds for shape {:?}",
                start + len,
                src.shape()
            )));
        }
        let value = Tensor::new(vec![len], src.data()[start..start + len].to_vec())?;
        Ok(self.push(value, Op::Slice { x: x.0, start }))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let value = dense::matvec(self.value(w), self.value(x))?;
        Ok(self.push(value, Op::MatVec { w: w.0, x: x.0 }))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
        let value = dense::dense(self.value(x), self.value(w), self.value(b), act)?;
        Ok(self.push(
            value,
            Op::Dense {
                x: x.0,
                w: w.0,
                b: b.0,
                act,
            },
        ))
    }

    pub fn conv3d(
        &mut self,
        input: Var,
        weights: Var,
        bias: Var,
        spec: &Conv3dSpec,
    ) -> Result<Var> {
        let value = conv::conv3d(
            self.value(input),
            spec,
            self.value(weights),
            self.value(bias),
        )?;
        Ok(self.push(
            value,
            Op::Conv3d {
                input: input.0,
                weights: weights.0,
                bias: bias.0,
                spec: spec.clone(),
            },
        ))
    }

    pub fn maxpool3d(&mut self, input: Var, window: (usize, usize, usize)) -> Result<Var> {
        let (value, argmax) = pool::maxpool3d(self.value(input), window)?;
        Ok(self.push(
            value,
            Op::MaxPool3d {
                input: input.0,
                argmax,
            },
        ))
    }

    /// Train-mode batch norm; returns the output var plus the batch
    /// statistics so the caller can fold them into running statistics.
    pub fn batchnorm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BnCache)> {
        let (value, cache) =
            norm::batchnorm_train(self.value(input), self.value(gamma), self.value(beta), eps)?;
        let stats = cache.clone();
        let v = self.push(
            value,
            Op::BatchNorm {
                input: input.0,
                gamma: gamma.0,
                beta: beta.0,
                cache,
            },
        );
        Ok((v, stats))
    }

    /// Dropout with a pre-drawn keep mask (so replays are deterministic).
    pub fn dropout(&mut self, input: Var, keep: Vec<bool>, rate: f64) -> Result<Var> {
        dropout::validate_rate(rate)?;
        if keep.len() != self.value(input).numel() {
            return Err(Error::InvalidConfig(format!(
                "dropout mask length {} does not match input {}",
                keep.len(),
                self.value(input).numel()
            )));
        }
        let value = dropout::dropout_apply(self.value(input), &keep, rate);
        Ok(self.push(
            value,
            Op::Dropout {
                input: input.0,
                keep,
                rate,
            },
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        Ok(self.push(value, Op::Reshape { input: input.0 }))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let numel = self.value(input).numel();
        self.reshape(input, &[numel])
    }

    /// Fused softmax + cross-entropy producing a scalar loss node.
    pub fn softmax_xent(&mut self, logits: Var, label: usize) -> Result<Var> {
        let (probs, loss) = dense::softmax_crossentropy(self.value(logits), label)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits: logits.0,
                probs: probs.into_data(),
                label,
            },
        ))
    }

    /// Reverse-mode sweep from a scalar loss. Returns one gradient tensor
    /// per parameter leaf reachable from `loss`; gradient shapes equal the
    /// parameter shapes.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_val = self.value(loss);
        if loss_val.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            debug_assert_eq!(
                g.shape(),
                self.nodes[i].value.shape(),
                "gradient shape diverged from value shape at node {i}"
            );
            match &self.nodes[i].op {
                Op::Leaf { requires_grad } => {
                    if *requires_grad {
                        grads[i] = Some(g); // keep for the caller
                    }
                    continue;
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, |dst| {
                        for (d, s) in dst.iter_mut().zip(g.data()) {
                            *d += s;
                        }
                    });
                    self.accumulate(&mut grads, *b, |dst| {
                        for (d, s) in dst.iter_mut().zip(g.data()) {
                            *d += s;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                    self.accumulate(&mut grads, *a, |dst| {
                        for ((d, s), &bx) in dst.iter_mut().zip(g.data()).zip(bv) {
                            *d += s * bx;
                        }
                    });
                    self.accumulate(&mut grads, *b, |dst| {
                        for ((d, s), &ax) in dst.iter_mut().zip(g.data()).zip(av) {
                            *d += s * ax;
                        }
                    });
                }
                Op::Scale(x, k) => {
                    self.accumulate(&mut grads, *x, |dst| {
                        for (d, s) in dst.iter_mut().zip(g.data()) {
                            *d += s * k;
                        }
                    });
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    self.accumulate(&mut grads, *x, |dst| {
                        for d in dst.iter_mut() {
                            *d += s;
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    let y = self.nodes[i].value.data();
                    self.accumulate(&mut grads, *x, |dst| {
                        for ((d, s), &yv) in dst.iter_mut().zip(g.data()).zip(y) {
                            *d += s * yv * (1.0 - yv);
                        }
                    });
                }
                Op::Tanh(x) => {
                    let y = self.nodes[i].value.data();
                    self.accumulate(&mut grads, *x, |dst| {
                        for ((d, s), &yv) in dst.iter_mut().zip(g.data()).zip(y) {
                            *d += s * (1.0 - yv * yv);
                        }
                    });
                }
                Op::Relu(x) => {
                    let y = self.nodes[i].value.data();
                    self.accumulate(&mut grads, *x, |dst| {
                        for ((d, s), &yv) in dst.iter_mut().zip(g.data()).zip(y) {
                            if yv > 0.0 {
                                *d += s;
                            }
                        }
                    });
                }
                Op::Slice { x, start } => {
                    self.accumulate(&mut grads, *x, |dst| {
                        for (d, s) in dst[*start..*start + g.numel()].iter_mut().zip(g.data()) {
                            *d += s;
                        }
                    });
                }
                Op::MatVec { w, x } => {
                    let (wv, xv) = (&self.nodes[*w].value, &self.nodes[*x].value);
                    let mut gw = vec![0.0; wv.numel()];
                    let mut gx = vec![0.0; xv.numel()];
                    dense::matvec_backward_into(&g, wv, xv, &mut gw, &mut gx);
                    self.accumulate_vec(&mut grads, *w, &gw);
                    self.accumulate_vec(&mut grads, *x, &gx);
                }
                Op::Dense { x, w, b, act } => {
                    let (xv, wv) = (&self.nodes[*x].value, &self.nodes[*w].value);
                    let out = &self.nodes[i].value;
                    let mut gx = vec![0.0; xv.numel()];
                    let mut gw = vec![0.0; wv.numel()];
                    let mut gb = vec![0.0; self.nodes[*b].value.numel()];
                    dense::dense_backward_into(&g, xv, wv, out, *act, &mut gx, &mut gw, &mut gb);
                    self.accumulate_vec(&mut grads, *x, &gx);
                    self.accumulate_vec(&mut grads, *w, &gw);
                    self.accumulate_vec(&mut grads, *b, &gb);
                }
                Op::Conv3d {
                    input,
                    weights,
                    bias,
                    spec,
                } => {
                    let (iv, wv) = (&self.nodes[*input].value, &self.nodes[*weights].value);
                    let mut gi = vec![0.0; iv.numel()];
                    let mut gw = vec![0.0; wv.numel()];
                    let mut gb = vec![0.0; self.nodes[*bias].value.numel()];
                    conv::conv3d_backward_into(&g, iv, spec, wv, &mut gi, &mut gw, &mut gb);
                    self.accumulate_vec(&mut grads, *input, &gi);
                    self.accumulate_vec(&mut grads, *weights, &gw);
                    self.accumulate_vec(&mut grads, *bias, &gb);
                }
                Op::MaxPool3d { input, argmax } => {
                    self.accumulate(&mut grads, *input, |dst| {
                        pool::maxpool3d_backward_into(&g, argmax, dst);
                    });
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    cache,
                } => {
                    let (iv, gv) = (&self.nodes[*input].value, &self.nodes[*gamma].value);
                    let mut gi = vec![0.0; iv.numel()];
                    let mut gg = vec![0.0; gv.numel()];
                    let mut gb = vec![0.0; self.nodes[*beta].value.numel()];
                    norm::batchnorm_train_backward_into(
                        &g, iv, gv, cache, &mut gi, &mut gg, &mut gb,
                    );
                    self.accumulate_vec(&mut grads, *input, &gi);
                    self.accumulate_vec(&mut grads, *gamma, &gg);
                    self.accumulate_vec(&mut grads, *beta, &gb);
                }
                Op::Dropout { input, keep, rate } => {
                    self.accumulate(&mut grads, *input, |dst| {
                        dropout::dropout_backward_into(&g, keep, *rate, dst);
                    });
                }
                Op::Reshape { input } => {
                    self.accumulate(&mut grads, *input, |dst| {
                        for (d, s) in dst.iter_mut().zip(g.data()) {
                            *d += s;
                        }
                    });
                }
                Op::SoftmaxXent {
                    logits,
                    probs,
                    label,
                } => {
                    let s = g.data()[0];
                    self.accumulate(&mut grads, *logits, |dst| {
                        for (c, (d, &p)) in dst.iter_mut().zip(probs).enumerate() {
                            let one_hot = if c == *label { 1.0 } else { 0.0 };
                            *d += s * (p - one_hot);
                        }
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: usize, f: impl FnOnce(&mut [f64])) {
        let slot = &mut grads[target];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[target].value.shape()));
        }
        f(slot.as_mut().expect("just initialized").data_mut());
    }

    fn accumulate_vec(&self, grads: &mut [Option<Tensor>], target: usize, delta: &[f64]) {
        self.accumulate(grads, target, |dst| {
            for (d, s) in dst.iter_mut().zip(delta) {
                *d += s;
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn loss_sum_has_unit_gradients() {
        let mut tape = GradTape::new();
        let x = tape.param(Tensor::uniform(&[5], -2.0, 2.0, &mut Rng::seed_from(1)));
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 5]);
    }

    #[test]
    fn loss_half_sum_squares_gradient_is_x() {
        let mut tape = GradTape::new();
        let values = Tensor::uniform(&[7], -3.0, 3.0, &mut Rng::seed_from(2));
        let x = tape.param(values.clone());
        let sq = tape.mul(x, x).unwrap();
        let total = tape.sum(sq);
        let loss = tape.scale(total, 0.5);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().max_abs_diff(&values) < 1e-15);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = GradTape::new();
        let x = tape.param(Tensor::zeros(&[3]));
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn gradient_shapes_match_parameter_shapes() {
        let mut tape = GradTape::new();
        let w = tape.param(Tensor::uniform(&[4, 3], -1.0, 1.0, &mut Rng::seed_from(3)));
        let x = tape.param(Tensor::uniform(&[3], -1.0, 1.0, &mut Rng::seed_from(4)));
        let y = tape.matvec(w, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().shape(), &[4, 3]);
        assert_eq!(grads.get(x).unwrap().shape(), &[3]);
    }

    #[test]
    fn reused_var_accumulates_gradient() {
        // loss = sum(x) + sum(x) => grad = 2 everywhere.
        let mut tape = GradTape::new();
        let x = tape.param(Tensor::zeros(&[4]));
        let a = tape.sum(x);
        let b = tape.sum(x);
        let loss = tape.add(a, b).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0; 4]);
    }

    #[test]
    fn inputs_do_not_receive_gradients() {
        let mut tape = GradTape::new();
        let x = tape.input(Tensor::zeros(&[3]));
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
    }
}
