//! Inverted dropout: train mode zeroes elements with probability `rate` and
//! scales survivors by 1/(1-rate), so inference is the identity.

use crate::error::{Error, Result};
use crate::ops::norm::Mode;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub fn validate_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) || !rate.is_finite() {
        return Err(Error::InvalidDropoutRate(rate));
    }
    Ok(())
}

/// Draw a keep mask: `true` keeps the element (probability `1 - rate`).
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Vec<bool> {
    (0..len).map(|_| rng.uniform() >= rate).collect()
}

/// Apply a fixed keep mask with inverted scaling.
pub fn dropout_apply(input: &Tensor, keep: &[bool], rate: f64) -> Tensor {
    let scale = 1.0 / (1.0 - rate);
    Tensor::from_fn(input.shape(), |i| {
        if keep[i] {
            input.data()[i] * scale
        } else {
            0.0
        }
    })
}

/// The stateful entry point: identity at inference, masked and rescaled in
/// training, deterministic given the generator state.
pub fn dropout(input: &Tensor, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
    validate_rate(rate)?;
    match mode {
        Mode::Infer => Ok(input.clone()),
        Mode::Train => {
            if rate == 0.0 {
                return Ok(input.clone());
            }
            let keep = dropout_mask(input.numel(), rate, rng);
            Ok(dropout_apply(input, &keep, rate))
        }
    }
}

pub fn dropout_backward_into(grad_out: &Tensor, keep: &[bool], rate: f64, grad_input: &mut [f64]) {
    let scale = 1.0 / (1.0 - rate);
    for (i, g) in grad_out.data().iter().enumerate() {
        if keep[i] {
            grad_input[i] += g * scale;
        }
    }
}
