//! Sliding windows over a flat frame stream.

use crate::data::landmarks::{frames_to_tensor, LandmarkFrame};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Windows of `len` frames starting at 0, stride, 2*stride, ...;
/// `floor((N - len) / stride) + 1` windows when N >= len, else none.
pub fn window_stream(frames: &[LandmarkFrame], len: usize, stride: usize) -> Result<Vec<Tensor>> {
    if len == 0 || stride == 0 {
        return Err(Error::InvalidConfig(format!(
            "window length and stride must be >= 1, got len={len} stride={stride}"
        )));
    }
    let n = frames.len();
    if n < len {
        return Ok(Vec::new());
    }
    let count = (n - len) / stride + 1;
    Ok((0..count)
        .map(|w| frames_to_tensor(&frames[w * stride..w * stride + len]))
        .collect())
}
