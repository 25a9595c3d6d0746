//! 3D max pooling with stride equal to the window (non-overlapping),
//! floor semantics for non-divisible extents.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_WINDOW: (usize, usize, usize) = (2, 2, 2);

/// Maximum over each window, plus the flat input index of every maximum for
/// the backward pass. Ties go to the lowest flat index (first in row-major
/// scan order).
pub fn maxpool3d(input: &Tensor, window: (usize, usize, usize)) -> Result<(Tensor, Vec<usize>)> {
    if input.rank() != 4 {
        return Err(Error::InvalidConfig(format!(
            "maxpool3d expects a rank-4 [T, H, W, C] input, got {:?}",
            input.shape()
        )));
    }
    let s = input.shape();
    let [t_in, h_in, w_in, c] = [s[0], s[1], s[2], s[3]];
    let (pt, ph, pw) = window;
    if pt == 0 || ph == 0 || pw == 0 {
        return Err(Error::InvalidConfig(format!(
            "maxpool3d window dims must be >= 1, got {window:?}"
        )));
    }
    for (axis, input_extent, win) in [
        ("time", t_in, pt),
        ("height", h_in, ph),
        ("width", w_in, pw),
    ] {
        if input_extent < win {
            return Err(Error::KernelTooLarge {
                op: "maxpool3d",
                axis,
                input: input_extent,
                kernel: win,
            });
        }
    }
    let (t_out, h_out, w_out) = (t_in / pt, h_in / ph, w_in / pw);
    let x = input.data();
    let mut out = vec![0.0; t_out * h_out * w_out * c];
    let mut argmax = vec![0usize; out.len()];
    let mut o = 0;
    for ot in 0..t_out {
        for oh in 0..h_out {
            for ow in 0..w_out {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dt in 0..pt {
                        for dh in 0..ph {
                            for dw in 0..pw {
                                let idx =
                                    (((ot * pt + dt) * h_in + oh * ph + dh) * w_in + ow * pw + dw)
                                        * c
                                        + ch;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    out[o] = best;
                    argmax[o] = best_idx;
                    o += 1;
                }
            }
        }
    }
    let out = Tensor::new(vec![t_out, h_out, w_out, c], out)?;
    Ok((out, argmax))
}

/// Route each output gradient back to the single input element that won its
/// window.
pub fn maxpool3d_backward_into(grad_out: &Tensor, argmax: &[usize], grad_input: &mut [f64]) {
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        grad_input[idx] += g;
    }
}
